//! Tube-shaped anatomical structure estimation from weighted 3D point
//! clouds: principal curve fitting, local cross sections, tube assembly,
//! intensity profiles, and simulation-based validation.

mod cli;
pub mod curve;
pub mod error;
pub mod geom;
pub mod io;
pub mod profile;
pub mod section;
pub mod sim;
pub mod spline;
pub mod tube;

pub use error::{Error, Result};
pub use geom::{Ellipse2D, Point3, PointCloud, Rotation3};

/// CLI entry point; returns the process exit code.
pub fn run() -> i32 {
    cli::run()
}
