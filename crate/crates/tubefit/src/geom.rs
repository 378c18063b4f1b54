//! Shared domain types and geometric primitives.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centralized geometric tolerances.
pub mod tol {
    /// Orthogonality and determinant tolerance for rotation matrices.
    pub const ROTATION: f64 = 1e-10;
    /// Allowed deviation from unit norm for tangent inputs.
    pub const UNIT_NORM: f64 = 1e-8;
    /// Threshold below which a tangent is treated as antipodal to +z.
    pub const ANTIPODAL: f64 = 1e-9;
    /// Gradient norm below which a tangent is singular.
    pub const SINGULAR_GRADIENT: f64 = 1e-10;
    /// Smallest admissible covariance eigenvalue.
    pub const COVARIANCE_EIGENVALUE: f64 = 1e-12;
}

/// A point in 3D image space (voxel-lattice or millimeter units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn coords(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_coords(v: Vector3<f64>) -> Self {
        Point3::new(v.x, v.y, v.z)
    }

    pub fn sub(&self, other: &Point3) -> Vector3<f64> {
        self.coords() - other.coords()
    }

    pub fn add(&self, v: Vector3<f64>) -> Point3 {
        Point3::from_coords(self.coords() + v)
    }

    pub fn dist(&self, other: &Point3) -> f64 {
        self.sub(other).norm()
    }
}

/// An ordered collection of 3D points with optional nonnegative intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
    intensities: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, intensities: Option<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite point ({}, {}, {})",
                p.x, p.y, p.z
            )));
        }
        if let Some(ref c) = intensities {
            if c.len() != points.len() {
                return Err(Error::Input(format!(
                    "{} intensities for {} points",
                    c.len(),
                    points.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Input(
                    "intensities must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(PointCloud {
            points,
            intensities,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn intensities(&self) -> Option<&[f64]> {
        self.intensities.as_deref()
    }

    /// Subset of the cloud at the given indices, keeping intensities aligned.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let intensities = self
            .intensities
            .as_ref()
            .map(|c| indices.iter().map(|&i| c[i]).collect());
        PointCloud::new(points, intensities)
    }
}

/// A proper rotation (orthogonal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation3 {
    matrix: Matrix3<f64>,
}

impl Rotation3 {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let gram = matrix.transpose() * matrix;
        let id = Matrix3::identity();
        let max_dev = (gram - id).abs().max();
        if max_dev > tol::ROTATION {
            return Err(Error::Precondition(format!(
                "matrix is not orthogonal (max |R'R - I| = {max_dev:.3e})"
            )));
        }
        let det = matrix.determinant();
        if (det - 1.0).abs() > tol::ROTATION {
            return Err(Error::Precondition(format!(
                "matrix determinant {det} is not +1"
            )));
        }
        Ok(Rotation3 { matrix })
    }

    pub fn identity() -> Self {
        Rotation3 {
            matrix: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn apply(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.matrix * v
    }

    /// The inverse rotation (transpose).
    pub fn inverse(&self) -> Rotation3 {
        Rotation3 {
            matrix: self.matrix.transpose(),
        }
    }
}

/// The minimal rotation taking a unit tangent onto +z.
///
/// The rotation axis is `tangent x z`; when the tangent is antipodal to +z
/// the axis is undefined and a fixed rotation of pi about the x-axis is used
/// so results stay deterministic.
pub fn minimal_rotation_to_z(tangent: Vector3<f64>) -> Result<Rotation3> {
    let norm = tangent.norm();
    if (norm - 1.0).abs() > tol::UNIT_NORM {
        return Err(Error::Precondition(format!(
            "tangent norm {norm} is not 1"
        )));
    }
    let z = Vector3::z();
    let cos = tangent.dot(&z);
    if cos < -1.0 + tol::ANTIPODAL {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        return Rotation3::new(m);
    }
    if cos > 1.0 - tol::ANTIPODAL {
        return Ok(Rotation3::identity());
    }
    let axis = tangent.cross(&z).normalize();
    let sin = tangent.cross(&z).norm();
    // Rodrigues: R = I + sin K + (1 - cos) K^2 with K the cross-product matrix.
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    let m = Matrix3::identity() + k * sin + k * k * (1.0 - cos);
    Rotation3::new(m)
}

/// An ellipse in a 2D plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse2D {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis in radians, reduced to [0, pi).
    pub orientation: f64,
}

impl Ellipse2D {
    pub fn new(center: [f64; 2], semi_major: f64, semi_minor: f64, orientation: f64) -> Result<Self> {
        if !(semi_minor > 0.0 && semi_major >= semi_minor) {
            return Err(Error::Precondition(format!(
                "ellipse axes must satisfy A >= B > 0, got A = {semi_major}, B = {semi_minor}"
            )));
        }
        let mut o = orientation.rem_euclid(std::f64::consts::PI);
        if o >= std::f64::consts::PI {
            o = 0.0;
        }
        Ok(Ellipse2D {
            center,
            semi_major,
            semi_minor,
            orientation: o,
        })
    }

    pub fn eccentricity(&self) -> f64 {
        let a2 = self.semi_major * self.semi_major;
        let b2 = self.semi_minor * self.semi_minor;
        ((a2 - b2) / a2).sqrt()
    }

    /// Membership test in the ellipse's own plane.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let c = self.orientation.cos();
        let s = self.orientation.sin();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2) <= 1.0
    }
}

/// Area pi * A * B of an ellipse.
pub fn ellipse_area(e: &Ellipse2D) -> f64 {
    std::f64::consts::PI * e.semi_major * e.semi_minor
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn rotation_of_z_is_identity() {
        let r = minimal_rotation_to_z(Vector3::z()).unwrap();
        assert_relative_eq!(*r.matrix(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_of_x_axis_swaps_to_z() {
        let r = minimal_rotation_to_z(Vector3::x()).unwrap();
        let img = r.apply(Vector3::x());
        assert_relative_eq!(img, Vector3::z(), epsilon = 1e-10);
    }

    #[test]
    fn rotation_of_diagonal_maps_to_z() {
        let t = Vector3::new(1.0, 1.0, 1.0).normalize();
        let r = minimal_rotation_to_z(t).unwrap();
        // Oracle: Rodrigues formula evaluated independently.
        let axis = t.cross(&Vector3::z()).normalize();
        let theta = t.dot(&Vector3::z()).acos();
        let rodrigues = |v: Vector3<f64>| {
            v * theta.cos() + axis.cross(&v) * theta.sin() + axis * axis.dot(&v) * (1.0 - theta.cos())
        };
        for v in [Vector3::x(), Vector3::y(), t] {
            assert_relative_eq!(r.apply(v), rodrigues(v), epsilon = 1e-10);
        }
        assert_relative_eq!(r.apply(t), Vector3::z(), epsilon = 1e-10);
        assert_relative_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn rotation_of_non_unit_vector_is_rejected() {
        assert!(minimal_rotation_to_z(Vector3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn antipodal_tangent_uses_fixed_rotation() {
        let r = minimal_rotation_to_z(-Vector3::z()).unwrap();
        assert_relative_eq!(r.apply(-Vector3::z()), Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(r.apply(Vector3::x()), Vector3::x(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_invariants_hold_for_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let t = random_unit(&mut rng);
            let r = minimal_rotation_to_z(t).unwrap();
            let img = r.apply(t);
            assert!((img - Vector3::z()).norm() < 1e-9, "tangent {t:?} not mapped to z");
        }
    }

    #[test]
    fn rotation_is_continuous_away_from_antipode() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2_000 {
            let t = random_unit(&mut rng);
            if (t + Vector3::z()).norm() < 1e-3 {
                continue;
            }
            let mut d = random_unit(&mut rng) * 1e-7;
            let t2 = (t + d).normalize();
            d = t2 - t;
            if d.norm() >= 1e-6 {
                continue;
            }
            let r1 = minimal_rotation_to_z(t).unwrap();
            let r2 = minimal_rotation_to_z(t2).unwrap();
            let dev = (r1.matrix() - r2.matrix()).abs().max();
            assert!(dev < 1e-4, "rotation jump {dev} for nearby tangents");
        }
    }

    #[test]
    fn ellipse_area_values() {
        let pi = std::f64::consts::PI;
        let unit = Ellipse2D::new([0.0, 0.0], 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(ellipse_area(&unit), pi, epsilon = 1e-12);
        let e2 = Ellipse2D::new([0.0, 0.0], 2.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(ellipse_area(&e2), 2.0 * pi, epsilon = 1e-12);
        let e4 = Ellipse2D::new([0.0, 0.0], 4.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(ellipse_area(&e4), 4.0 * pi, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_area_ignores_center_and_orientation() {
        let a = Ellipse2D::new([0.0, 0.0], 3.0, 1.5, 0.0).unwrap();
        let b = Ellipse2D::new([10.0, -4.0], 3.0, 1.5, 1.2).unwrap();
        assert_relative_eq!(ellipse_area(&a), ellipse_area(&b), epsilon = 1e-12);
    }

    #[test]
    fn ellipse_rejects_bad_axes() {
        assert!(Ellipse2D::new([0.0, 0.0], 1.0, 2.0, 0.0).is_err());
        assert!(Ellipse2D::new([0.0, 0.0], 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn point_cloud_validation() {
        let pts = vec![Point3::new(0.0, 0.0, 0.0)];
        assert!(PointCloud::new(vec![], None).is_err());
        assert!(PointCloud::new(pts.clone(), Some(vec![1.0, 2.0])).is_err());
        assert!(PointCloud::new(pts.clone(), Some(vec![-1.0])).is_err());
        assert!(PointCloud::new(pts, Some(vec![2.5])).is_ok());
    }
}
