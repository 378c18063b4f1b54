//! The modified principal-curve algorithm: alternate grid-based latent-time
//! assignment with per-coordinate constrained spline refits, under a
//! gradually increasing degrees-of-freedom schedule.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{tol, Point3, PointCloud};
use crate::spline::{fit_spline_with_knots, quantile_knots, CoordinateSpline};

/// A fitted centerline: three coordinate splines over latent time plus the
/// per-point latent assignments of the fitted points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalCurve {
    pub fx: CoordinateSpline,
    pub fy: CoordinateSpline,
    pub fz: CoordinateSpline,
    pub latent_times: Vec<f64>,
    pub final_df: usize,
}

impl PrincipalCurve {
    /// Curve position f(t).
    pub fn point(&self, t: f64) -> Result<Point3> {
        Ok(Point3::new(
            self.fx.eval(t)?,
            self.fy.eval(t)?,
            self.fz.eval(t)?,
        ))
    }

    /// Unit tangent at t; errors if the gradient vanishes.
    pub fn tangent(&self, t: f64) -> Result<Vector3<f64>> {
        let g = Vector3::new(
            self.fx.eval_deriv(t)?,
            self.fy.eval_deriv(t)?,
            self.fz.eval_deriv(t)?,
        );
        let n = g.norm();
        if n <= tol::SINGULAR_GRADIENT {
            return Err(Error::SingularTangent { t });
        }
        Ok(g / n)
    }

    /// Curve sampled at `g + 1` uniform grid times.
    pub fn sample(&self, g: usize) -> Result<Vec<Point3>> {
        (0..=g)
            .map(|i| self.point(i as f64 / g as f64))
            .collect()
    }
}

/// Configuration for `fit_principal_curve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFitConfig {
    /// Required curve endpoints: f(0) and f(1) are pinned to these.
    pub endpoints: (Point3, Point3),
    /// Final degrees of freedom K.
    pub final_df: usize,
    /// Degrees-of-freedom schedule; defaults to 4..=K in steps of 1.
    pub df_schedule: Option<Vec<usize>>,
    /// Grid resolution G for latent-time assignment.
    pub grid_resolution: usize,
    /// Intensity exponent gamma; None means 1 when intensities are present,
    /// 0 otherwise.
    pub intensity_exponent: Option<f64>,
    /// Relative change in weighted MSE that stops a stage.
    pub rel_mse_tol: f64,
    pub max_iter_per_stage: usize,
    /// Optional uniform subsample size; fitting uses this many points.
    pub subsample: Option<usize>,
    /// Seed controlling subsampling.
    pub seed: u64,
}

impl CurveFitConfig {
    pub fn new(start: Point3, end: Point3, final_df: usize) -> Self {
        CurveFitConfig {
            endpoints: (start, end),
            final_df,
            df_schedule: None,
            grid_resolution: 1000,
            intensity_exponent: None,
            rel_mse_tol: 1e-4,
            max_iter_per_stage: 50,
            subsample: None,
            seed: 0,
        }
    }

    fn schedule(&self) -> Vec<usize> {
        match &self.df_schedule {
            Some(s) => s.clone(),
            None => (4..=self.final_df).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.endpoints.0.is_finite() && self.endpoints.1.is_finite()) {
            return Err(Error::Precondition("endpoints must be finite".into()));
        }
        if self.final_df < 4 {
            return Err(Error::Precondition(format!(
                "final_df {} must be >= 4",
                self.final_df
            )));
        }
        if self.grid_resolution < 100 {
            return Err(Error::Precondition(format!(
                "grid_resolution {} must be >= 100",
                self.grid_resolution
            )));
        }
        if !(self.rel_mse_tol > 0.0) {
            return Err(Error::Precondition("rel_mse_tol must be positive".into()));
        }
        let sched = self.schedule();
        if sched.is_empty() || sched.last() != Some(&self.final_df) {
            return Err(Error::Precondition(
                "df_schedule must end at final_df".into(),
            ));
        }
        if sched.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(
                "df_schedule must be strictly increasing".into(),
            ));
        }
        if let Some(g) = self.intensity_exponent {
            if g < 0.0 {
                return Err(Error::Precondition("intensity exponent must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Per-stage convergence statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub df: usize,
    pub iterations: usize,
    pub mse_trace: Vec<f64>,
}

/// Result of a principal-curve fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub curve: PrincipalCurve,
    pub stages: Vec<StageStats>,
    /// Indices into the input cloud that were actually fitted
    /// (None when no subsampling was applied).
    pub fitted_indices: Option<Vec<usize>>,
}

/// For each cloud point, the grid time minimizing the distance to the curve,
/// with ties broken toward the smaller t.
pub fn assign_latent_times<F>(curve: F, cloud: &PointCloud, grid_resolution: usize) -> Vec<f64>
where
    F: Fn(f64) -> Point3,
{
    let g = grid_resolution;
    let samples: Vec<Point3> = (0..=g).map(|i| curve(i as f64 / g as f64)).collect();
    assign_to_samples(&samples, cloud.points())
}

pub(crate) fn assign_to_samples(samples: &[Point3], points: &[Point3]) -> Vec<f64> {
    let g = samples.len() - 1;
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (k, s) in samples.iter().enumerate() {
                let dx = s.x - p.x;
                let dy = s.y - p.y;
                let dz = s.z - p.z;
                let d = dx * dx + dy * dy + dz * dz;
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as f64 / g as f64
        })
        .collect()
}

/// Fit the modified principal curve.
pub fn fit_principal_curve(cloud: &PointCloud, config: &CurveFitConfig) -> Result<CurveFit> {
    config.validate()?;
    if cloud.len() < config.final_df + 2 {
        return Err(Error::InsufficientData(format!(
            "{} points cannot support df {}",
            cloud.len(),
            config.final_df
        )));
    }

    // Optional uniform subsample, without replacement, driven by the seed.
    let (fit_cloud, fitted_indices) = match config.subsample {
        Some(m) if m < cloud.len() => {
            if m < config.final_df + 2 {
                return Err(Error::InsufficientData(format!(
                    "subsample {m} cannot support df {}",
                    config.final_df
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, cloud.len(), m).into_vec();
            idx.sort_unstable();
            (cloud.select(&idx)?, Some(idx))
        }
        _ => (cloud.clone(), None),
    };

    let points = fit_cloud.points();
    let first = points[0];
    if points.iter().all(|p| p.dist(&first) < 1e-12) {
        return Err(Error::DegenerateFit("all cloud points are identical".into()));
    }

    let gamma = config
        .intensity_exponent
        .unwrap_or(if fit_cloud.intensities().is_some() { 1.0 } else { 0.0 });
    let weights: Vec<f64> = match fit_cloud.intensities() {
        Some(c) if gamma > 0.0 => {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            if mean <= 0.0 {
                return Err(Error::DegenerateFit("all intensities are zero".into()));
            }
            c.iter().map(|v| (v / mean).powf(gamma)).collect()
        }
        _ => vec![1.0; points.len()],
    };

    // Initial latent times: normalized projection onto the endpoint chord.
    let (e0, e1) = config.endpoints;
    let chord = e1.sub(&e0);
    let chord_len2 = chord.norm_squared();
    if chord_len2 < 1e-24 {
        return Err(Error::DegenerateFit("endpoints coincide".into()));
    }
    let mut ts: Vec<f64> = points
        .iter()
        .map(|p| (p.sub(&e0).dot(&chord) / chord_len2).clamp(0.0, 1.0))
        .collect();

    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
    let wsum: f64 = weights.iter().sum();

    let mut curve: Option<PrincipalCurve> = None;
    let mut stages = Vec::new();

    for df in config.schedule() {
        if points.len() < df + 2 {
            return Err(Error::InsufficientData(format!(
                "{} fitted points cannot support df {df}",
                points.len()
            )));
        }
        // Knots are frozen per stage so refits within a stage search a fixed
        // function space and the objective stays monotone.
        let active: Vec<f64> = ts
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&t, _)| t)
            .collect();
        let knots = quantile_knots(&active, df);

        let mut mse_trace: Vec<f64> = Vec::new();
        let mut iterations = 0;
        for _ in 0..config.max_iter_per_stage {
            iterations += 1;
            if let Some(c) = &curve {
                let samples = c.sample(config.grid_resolution)?;
                ts = assign_to_samples(&samples, points);
            }
            let fx = fit_spline_with_knots(&ts, &xs, &weights, df, knots.clone(), Some((e0.x, e1.x)))?;
            let fy = fit_spline_with_knots(&ts, &ys, &weights, df, knots.clone(), Some((e0.y, e1.y)))?;
            let fz = fit_spline_with_knots(&ts, &zs, &weights, df, knots.clone(), Some((e0.z, e1.z)))?;
            let next = PrincipalCurve {
                fx,
                fy,
                fz,
                latent_times: ts.clone(),
                final_df: df,
            };
            let mse = weighted_mse(&next, points, &ts, &weights, wsum)?;
            curve = Some(next);
            if let Some(&prev) = mse_trace.last() {
                mse_trace.push(mse);
                if prev <= 0.0 || (prev - mse).abs() / prev < config.rel_mse_tol {
                    break;
                }
            } else {
                mse_trace.push(mse);
            }
        }
        stages.push(StageStats {
            df,
            iterations,
            mse_trace,
        });
    }

    let mut curve = curve.expect("schedule is nonempty");
    let samples = curve.sample(config.grid_resolution)?;
    curve.latent_times = assign_to_samples(&samples, points);
    curve.final_df = config.final_df;
    Ok(CurveFit {
        curve,
        stages,
        fitted_indices,
    })
}

fn weighted_mse(
    curve: &PrincipalCurve,
    points: &[Point3],
    ts: &[f64],
    weights: &[f64],
    wsum: f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for ((p, &t), &w) in points.iter().zip(ts).zip(weights) {
        let f = curve.point(t)?;
        acc += w * f.sub(p).norm_squared();
    }
    Ok(acc / wsum)
}
