//! Cross-section estimation at a single starting time t0: t-window
//! selection, distance-preserving projection into a common plane, cosine
//! weighting, weighted bivariate normal, and the level-set ellipse.

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::curve::PrincipalCurve;
use crate::error::{Error, Result};
use crate::geom::{minimal_rotation_to_z, tol, Ellipse2D, Point3, PointCloud, Rotation3};

/// One estimated tube slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub t0: f64,
    /// Curve point f(t0).
    pub center: Point3,
    /// Frame at t0: rotation taking the tangent at t0 onto +z.
    pub rotation: Rotation3,
    /// Weighted 2D mean of the projected neighborhood.
    pub mu: [f64; 2],
    /// Weighted 2D covariance, row-major [[xx, xy], [xy, yy]].
    pub sigma: [[f64; 2]; 2],
    pub alpha: f64,
    pub ellipse: Ellipse2D,
    pub member_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl CrossSection {
    pub fn sigma_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(
            self.sigma[0][0],
            self.sigma[0][1],
            self.sigma[1][0],
            self.sigma[1][1],
        )
    }

    /// Squared Mahalanobis distance of a 2D point in this section's plane.
    pub fn mahalanobis2(&self, p: [f64; 2]) -> f64 {
        let d = Vector2::new(p[0] - self.mu[0], p[1] - self.mu[1]);
        let inv = self
            .sigma_matrix()
            .try_inverse()
            .expect("covariance is positive definite by construction");
        (d.transpose() * inv * d)[(0, 0)]
    }
}

/// Indices whose latent times fall strictly within t_r of t0.
pub fn t_window(latent_times: &[f64], t0: f64, t_r: f64) -> Result<Vec<usize>> {
    if !(t_r > 0.0) {
        return Err(Error::Precondition(format!("t_r {t_r} must be positive")));
    }
    let idx: Vec<usize> = latent_times
        .iter()
        .enumerate()
        .filter(|(_, &t)| (t0 - t).abs() < t_r)
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyNeighborhood { t0 });
    }
    Ok(idx)
}

/// Project a point into the cross-sectional plane while preserving its
/// distance and direction from the centerline at its own latent time.
pub fn project_to_plane(point: &Point3, t_point: f64, curve: &PrincipalCurve) -> Result<[f64; 2]> {
    let tangent = curve.tangent(t_point)?;
    let rot = minimal_rotation_to_z(tangent)?;
    let foot = curve.point(t_point)?;
    let q = rot.apply(point.sub(&foot));
    Ok([q.x, q.y])
}

/// Cosine weights over a window, normalized to sum to one.
pub fn cosine_weights(window_times: &[f64], t0: f64, r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0) {
        return Err(Error::Precondition(format!("r {r} must be positive")));
    }
    if let Some(t) = window_times.iter().find(|&&t| (t - t0).abs() >= r) {
        return Err(Error::Precondition(format!(
            "window time {t} outside half-width {r} of t0 = {t0}"
        )));
    }
    let raw: Vec<f64> = window_times
        .iter()
        .map(|&t| ((t - t0) * std::f64::consts::PI / r).cos() + 1.0)
        .collect();
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Weighted bivariate mean and covariance. Weights need not be normalized.
pub fn weighted_gaussian(
    points2d: &[[f64; 2]],
    weights: &[f64],
) -> Result<([f64; 2], [[f64; 2]; 2])> {
    if points2d.len() != weights.len() {
        return Err(Error::Precondition("points/weights length mismatch".into()));
    }
    if weights.iter().filter(|&&w| w > 0.0).count() < 3 {
        return Err(Error::Precondition(
            "need at least 3 points with nonzero weight".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let weights = weights.as_slice();
    let mut mu = [0.0, 0.0];
    for (p, &w) in points2d.iter().zip(weights) {
        mu[0] += w * p[0];
        mu[1] += w * p[1];
    }
    let mut s = [[0.0; 2]; 2];
    for (p, &w) in points2d.iter().zip(weights) {
        let dx = p[0] - mu[0];
        let dy = p[1] - mu[1];
        s[0][0] += w * dx * dx;
        s[0][1] += w * dx * dy;
        s[1][1] += w * dy * dy;
    }
    s[1][0] = s[0][1];
    let (l1, l2, _) = sym_eigen_2x2(&s);
    if l2 < tol::COVARIANCE_EIGENVALUE || l1 < tol::COVARIANCE_EIGENVALUE {
        return Err(Error::DegenerateCovariance { t0: None });
    }
    Ok((mu, s))
}

/// Eigendecomposition of a symmetric 2x2 matrix: (larger, smaller,
/// angle of the leading eigenvector reduced mod pi).
pub fn sym_eigen_2x2(s: &[[f64; 2]; 2]) -> (f64, f64, f64) {
    let a = s[0][0];
    let b = s[0][1];
    let c = s[1][1];
    let tr = a + c;
    let disc = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = tr / 2.0 - disc;
    let angle = if b.abs() < 1e-300 && a >= c {
        0.0
    } else if b.abs() < 1e-300 {
        std::f64::consts::FRAC_PI_2
    } else {
        (l1 - a).atan2(b).rem_euclid(std::f64::consts::PI)
    };
    (l1, l2, angle)
}

/// Mahalanobis-squared radius c(alpha) = -2 ln(alpha): the ellipse
/// {(P - mu)' Sigma^-1 (P - mu) <= c} holds bivariate-normal mass 1 - alpha.
pub fn level_set_scale(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(-2.0 * alpha.ln())
}

/// Level-set ellipse of a bivariate normal at scale c.
pub fn ellipse_from_gaussian(mu: [f64; 2], sigma: &[[f64; 2]; 2], c: f64) -> Result<Ellipse2D> {
    let (l1, l2, angle) = sym_eigen_2x2(sigma);
    if l2 <= 0.0 {
        return Err(Error::DegenerateCovariance { t0: None });
    }
    Ellipse2D::new(mu, (c * l1).sqrt(), (c * l2).sqrt(), angle)
}

/// Fit one cross section at t0 from the cloud's latent times.
pub fn fit_cross_section(
    curve: &PrincipalCurve,
    cloud: &PointCloud,
    latent_times: &[f64],
    t0: f64,
    t_r: f64,
    alpha: f64,
) -> Result<CrossSection> {
    if latent_times.len() != cloud.len() {
        return Err(Error::Precondition(format!(
            "{} latent times for {} points",
            latent_times.len(),
            cloud.len()
        )));
    }
    let c = level_set_scale(alpha)?;
    let members = t_window(latent_times, t0, t_r)?;
    if members.len() < 3 {
        return Err(Error::Precondition(format!(
            "window at t0 = {t0} holds {} points, need >= 3",
            members.len()
        )));
    }
    let window_times: Vec<f64> = members.iter().map(|&i| latent_times[i]).collect();
    let weights = cosine_weights(&window_times, t0, t_r)?;
    let projected: Vec<[f64; 2]> = members
        .iter()
        .map(|&i| project_to_plane(&cloud.points()[i], latent_times[i], curve))
        .collect::<Result<_>>()?;
    let (mu, sigma) = weighted_gaussian(&projected, &weights).map_err(|e| match e {
        Error::DegenerateCovariance { .. } => Error::DegenerateCovariance { t0: Some(t0) },
        other => other,
    })?;
    let ellipse = ellipse_from_gaussian(mu, &sigma, c).map_err(|e| match e {
        Error::DegenerateCovariance { .. } => Error::DegenerateCovariance { t0: Some(t0) },
        other => other,
    })?;
    let tangent = curve.tangent(t0)?;
    Ok(CrossSection {
        t0,
        center: curve.point(t0)?,
        rotation: minimal_rotation_to_z(tangent)?,
        mu,
        sigma,
        alpha,
        ellipse,
        member_indices: members,
        weights,
    })
}

/// Map `n_boundary` ellipse-boundary points back into 3D.
pub fn embed_ellipse(cs: &CrossSection, n_boundary: usize) -> Vec<Point3> {
    let inv = cs.rotation.inverse();
    let e = &cs.ellipse;
    let (co, so) = (e.orientation.cos(), e.orientation.sin());
    (0..n_boundary)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n_boundary as f64;
            let u = e.semi_major * th.cos();
            let v = e.semi_minor * th.sin();
            let x = e.center[0] + co * u - so * v;
            let y = e.center[1] + so * u + co * v;
            cs.center.add(inv.apply(Vector3::new(x, y, 0.0)))
        })
        .collect()
}
