//! Arc length along the fitted centerline and along-tube scalar profiles,
//! plus the two baseline profiles used for comparison.

use serde::{Deserialize, Serialize};

use crate::curve::PrincipalCurve;
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::tube::{section_area, SectionSlot, Tube};

/// What an along-tube profile value means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Sum of member intensities per section.
    Sum,
    /// Sum of member intensities divided by the section ellipse area.
    AreaNormalized,
    /// Cosine-weighted mean of member intensities per section.
    WeightedMean,
    /// Intensity sum inside an axis-aligned cube around the centerline.
    VoxelNeighborhood,
    /// Mean intensity per coordinate slab, the slice-by-slice baseline.
    Slice,
}

/// Coordinate axis selector for the slice baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn component(&self, p: &crate::geom::Point3) -> f64 {
        match self {
            Axis::X => p.x,
            Axis::Y => p.y,
            Axis::Z => p.z,
        }
    }
}

/// A scalar profile along the tube (or along a coordinate axis for the
/// slice baseline). `values[i]` is absent where the section is a gap or
/// the slab is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub t0s: Vec<f64>,
    /// Cumulative arc length from t = 0 in curve units; for the slice
    /// baseline this is the slab center coordinate instead.
    pub distances: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub kind: ProfileKind,
    pub normalized: bool,
}

impl Profile {
    /// Divide all values by the maximum value, as in a plot normalized to
    /// its peak.
    pub fn normalized_to_max(&self) -> Result<Profile> {
        let max = self
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || max <= 0.0 {
            return Err(Error::Domain(format!(
                "cannot normalize profile with maximum {max}"
            )));
        }
        Ok(Profile {
            values: self.values.iter().map(|v| v.map(|x| x / max)).collect(),
            normalized: true,
            ..self.clone()
        })
    }
}

/// Cumulative arc length of the centerline from 0 to `t`, by chord sums
/// over a uniform grid of `grid_resolution` cells on [0, 1].
pub fn arc_length(curve: &PrincipalCurve, t: f64, grid_resolution: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t {t} outside [0, 1]")));
    }
    if grid_resolution < 100 {
        return Err(Error::Precondition(
            "grid_resolution must be >= 100".into(),
        ));
    }
    let h = 1.0 / grid_resolution as f64;
    let mut total = 0.0;
    let mut prev = curve.point(0.0)?;
    let mut s = 0.0;
    while s + h <= t + 1e-15 {
        let next = curve.point((s + h).min(1.0))?;
        total += prev.dist(&next);
        prev = next;
        s += h;
    }
    if t - s > 1e-15 {
        total += prev.dist(&curve.point(t)?);
    }
    Ok(total)
}

/// Per-section concentration or weighted-mean profile over the tube's
/// fitted sections. Gaps produce absent values.
pub fn concentration_profile(tube: &Tube, cloud: &PointCloud, kind: ProfileKind) -> Result<Profile> {
    let intensities = cloud.intensities().ok_or_else(|| {
        Error::Input("concentration profiles require point intensities".into())
    })?;
    let g = tube.config.grid_resolution;
    let mut t0s = Vec::new();
    let mut distances = Vec::new();
    let mut values = Vec::new();
    for slot in &tube.sections {
        let t0 = slot.t0();
        t0s.push(t0);
        distances.push(arc_length(&tube.curve, t0, g)?);
        values.push(match slot {
            SectionSlot::Fitted(cs) => {
                let sum: f64 = cs.member_indices.iter().map(|&i| intensities[i]).sum();
                Some(match kind {
                    ProfileKind::Sum => sum,
                    ProfileKind::AreaNormalized => sum / section_area(cs),
                    ProfileKind::WeightedMean => cs
                        .member_indices
                        .iter()
                        .zip(&cs.weights)
                        .map(|(&i, &w)| w * intensities[i])
                        .sum(),
                    _ => {
                        return Err(Error::Precondition(format!(
                            "{kind:?} is not a tube section profile kind"
                        )))
                    }
                })
            }
            SectionSlot::Gap { .. } => None,
        });
    }
    Ok(Profile {
        t0s,
        distances,
        values,
        kind,
        normalized: false,
    })
}

/// Baseline profile: at each of `n_points` equally spaced latent times, sum
/// the intensities of all points inside the axis-aligned cube of side
/// `edge` centered on the curve. Points without intensities count as 1.
pub fn voxel_neighborhood_profile(
    curve: &PrincipalCurve,
    cloud: &PointCloud,
    edge: f64,
    n_points: usize,
) -> Result<Profile> {
    if edge <= 0.0 {
        return Err(Error::Precondition("edge must be positive".into()));
    }
    if n_points < 2 {
        return Err(Error::Precondition("n_points must be >= 2".into()));
    }
    let half = edge / 2.0;
    let mut t0s = Vec::new();
    let mut distances = Vec::new();
    let mut values = Vec::new();
    for k in 0..n_points {
        let t0 = k as f64 / (n_points - 1) as f64;
        let c = curve.point(t0)?;
        let sum: f64 = cloud
            .points()
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                (p.x - c.x).abs() <= half && (p.y - c.y).abs() <= half && (p.z - c.z).abs() <= half
            })
            .map(|(i, _)| cloud.intensities().map_or(1.0, |w| w[i]))
            .sum();
        t0s.push(t0);
        distances.push(arc_length(curve, t0, 1000)?);
        values.push(Some(sum));
    }
    Ok(Profile {
        t0s,
        distances,
        values,
        kind: ProfileKind::VoxelNeighborhood,
        normalized: false,
    })
}

/// Baseline profile: mean intensity of points falling in each slab of
/// width `window` along the chosen axis. Distances are slab center
/// coordinates, not arc length. Empty slabs become gaps.
pub fn slice_profile(cloud: &PointCloud, axis: Axis, window: f64) -> Result<Profile> {
    if window <= 0.0 {
        return Err(Error::Precondition("window must be positive".into()));
    }
    let intensities = cloud
        .intensities()
        .ok_or_else(|| Error::Input("slice profiles require point intensities".into()))?;
    let coords: Vec<f64> = cloud.points().iter().map(|p| axis.component(p)).collect();
    let min = coords.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_slabs = (((max - min) / window).ceil() as usize).max(1);
    let mut sums = vec![0.0; n_slabs];
    let mut counts = vec![0usize; n_slabs];
    for (&c, &w) in coords.iter().zip(intensities) {
        let k = (((c - min) / window) as usize).min(n_slabs - 1);
        sums[k] += w;
        counts[k] += 1;
    }
    let mut t0s = Vec::new();
    let mut distances = Vec::new();
    let mut values = Vec::new();
    for k in 0..n_slabs {
        let center = min + (k as f64 + 0.5) * window;
        t0s.push(k as f64 / n_slabs.max(2).saturating_sub(1) as f64);
        distances.push(center);
        values.push((counts[k] > 0).then(|| sums[k] / counts[k] as f64));
    }
    Ok(Profile {
        t0s,
        distances,
        values,
        kind: ProfileKind::Slice,
        normalized: false,
    })
}
