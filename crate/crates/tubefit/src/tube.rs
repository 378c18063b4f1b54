//! Assembling cross sections into a tube, membership queries, voxelwise
//! classification against a ground-truth structure, and surface export.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::{assign_to_samples, PrincipalCurve};
use crate::error::{Error, Result};
use crate::geom::{ellipse_area, Point3, PointCloud};
use crate::section::{embed_ellipse, fit_cross_section, level_set_scale, CrossSection};

/// Tube-fitting configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeConfig {
    pub n_sections: usize,
    pub t_r: f64,
    pub alpha: f64,
    pub grid_resolution: usize,
    pub seed: u64,
}

impl TubeConfig {
    pub fn new(t_r: f64, alpha: f64) -> Self {
        TubeConfig {
            n_sections: 50,
            t_r,
            alpha,
            grid_resolution: 1000,
            seed: 0,
        }
    }
}

/// A section slot: either a fitted cross section or a recorded gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SectionSlot {
    Fitted(CrossSection),
    Gap { t0: f64, reason: String },
}

impl SectionSlot {
    pub fn t0(&self) -> f64 {
        match self {
            SectionSlot::Fitted(cs) => cs.t0,
            SectionSlot::Gap { t0, .. } => *t0,
        }
    }

    pub fn as_fitted(&self) -> Option<&CrossSection> {
        match self {
            SectionSlot::Fitted(cs) => Some(cs),
            SectionSlot::Gap { .. } => None,
        }
    }
}

/// An estimated tube: the centerline plus ordered cross sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub curve: PrincipalCurve,
    pub sections: Vec<SectionSlot>,
    pub config: TubeConfig,
    #[serde(skip)]
    samples: Vec<Point3>,
}

impl Tube {
    pub fn valid_sections(&self) -> impl Iterator<Item = &CrossSection> {
        self.sections.iter().filter_map(|s| s.as_fitted())
    }

    pub fn gaps(&self) -> impl Iterator<Item = (f64, &str)> + '_ {
        self.sections.iter().filter_map(|s| match s {
            SectionSlot::Gap { t0, reason } => Some((*t0, reason.as_str())),
            SectionSlot::Fitted(_) => None,
        })
    }

    /// Rebuild the cached centerline samples (needed after deserialization).
    pub fn rebuild_samples(&mut self) -> Result<()> {
        self.samples = self.curve.sample(self.config.grid_resolution)?;
        Ok(())
    }

    fn ensure_samples(&self) -> &[Point3] {
        assert!(
            !self.samples.is_empty(),
            "tube samples missing; call rebuild_samples after deserialization"
        );
        &self.samples
    }

    /// Re-derive the tube at a different level alpha. Means and covariances
    /// are alpha-independent, only the ellipses rescale.
    pub fn with_alpha(&self, alpha: f64) -> Result<Tube> {
        let c = level_set_scale(alpha)?;
        let sections = self
            .sections
            .iter()
            .map(|slot| match slot {
                SectionSlot::Fitted(cs) => {
                    let ellipse =
                        crate::section::ellipse_from_gaussian(cs.mu, &cs.sigma, c)?;
                    Ok(SectionSlot::Fitted(CrossSection {
                        alpha,
                        ellipse,
                        ..cs.clone()
                    }))
                }
                gap => Ok(gap.clone()),
            })
            .collect::<Result<Vec<_>>>()?;
        let mut config = self.config.clone();
        config.alpha = alpha;
        Ok(Tube {
            curve: self.curve.clone(),
            sections,
            config,
            samples: self.samples.clone(),
        })
    }
}

/// Fit one cross section per starting time; failures become gaps.
pub fn fit_tube(curve: &PrincipalCurve, cloud: &PointCloud, config: &TubeConfig) -> Result<Tube> {
    if config.n_sections < 1 {
        return Err(Error::Precondition("n_sections must be >= 1".into()));
    }
    let samples = curve.sample(config.grid_resolution)?;
    let times = assign_to_samples(&samples, cloud.points());
    let n = config.n_sections;
    let sections: Vec<SectionSlot> = (0..n)
        .map(|k| {
            let t0 = if n == 1 {
                0.5
            } else {
                k as f64 / (n - 1) as f64
            };
            match fit_cross_section(curve, cloud, &times, t0, config.t_r, config.alpha) {
                Ok(cs) => SectionSlot::Fitted(cs),
                Err(e) => SectionSlot::Gap {
                    t0,
                    reason: e.to_string(),
                },
            }
        })
        .collect();
    let failed = sections.iter().filter(|s| s.as_fitted().is_none()).count();
    if failed * 2 > n {
        return Err(Error::TubeFitFailed { failed, total: n });
    }
    Ok(Tube {
        curve: curve.clone(),
        sections,
        config: config.clone(),
        samples,
    })
}

/// Membership test: assign the point a latent time, pick the nearest valid
/// section, and test the Mahalanobis inequality in that section's plane.
/// At the two terminal sections the axial offset is also bounded so the
/// tube does not extend past the curve ends.
pub fn point_in_tube(tube: &Tube, p: &Point3) -> bool {
    nearest_section(tube, p).map_or(false, |(cs, m2)| {
        m2 <= level_set_scale(cs.alpha).expect("alpha validated at fit time")
    })
}

fn nearest_section<'t>(tube: &'t Tube, p: &Point3) -> Option<(&'t CrossSection, f64)> {
    let samples = tube.ensure_samples();
    let t_p = assign_to_samples(samples, std::slice::from_ref(p))[0];
    let valid: Vec<&CrossSection> = tube.valid_sections().collect();
    let (pos, cs) = valid
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (a.t0 - t_p).abs();
            let db = (b.t0 - t_p).abs();
            da.partial_cmp(&db).unwrap()
        })
        .map(|(i, cs)| (i, *cs))?;
    let q = cs.rotation.apply(p.sub(&cs.center));
    let mut m2 = cs.mahalanobis2([q.x, q.y]);
    // Outward axial overshoot past a terminal section is capped at half
    // the spacing to its neighbor; beyond that the point is rejected.
    let cap = if pos == 0 && valid.len() > 1 && q.z < 0.0 {
        Some(cs.center.dist(&valid[1].center))
    } else if pos + 1 == valid.len() && valid.len() > 1 && q.z > 0.0 {
        Some(cs.center.dist(&valid[pos - 1].center))
    } else {
        None
    };
    if let Some(spacing) = cap {
        if q.z.abs() > 0.5 * spacing {
            m2 = f64::INFINITY;
        }
    }
    Some((cs, m2))
}

/// An axis-aligned voxel lattice; voxel centers are
/// `origin + index * pitch` componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeGrid {
    pub origin: Point3,
    pub pitch: [f64; 3],
    pub dims: [usize; 3],
}

impl LatticeGrid {
    pub fn center(&self, idx: [usize; 3]) -> Point3 {
        Point3::new(
            self.origin.x + idx[0] as f64 * self.pitch[0],
            self.origin.y + idx[1] as f64 * self.pitch[1],
            self.origin.z + idx[2] as f64 * self.pitch[2],
        )
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| [x, y, z])))
    }
}

/// Voxelwise classification of a tube against a ground-truth voxel set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    /// |inside & truth| / |truth|.
    pub true_positive_rate: f64,
    /// |inside & !truth| / |truth|; may exceed 1.
    pub false_positive_rate: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    /// Per-section (TP, FP) counts keyed by t0, attributed to the nearest
    /// section of each inside voxel.
    pub per_section: Option<Vec<(f64, usize, usize)>>,
}

pub fn classify_against_truth(
    tube: &Tube,
    truth: &HashSet<[usize; 3]>,
    lattice: &LatticeGrid,
) -> Result<ClassificationResult> {
    Ok(classify_detailed(tube, truth, lattice)?.0)
}

/// Classification plus the list of misclassified voxels (FP then FN order
/// is not distinguished; both are returned).
pub fn classify_detailed(
    tube: &Tube,
    truth: &HashSet<[usize; 3]>,
    lattice: &LatticeGrid,
) -> Result<(ClassificationResult, Vec<[usize; 3]>)> {
    if truth.is_empty() {
        return Err(Error::Domain("truth set is empty".into()));
    }
    let all: Vec<[usize; 3]> = lattice.indices().collect();
    let verdicts: Vec<(bool, Option<f64>)> = all
        .par_iter()
        .map(|&idx| {
            let p = lattice.center(idx);
            match nearest_section(tube, &p) {
                Some((cs, m2)) => {
                    let inside = m2 <= level_set_scale(cs.alpha).unwrap();
                    (inside, inside.then_some(cs.t0))
                }
                None => (false, None),
            }
        })
        .collect();

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut tn = 0usize;
    let mut misclassified = Vec::new();
    let mut per_section: Vec<(f64, usize, usize)> = tube
        .valid_sections()
        .map(|cs| (cs.t0, 0usize, 0usize))
        .collect();
    for (idx, (inside, section_t0)) in all.iter().zip(&verdicts) {
        let in_truth = truth.contains(idx);
        match (inside, in_truth) {
            (true, true) => tp += 1,
            (true, false) => {
                fp += 1;
                misclassified.push(*idx);
            }
            (false, true) => {
                fn_ += 1;
                misclassified.push(*idx);
            }
            (false, false) => tn += 1,
        }
        if let Some(t0) = section_t0 {
            if let Some(entry) = per_section.iter_mut().find(|(t, _, _)| t == t0) {
                if in_truth {
                    entry.1 += 1;
                } else {
                    entry.2 += 1;
                }
            }
        }
    }
    let nt = truth.len() as f64;
    Ok((
        ClassificationResult {
            true_positive_rate: tp as f64 / nt,
            false_positive_rate: fp as f64 / nt,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            true_negatives: tn,
            per_section: Some(per_section),
        },
        misclassified,
    ))
}

/// A tube surface mesh: rings of boundary points joined by quads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3>,
    /// Optional per-vertex scalar attribute.
    pub scalars: Option<Vec<f64>>,
    /// Quad connectivity, indices into `vertices`.
    pub quads: Vec<[usize; 4]>,
}

/// Export the tube surface: one ring per valid section, quads between
/// consecutive sections, connectivity broken at gaps.
pub fn export_surface(
    tube: &Tube,
    n_boundary: usize,
    ring_scalars: Option<&[Option<f64>]>,
) -> Result<SurfaceMesh> {
    if n_boundary < 3 {
        return Err(Error::Export("need at least 3 boundary points".into()));
    }
    let mut vertices = Vec::new();
    let mut scalars = ring_scalars.map(|_| Vec::new());
    let mut quads = Vec::new();
    let mut prev_ring: Option<usize> = None;
    let mut adjacent_pairs = 0usize;
    for (slot_idx, slot) in tube.sections.iter().enumerate() {
        match slot {
            SectionSlot::Fitted(cs) => {
                let base = vertices.len();
                vertices.extend(embed_ellipse(cs, n_boundary));
                if let (Some(out), Some(rs)) = (scalars.as_mut(), ring_scalars) {
                    let v = rs.get(slot_idx).copied().flatten().unwrap_or(f64::NAN);
                    out.extend(std::iter::repeat(v).take(n_boundary));
                }
                if let Some(pb) = prev_ring {
                    adjacent_pairs += 1;
                    for j in 0..n_boundary {
                        let jn = (j + 1) % n_boundary;
                        quads.push([pb + j, pb + jn, base + jn, base + j]);
                    }
                }
                prev_ring = Some(base);
            }
            SectionSlot::Gap { .. } => {
                prev_ring = None;
            }
        }
    }
    if adjacent_pairs == 0 {
        return Err(Error::Export(
            "fewer than 2 adjacent valid sections".into(),
        ));
    }
    Ok(SurfaceMesh {
        vertices,
        scalars,
        quads,
    })
}

/// Section-table row data used by reports.
pub fn section_area(cs: &CrossSection) -> f64 {
    ellipse_area(&cs.ellipse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{fit_principal_curve, CurveFitConfig};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cylinder_cloud(n: usize, radius: f64, length: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            let y = rng.random::<f64>() * 2.0 - 1.0;
            if x * x + y * y <= 1.0 {
                pts.push(Point3::new(
                    x * radius,
                    y * radius,
                    rng.random::<f64>() * length,
                ));
            }
        }
        PointCloud::new(pts, None).unwrap()
    }

    fn cylinder_tube(seed: u64, alpha: f64) -> (Tube, PointCloud) {
        let cloud = cylinder_cloud(20_000, 1.0, 10.0, seed);
        let cfg = CurveFitConfig::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 10.0),
            4,
        );
        let curve = fit_principal_curve(&cloud, &cfg).unwrap().curve;
        let tube = fit_tube(&curve, &cloud, &TubeConfig::new(0.1, alpha)).unwrap();
        (tube, cloud)
    }

    #[test]
    fn straight_cylinder_sections() {
        let (tube, _) = cylinder_tube(41, 0.12);
        assert_eq!(tube.sections.len(), 50);
        for cs in tube.valid_sections() {
            assert!(
                cs.ellipse.semi_major >= 0.85 && cs.ellipse.semi_major <= 1.1,
                "t0 {} semi-major {}",
                cs.t0,
                cs.ellipse.semi_major
            );
            assert!(cs.ellipse.semi_minor >= 0.85, "t0 {} semi-minor {}", cs.t0, cs.ellipse.semi_minor);
        }
        // Strictly increasing t0.
        let t0s: Vec<f64> = tube.sections.iter().map(|s| s.t0()).collect();
        assert!(t0s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn partial_coverage_creates_gaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = Vec::new();
        while pts.len() < 4000 {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            let y = rng.random::<f64>() * 2.0 - 1.0;
            if x * x + y * y <= 1.0 {
                pts.push(Point3::new(x, y, rng.random::<f64>() * 6.0));
            }
        }
        let cloud = PointCloud::new(pts, None).unwrap();
        // Curve spans [0, 10] but the cloud stops at z = 6 (t = 0.6).
        let cfg = CurveFitConfig::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 10.0),
            4,
        );
        let curve = fit_principal_curve(&cloud, &cfg).unwrap().curve;
        let mut tc = TubeConfig::new(0.05, 0.12);
        tc.n_sections = 40;
        let tube = fit_tube(&curve, &cloud, &tc).unwrap();
        for (t0, _) in tube.gaps() {
            assert!(t0 > 0.55, "unexpected gap at t0 {t0}");
        }
        assert!(tube.gaps().any(|(t0, _)| t0 > 0.7));

        // A cloud covering under half the curve fails outright.
        let short: Vec<Point3> = cloud
            .points()
            .iter()
            .filter(|p| p.z < 3.0)
            .cloned()
            .collect();
        let short_cloud = PointCloud::new(short, None).unwrap();
        assert!(matches!(
            fit_tube(&curve, &short_cloud, &tc),
            Err(Error::TubeFitFailed { .. })
        ));
    }

    #[test]
    fn membership_basics() {
        let (tube, _) = cylinder_tube(42, 0.12);
        let center = tube.curve.point(0.5).unwrap();
        assert!(point_in_tube(&tube, &center));
        assert!(!point_in_tube(&tube, &Point3::new(200.0, 0.0, 5.0)));
    }

    #[test]
    fn membership_boundary() {
        let (tube, _) = cylinder_tube(43, 0.12);
        let cs = tube
            .valid_sections()
            .min_by(|a, b| {
                (a.t0 - 0.5).abs().partial_cmp(&(b.t0 - 0.5).abs()).unwrap()
            })
            .unwrap();
        // Walk along the major axis in the section plane, mapped to 3D.
        let inv = cs.rotation.inverse();
        let (co, so) = (cs.ellipse.orientation.cos(), cs.ellipse.orientation.sin());
        let place = |scale: f64| {
            let u = scale * cs.ellipse.semi_major;
            let x = cs.ellipse.center[0] + co * u;
            let y = cs.ellipse.center[1] + so * u;
            cs.center
                .add(inv.apply(nalgebra::Vector3::new(x, y, 0.0)))
        };
        assert!(point_in_tube(&tube, &place(0.999)));
        assert!(!point_in_tube(&tube, &place(1.01)));
    }

    #[test]
    fn membership_consistency_with_cloud_points() {
        let (tube, cloud) = cylinder_tube(44, 0.12);
        let samples = tube.curve.sample(1000).unwrap();
        let times = assign_to_samples(&samples, cloud.points());
        let c = level_set_scale(0.12).unwrap();
        for (p, &t_p) in cloud.points().iter().zip(&times).step_by(97) {
            let cs = tube
                .valid_sections()
                .min_by(|a, b| {
                    (a.t0 - t_p).abs().partial_cmp(&(b.t0 - t_p).abs()).unwrap()
                })
                .unwrap();
            let q = cs.rotation.apply(p.sub(&cs.center));
            if cs.mahalanobis2([q.x, q.y]) <= c {
                assert!(point_in_tube(tube_ref(&tube), p));
            }
        }
    }

    fn tube_ref(t: &Tube) -> &Tube {
        t
    }

    fn cylinder_truth(lattice: &LatticeGrid, radius: f64) -> HashSet<[usize; 3]> {
        lattice
            .indices()
            .filter(|&idx| {
                let p = lattice.center(idx);
                p.x * p.x + p.y * p.y <= radius * radius && (0.0..=10.0).contains(&p.z)
            })
            .collect()
    }

    fn cylinder_lattice() -> LatticeGrid {
        LatticeGrid {
            origin: Point3::new(-1.5, -1.5, -0.25),
            pitch: [0.125, 0.125, 0.25],
            dims: [25, 25, 44],
        }
    }

    #[test]
    fn classification_on_cylinder_truth() {
        let (tube, _) = cylinder_tube(45, 0.05);
        let lattice = cylinder_lattice();
        let truth = cylinder_truth(&lattice, 1.0);
        let res = classify_against_truth(&tube, &truth, &lattice).unwrap();
        assert!(res.true_positive_rate >= 0.95, "TP {}", res.true_positive_rate);
    }

    #[test]
    fn classification_far_tube_and_full_truth() {
        let (tube, _) = cylinder_tube(46, 0.12);
        let lattice = LatticeGrid {
            origin: Point3::new(100.0, 100.0, 100.0),
            pitch: [0.5, 0.5, 0.5],
            dims: [10, 10, 10],
        };
        let truth: HashSet<[usize; 3]> = lattice.indices().collect();
        let res = classify_against_truth(&tube, &truth, &lattice).unwrap();
        assert_eq!(res.true_positives, 0);
        assert_eq!(res.false_positives, 0, "truth complement is empty");
        assert_eq!(res.true_positive_rate, 0.0);
        assert!(matches!(
            classify_against_truth(&tube, &HashSet::new(), &lattice),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn alpha_monotonicity() {
        let (tube, _) = cylinder_tube(47, 0.3);
        let lattice = cylinder_lattice();
        let truth = cylinder_truth(&lattice, 1.0);
        let mut prev_tp = 0usize;
        let mut prev_areas: Option<Vec<f64>> = None;
        for alpha in [0.5, 0.3, 0.12, 0.05] {
            let t = tube.with_alpha(alpha).unwrap();
            let areas: Vec<f64> = t.valid_sections().map(section_area).collect();
            if let Some(prev) = &prev_areas {
                for (a, p) in areas.iter().zip(prev) {
                    assert!(a >= p, "area shrank when alpha decreased");
                }
            }
            prev_areas = Some(areas);
            let res = classify_against_truth(&t, &truth, &lattice).unwrap();
            assert!(res.true_positives >= prev_tp);
            prev_tp = res.true_positives;
        }
    }

    #[test]
    fn determinism() {
        let (a, _) = cylinder_tube(48, 0.12);
        let (b, _) = cylinder_tube(48, 0.12);
        assert_eq!(a, b);
    }

    #[test]
    fn surface_counting() {
        let (tube, _) = cylinder_tube(49, 0.12);
        let two = Tube {
            curve: tube.curve.clone(),
            sections: tube.sections.iter().take(2).cloned().collect(),
            config: tube.config.clone(),
            samples: tube.curve.sample(1000).unwrap(),
        };
        let mesh = export_surface(&two, 4, None).unwrap();
        assert_eq!(mesh.vertices.len(), 8);
        assert_eq!(mesh.quads.len(), 4);

        let full = export_surface(&tube, 16, None).unwrap();
        assert_eq!(full.vertices.len() % 16, 0);
        for v in &full.vertices {
            let r = (v.x * v.x + v.y * v.y).sqrt();
            assert!(r > 0.8 && r < 1.25, "vertex radius {r}");
        }
    }

    #[test]
    fn surface_requires_two_sections() {
        let (tube, _) = cylinder_tube(50, 0.12);
        let one = Tube {
            curve: tube.curve.clone(),
            sections: tube.sections.iter().take(1).cloned().collect(),
            config: tube.config.clone(),
            samples: tube.curve.sample(1000).unwrap(),
        };
        assert!(export_surface(&one, 8, None).is_err());
    }
}
