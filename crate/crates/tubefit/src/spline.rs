//! Cubic regression splines over latent time with optional endpoint constraints.
//!
//! The basis is the truncated power basis `1, t, t^2, t^3, (t - k_j)_+^3`
//! with interior knots at quantiles of the fitting times. A spline with
//! `df = K` uses `K` basis functions, so `K - 4` interior knots for `K >= 4`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const KNOT_MIN_SPACING: f64 = 1e-6;
const RIDGE_JITTER: f64 = 1e-10;
const DOMAIN_SLACK: f64 = 1e-12;

/// A fitted cubic regression spline for one coordinate as a function of
/// latent time t in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSpline {
    knots: Vec<f64>,
    coefficients: Vec<f64>,
    df: usize,
    constrained_endpoints: Option<(f64, f64)>,
}

impl CoordinateSpline {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn df(&self) -> usize {
        self.df
    }

    pub fn constrained_endpoints(&self) -> Option<(f64, f64)> {
        self.constrained_endpoints
    }

    /// Evaluate the basis expansion at t in [0, 1].
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        let mut acc = 0.0;
        for (j, c) in self.coefficients.iter().enumerate() {
            acc += c * basis_value(j, t, &self.knots);
        }
        Ok(acc)
    }

    /// Analytic derivative of the basis expansion at t in [0, 1].
    pub fn eval_deriv(&self, t: f64) -> Result<f64> {
        check_domain(t)?;
        let mut acc = 0.0;
        for (j, c) in self.coefficients.iter().enumerate() {
            acc += c * basis_deriv(j, t, &self.knots);
        }
        Ok(acc)
    }
}

fn check_domain(t: f64) -> Result<()> {
    if !((-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&t)) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Basis function j: 1, t, t^2, t^3, then truncated cubics.
fn basis_value(j: usize, t: f64, knots: &[f64]) -> f64 {
    match j {
        0 => 1.0,
        1 => t,
        2 => t * t,
        3 => t * t * t,
        _ => {
            let d = t - knots[j - 4];
            if d > 0.0 {
                d * d * d
            } else {
                0.0
            }
        }
    }
}

fn basis_deriv(j: usize, t: f64, knots: &[f64]) -> f64 {
    match j {
        0 => 0.0,
        1 => 1.0,
        2 => 2.0 * t,
        3 => 3.0 * t * t,
        _ => {
            let d = t - knots[j - 4];
            if d > 0.0 {
                3.0 * d * d
            } else {
                0.0
            }
        }
    }
}

/// Interior knots at quantiles of the (positively weighted) fitting times,
/// perturbed to be strictly increasing inside (0, 1).
pub fn quantile_knots(ts: &[f64], df: usize) -> Vec<f64> {
    let m = df.saturating_sub(4);
    if m == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = ts.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut knots = Vec::with_capacity(m);
    for j in 1..=m {
        let q = j as f64 / (m + 1) as f64;
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        knots.push(sorted[lo] * (1.0 - frac) + sorted[hi] * frac);
    }
    // Keep knots strictly increasing and strictly inside (0, 1).
    for j in 0..m {
        let floor = if j == 0 {
            KNOT_MIN_SPACING
        } else {
            knots[j - 1] + KNOT_MIN_SPACING
        };
        if knots[j] < floor {
            knots[j] = floor;
        }
    }
    for j in (0..m).rev() {
        let ceil = if j == m - 1 {
            1.0 - KNOT_MIN_SPACING
        } else {
            knots[j + 1] - KNOT_MIN_SPACING
        };
        if knots[j] > ceil {
            knots[j] = ceil;
        }
    }
    knots
}

/// Weighted-least-squares fit with K degrees of freedom and knots at
/// quantiles of the positively weighted times.
pub fn fit_spline(
    ts: &[f64],
    ys: &[f64],
    weights: &[f64],
    df: usize,
    endpoint_constraint: Option<(f64, f64)>,
) -> Result<CoordinateSpline> {
    validate_inputs(ts, ys, weights, df)?;
    let active: Vec<f64> = ts
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&t, _)| t)
        .collect();
    let knots = quantile_knots(&active, df);
    fit_spline_with_knots(ts, ys, weights, df, knots, endpoint_constraint)
}

/// Weighted-least-squares fit with explicitly supplied interior knots.
pub fn fit_spline_with_knots(
    ts: &[f64],
    ys: &[f64],
    weights: &[f64],
    df: usize,
    knots: Vec<f64>,
    endpoint_constraint: Option<(f64, f64)>,
) -> Result<CoordinateSpline> {
    validate_inputs(ts, ys, weights, df)?;
    if knots.len() != df.saturating_sub(4) {
        return Err(Error::Precondition(format!(
            "{} knots supplied for df {}",
            knots.len(),
            df
        )));
    }

    let coefficients = match endpoint_constraint {
        None => {
            let cols: Vec<usize> = (0..df).collect();
            solve_wls(ts, ys, weights, &cols, &knots, |_, y| y)?
        }
        Some((y0, y1)) => {
            // Fit residuals against the chord with basis functions that
            // vanish at both endpoints, then add the chord back.
            let cols: Vec<usize> = (2..df).collect();
            let chord = |t: f64| y0 + (y1 - y0) * t;
            let tilde = solve_wls_constrained(ts, ys, weights, &cols, &knots, chord)?;
            let mut full = vec![0.0; df];
            full[0] = y0;
            let mut lin = y1 - y0;
            for (idx, &j) in cols.iter().enumerate() {
                full[j] = tilde[idx];
                lin -= tilde[idx] * basis_value(j, 1.0, &knots);
            }
            full[1] = lin;
            full
        }
    };

    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::DegenerateFit(
            "spline solve produced non-finite coefficients".into(),
        ));
    }
    Ok(CoordinateSpline {
        knots,
        coefficients,
        df,
        constrained_endpoints: endpoint_constraint,
    })
}

fn validate_inputs(ts: &[f64], ys: &[f64], weights: &[f64], df: usize) -> Result<()> {
    if df < 2 {
        return Err(Error::Precondition(format!("df {df} must be >= 2")));
    }
    if ts.len() != ys.len() || ts.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} times, {} values, {} weights",
            ts.len(),
            ys.len(),
            weights.len()
        )));
    }
    if ts.len() < df + 2 {
        return Err(Error::InsufficientData(format!(
            "{} points cannot support df {}",
            ts.len(),
            df
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Precondition(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Precondition("weights are all zero".into()));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&t, &w) in ts.iter().zip(weights) {
        if w > 0.0 {
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    if hi - lo < 1e-12 {
        return Err(Error::DegenerateFit(
            "all positively weighted times coincide".into(),
        ));
    }
    Ok(())
}

fn solve_wls(
    ts: &[f64],
    ys: &[f64],
    weights: &[f64],
    cols: &[usize],
    knots: &[f64],
    target: impl Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    let k = cols.len();
    let mut xtwx = DMatrix::zeros(k, k);
    let mut xtwy = DVector::zeros(k);
    let mut row = vec![0.0; k];
    for ((&t, &y), &w) in ts.iter().zip(ys).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, &j) in cols.iter().enumerate() {
            row[a] = basis_value(j, t, knots);
        }
        let yv = target(t, y);
        for a in 0..k {
            xtwy[a] += w * row[a] * yv;
            for b in a..k {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    cholesky_solve(xtwx, xtwy)
}

fn solve_wls_constrained(
    ts: &[f64],
    ys: &[f64],
    weights: &[f64],
    cols: &[usize],
    knots: &[f64],
    chord: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    if cols.is_empty() {
        return Ok(Vec::new());
    }
    let k = cols.len();
    let mut xtwx = DMatrix::zeros(k, k);
    let mut xtwy = DVector::zeros(k);
    let mut row = vec![0.0; k];
    for ((&t, &y), &w) in ts.iter().zip(ys).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (a, &j) in cols.iter().enumerate() {
            // Chord-corrected basis: vanishes at t = 0 and t = 1.
            row[a] = basis_value(j, t, knots) - basis_value(j, 1.0, knots) * t;
        }
        let r = y - chord(t);
        for a in 0..k {
            xtwy[a] += w * row[a] * r;
            for b in a..k {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    cholesky_solve(xtwx, xtwy)
}

fn cholesky_solve(mut xtwx: DMatrix<f64>, xtwy: DVector<f64>) -> Result<Vec<f64>> {
    let k = xtwx.nrows();
    let mut jitter = RIDGE_JITTER;
    for attempt in 0..4 {
        if attempt > 0 {
            for a in 0..k {
                xtwx[(a, a)] += jitter;
            }
            jitter *= 100.0;
        }
        if let Some(chol) = Cholesky::new(xtwx.clone()) {
            let sol = chol.solve(&xtwy);
            return Ok(sol.iter().copied().collect());
        }
    }
    Err(Error::DegenerateFit(
        "normal equations are not positive definite".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn uniform_ts(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    /// Independent oracle: dense unconstrained least squares on the same
    /// basis, solved by SVD instead of the normal equations.
    fn qr_oracle(ts: &[f64], ys: &[f64], df: usize) -> Vec<f64> {
        let knots = quantile_knots(ts, df);
        let n = ts.len();
        let x = DMatrix::from_fn(n, df, |i, j| basis_value(j, ts[i], &knots));
        let y = DVector::from_column_slice(ys);
        let sol = x.svd(true, true).solve(&y, 1e-13).unwrap();
        let spl = CoordinateSpline {
            knots,
            coefficients: sol.iter().copied().collect(),
            df,
            constrained_endpoints: None,
        };
        (0..=200).map(|i| spl.eval(i as f64 / 200.0).unwrap()).collect()
    }

    #[test]
    fn reproduces_affine_function() {
        let ts = uniform_ts(20);
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t + 1.0).collect();
        let w = vec![1.0; 20];
        let s = fit_spline(&ts, &ys, &w, 4, None).unwrap();
        assert_relative_eq!(s.eval(0.3).unwrap(), 1.6, epsilon = 1e-8);
        assert_relative_eq!(s.eval(0.0).unwrap(), 1.0, epsilon = 1e-8);
        assert_relative_eq!(s.eval_deriv(0.42).unwrap(), 2.0, epsilon = 1e-7);
    }

    #[test]
    fn consistent_endpoint_constraint_matches_unconstrained() {
        let ts = uniform_ts(20);
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * t + 1.0).collect();
        let w = vec![1.0; 20];
        let s = fit_spline(&ts, &ys, &w, 4, Some((1.0, 3.0))).unwrap();
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            assert_relative_eq!(s.eval(t).unwrap(), 2.0 * t + 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn sine_fit_matches_oracle_and_truth() {
        let ts = uniform_ts(200);
        let ys: Vec<f64> = ts.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).collect();
        let w = vec![1.0; 200];
        let s = fit_spline(&ts, &ys, &w, 8, None).unwrap();
        let oracle = qr_oracle(&ts, &ys, 8);
        let mut max_err_truth: f64 = 0.0;
        let mut max_err_oracle: f64 = 0.0;
        for i in 0..=200 {
            let t = i as f64 / 200.0;
            let v = s.eval(t).unwrap();
            max_err_truth = max_err_truth.max((v - (2.0 * std::f64::consts::PI * t).sin()).abs());
            max_err_oracle = max_err_oracle.max((v - oracle[i]).abs());
        }
        assert!(max_err_truth < 0.01, "max error vs sin = {max_err_truth}");
        assert!(max_err_oracle < 1e-7, "max error vs QR oracle = {max_err_oracle}");
        assert_relative_eq!(s.eval(0.25).unwrap(), 1.0, epsilon = 0.01);
        assert_relative_eq!(
            s.eval_deriv(0.5).unwrap(),
            -2.0 * std::f64::consts::PI,
            epsilon = 0.15
        );
    }

    #[test]
    fn constant_spline_evaluates_and_differentiates() {
        let s = CoordinateSpline {
            knots: vec![],
            coefficients: vec![5.0, 0.0],
            df: 2,
            constrained_endpoints: None,
        };
        assert_relative_eq!(s.eval(0.7).unwrap(), 5.0);
        assert_relative_eq!(s.eval_deriv(0.3).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors_outside_unit_interval() {
        let s = CoordinateSpline {
            knots: vec![],
            coefficients: vec![1.0, 1.0],
            df: 2,
            constrained_endpoints: None,
        };
        assert!(s.eval(1.5).is_err());
        assert!(s.eval(-0.1).is_err());
        assert!(s.eval_deriv(2.0).is_err());
    }

    #[test]
    fn degenerate_and_insufficient_inputs_error() {
        let ts = vec![0.5; 10];
        let ys = vec![1.0; 10];
        let w = vec![1.0; 10];
        assert!(matches!(
            fit_spline(&ts, &ys, &w, 4, None),
            Err(Error::DegenerateFit(_))
        ));
        let ts = uniform_ts(5);
        let ys = vec![1.0; 5];
        let w = vec![1.0; 5];
        assert!(matches!(
            fit_spline(&ts, &ys, &w, 6, None),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn analytic_derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ts = uniform_ts(120);
        let ys: Vec<f64> = ts
            .iter()
            .map(|t| (5.0 * t).sin() + 0.05 * rng.random::<f64>())
            .collect();
        let w = vec![1.0; 120];
        let s = fit_spline(&ts, &ys, &w, 7, None).unwrap();
        let h = 1e-6;
        for _ in 0..100 {
            let t = 0.01 + 0.98 * rng.random::<f64>();
            let fd = (s.eval(t + h).unwrap() - s.eval(t - h).unwrap()) / (2.0 * h);
            let an = s.eval_deriv(t).unwrap();
            let scale = an.abs().max(1.0);
            assert!((fd - an).abs() / scale < 1e-4, "t={t}: fd={fd} analytic={an}");
        }
    }

    #[test]
    fn zero_weight_equals_removed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ts = uniform_ts(40);
        let ys: Vec<f64> = ts.iter().map(|t| t * t + 0.1 * rng.random::<f64>()).collect();
        let mut w = vec![1.0; 40];
        w[17] = 0.0;
        let with_zero = fit_spline(&ts, &ys, &w, 6, None).unwrap();

        let ts2: Vec<f64> = ts.iter().enumerate().filter(|(i, _)| *i != 17).map(|(_, &t)| t).collect();
        let ys2: Vec<f64> = ys.iter().enumerate().filter(|(i, _)| *i != 17).map(|(_, &y)| y).collect();
        let w2 = vec![1.0; 39];
        let removed = fit_spline(&ts2, &ys2, &w2, 6, None).unwrap();
        for (a, b) in with_zero.coefficients().iter().zip(removed.coefficients()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn rss_never_increases_with_df_on_test_corpus() {
        let ts = uniform_ts(150);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let datasets: Vec<Vec<f64>> = vec![
            ts.iter().map(|t| 2.0 * t + 1.0).collect(),
            ts.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()).collect(),
            ts.iter().map(|t| (3.0 * t).cos() + 0.1 * rng.random::<f64>()).collect(),
        ];
        let w = vec![1.0; 150];
        // Nested knot sets so the fit spaces are genuinely nested; quantile
        // knots move with df and give no monotonicity guarantee.
        let knot_sets: [&[f64]; 6] = [
            &[],
            &[0.5],
            &[0.25, 0.5],
            &[0.25, 0.5, 0.75],
            &[0.125, 0.25, 0.5, 0.75],
            &[0.125, 0.25, 0.5, 0.75, 0.875],
        ];
        for ys in &datasets {
            let mut prev = f64::INFINITY;
            for knots in knot_sets {
                let df = 4 + knots.len();
                let s = fit_spline_with_knots(&ts, ys, &w, df, knots.to_vec(), None).unwrap();
                let rss: f64 = ts
                    .iter()
                    .zip(ys)
                    .map(|(&t, &y)| (s.eval(t).unwrap() - y).powi(2))
                    .sum();
                assert!(rss <= prev + 1e-9, "df={df}: rss {rss} > previous {prev}");
                prev = rss;
            }
        }
    }
}
