//! Class K / K-infinity comparison functions, their two-argument (class KK)
//! generalization, and monotone majorant fitting from sampled data.
//!
//! Fitted functions are piecewise linear with an `eps * r` slope lift: the
//! running max of the samples is closed under this family and strict
//! monotonicity is checkable exactly. Extension to r < 0 is odd-symmetric,
//! which gives the extended (K-infinity) limits.

use crate::domain::{self, DomainError, Grid, Sign};
use crate::expr::ExprError;
use crate::system::ScalarField;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance for "boundary rate is nonpositive" when fitting: grid
/// Nagumo checks carry discretization noise.
pub const TOL0: f64 = 1e-6;
/// Default slope lift eps for fitted majorants.
pub const LIFT: f64 = 1e-3;

#[derive(Debug, Clone, Error)]
pub enum ClasskError {
    /// No valid extended majorant exists: a boundary (r = 0) sample is
    /// positive beyond tolerance, i.e. Nagumo is violated at the boundary.
    #[error("no majorant: boundary sample at r=0{} has value {value:.6e} > tol", c.map(|c| format!(", c={c}")).unwrap_or_default())]
    Infeasible { c: Option<f64>, value: f64 },
    #[error("safe set is not compact in the working box")]
    NotCompact,
    #[error("bad samples: {0}")]
    BadSamples(String),
    #[error(transparent)]
    Eval(#[from] ExprError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// One-argument comparison function, extended to all of R by odd symmetry
/// for the piecewise-linear and power variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaFunction {
    Linear { c: f64 },
    Power { c: f64, p: f64 },
    PiecewiseLinear {
        /// Knots (r > 0 ascending, value); the segment from (0,0) to the
        /// first knot is implicit.
        knots: Vec<(f64, f64)>,
        tail_slope: f64,
    },
}

impl KappaFunction {
    pub fn linear(c: f64) -> KappaFunction {
        KappaFunction::Linear { c }
    }

    pub fn power(c: f64, p: f64) -> KappaFunction {
        KappaFunction::Power { c, p }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            KappaFunction::Linear { c } => c * r,
            KappaFunction::Power { c, p } => c * r.signum() * r.abs().powf(*p),
            KappaFunction::PiecewiseLinear { knots, tail_slope } => {
                if r < 0.0 {
                    return -self.eval(-r);
                }
                if r == 0.0 {
                    return 0.0;
                }
                let mut prev = (0.0, 0.0);
                for &(rk, vk) in knots {
                    if r <= rk {
                        let t = (r - prev.0) / (rk - prev.0);
                        return prev.1 + t * (vk - prev.1);
                    }
                    prev = (rk, vk);
                }
                prev.1 + tail_slope * (r - prev.0)
            }
        }
    }
}

/// Two-argument comparison function alpha(r, s): strictly increasing in r,
/// nondecreasing (strictly increasing for r != 0) in s >= 0, zero at r = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KappaKappaFunction {
    /// alpha(r) * (s + 1); restriction to s = 0 reproduces alpha.
    Separable { alpha: KappaFunction },
    /// c * r * s + eps * r.
    Product { c: f64, eps: f64 },
    Tabulated(Tabulated),
}

impl KappaKappaFunction {
    pub fn product(c: f64) -> KappaKappaFunction {
        KappaKappaFunction::Product { c, eps: LIFT }
    }

    pub fn eval(&self, r: f64, s: f64) -> f64 {
        let s = s.max(0.0);
        match self {
            KappaKappaFunction::Separable { alpha } => alpha.eval(r) * (s + 1.0),
            KappaKappaFunction::Product { c, eps } => c * r * s + eps * r,
            KappaKappaFunction::Tabulated(t) => t.eval(r, s),
        }
    }
}

/// Grid of majorant base values over (r, c) plus an `lift * r * (1 + s)`
/// strict-monotonicity lift and completion slopes beyond the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tabulated {
    r_knots: Vec<f64>,
    c_knots: Vec<f64>,
    /// base[i][j]; nondecreasing in both indices, first row identically 0.
    base: Vec<Vec<f64>>,
    lift: f64,
    r_tail_slope: f64,
}

impl Tabulated {
    fn eval(&self, r: f64, s: f64) -> f64 {
        if r < 0.0 {
            return -self.eval(-r, s);
        }
        if r == 0.0 {
            return 0.0;
        }
        let r_max = *self.r_knots.last().unwrap();
        let tail = if r > r_max {
            self.r_tail_slope * (r - r_max)
        } else {
            0.0
        };
        let rq = r.min(r_max);
        let sq = s.clamp(self.c_knots[0], *self.c_knots.last().unwrap());
        let (i, tr) = segment(&self.r_knots, rq);
        let (j, tc) = segment(&self.c_knots, sq);
        let b00 = self.base[i][j];
        let b10 = self.base[i + 1][j];
        let b01 = self.base[i][j + 1];
        let b11 = self.base[i + 1][j + 1];
        let base = b00 * (1.0 - tr) * (1.0 - tc)
            + b10 * tr * (1.0 - tc)
            + b01 * (1.0 - tr) * tc
            + b11 * tr * tc;
        base + tail + self.lift * r * (1.0 + s)
    }
}

fn segment(knots: &[f64], v: f64) -> (usize, f64) {
    let last = knots.len() - 1;
    match knots.binary_search_by(|k| k.partial_cmp(&v).unwrap()) {
        Ok(i) => {
            if i == last {
                (last - 1, 1.0)
            } else {
                (i, 0.0)
            }
        }
        Err(i) => {
            let i = i.clamp(1, last) - 1;
            let t = (v - knots[i]) / (knots[i + 1] - knots[i]);
            (i, t.clamp(0.0, 1.0))
        }
    }
}

/// Fit an extended piecewise-linear majorant of `(r, v)` samples: alpha(0)=0,
/// alpha(r_i) = max(running-max v, 0) + eps * r_i, strictly increasing, linear
/// tail. Infeasible exactly when some r = 0 sample exceeds `tol0`.
pub fn fit_majorant(
    samples: &[(f64, f64)],
    tol0: f64,
    eps: f64,
) -> Result<KappaFunction, ClasskError> {
    let mut prev_r = f64::NEG_INFINITY;
    for &(r, _) in samples {
        if r < 0.0 {
            return Err(ClasskError::BadSamples(format!("negative sample r={r}")));
        }
        if r <= prev_r {
            return Err(ClasskError::BadSamples("samples must be sorted with distinct r".into()));
        }
        prev_r = r;
    }
    for &(r, v) in samples {
        if r == 0.0 && v > tol0 {
            return Err(ClasskError::Infeasible { c: None, value: v });
        }
    }
    let mut knots = Vec::new();
    let mut running = f64::NEG_INFINITY;
    for &(r, v) in samples {
        if r == 0.0 {
            continue;
        }
        running = running.max(v);
        knots.push((r, running.max(0.0) + eps * r));
    }
    let tail_slope = match knots.len() {
        0 => eps,
        1 => (knots[0].1 / knots[0].0).max(eps),
        n => {
            let (r0, v0) = knots[n - 2];
            let (r1, v1) = knots[n - 1];
            ((v1 - v0) / (r1 - r0)).max(eps)
        }
    };
    Ok(KappaFunction::PiecewiseLinear { knots, tail_slope })
}

/// Rectangular samples over (r, c); `v[i][j]` is None where no sample exists
/// (e.g. an empty band at that level).
#[derive(Debug, Clone)]
pub struct KkSamples {
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<Vec<Option<f64>>>,
}

/// Fit a tabulated majorant of the doubly-running-max of the samples,
/// strictly increasing in both arguments (via the eps lift), zero on the
/// r = 0 row. Infeasible iff some (0, c) sample exceeds `tol0`.
pub fn fit_kk_majorant(
    samples: &KkSamples,
    tol0: f64,
    eps: f64,
) -> Result<KappaKappaFunction, ClasskError> {
    if samples.r.is_empty() || samples.c.is_empty() {
        return Err(ClasskError::BadSamples("empty sample grid".into()));
    }
    if samples.r.windows(2).any(|w| w[0] >= w[1]) || samples.c.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ClasskError::BadSamples("r and c grids must be strictly increasing".into()));
    }
    if samples.r[0] < 0.0 || samples.c[0] < 0.0 {
        return Err(ClasskError::BadSamples("r and c must be nonnegative".into()));
    }
    if samples.v.len() != samples.r.len()
        || samples.v.iter().any(|row| row.len() != samples.c.len())
    {
        return Err(ClasskError::BadSamples("value shape mismatch".into()));
    }

    for (j, &c) in samples.c.iter().enumerate() {
        if samples.r[0] == 0.0 {
            if let Some(v) = samples.v[0][j] {
                if v > tol0 {
                    return Err(ClasskError::Infeasible { c: Some(c), value: v });
                }
            }
        }
    }

    // running max across both indices; the r = 0 row is pinned to zero
    let has_zero_row = samples.r[0] == 0.0;
    let mut r_knots = samples.r.clone();
    if !has_zero_row {
        r_knots.insert(0, 0.0);
    }
    let nr = r_knots.len();
    let nc = samples.c.len();
    let mut base = vec![vec![0.0f64; nc]; nr];
    let mut running = vec![f64::NEG_INFINITY; nc];
    for i in 1..nr {
        let src = if has_zero_row { i } else { i - 1 };
        // skip the source row when it is the pinned r = 0 row
        let row = &samples.v[src];
        let mut row_max = f64::NEG_INFINITY;
        for j in 0..nc {
            if src > 0 || !has_zero_row {
                if let Some(v) = row[j] {
                    running[j] = running[j].max(v);
                }
            }
            row_max = row_max.max(running[j]);
            base[i][j] = row_max.max(0.0);
        }
    }

    let r_tail_slope = if nr >= 2 {
        let dr = r_knots[nr - 1] - r_knots[nr - 2];
        (0..nc)
            .map(|j| (base[nr - 1][j] - base[nr - 2][j]) / dr)
            .fold(eps, f64::max)
    } else {
        eps
    };

    Ok(KappaKappaFunction::Tabulated(Tabulated {
        r_knots,
        c_knots: samples.c.clone(),
        base,
        lift: eps,
        r_tail_slope,
    }))
}

/// CBF comparison function to eCBF comparison function: alpha(r) * (s + 1).
pub fn cbf_alpha_to_ecbf(alpha: KappaFunction) -> KappaKappaFunction {
    KappaKappaFunction::Separable { alpha }
}

/// eCBF comparison function to CBF comparison function over a verified
/// compact safe set: piecewise-linear majorant of
/// `r -> sup { alpha(r, |x|) : 0 <= h(x) <= r }` sampled on the grid.
pub fn ecbf_alpha_to_cbf(
    alpha: &KappaKappaFunction,
    h: &ScalarField,
    grid: &Grid,
    r_grid: &[f64],
    tol0: f64,
    eps: f64,
) -> Result<KappaFunction, ClasskError> {
    let report = domain::flood_fill(|x| h.eval(x), grid, Sign::Nonnegative)?;
    if report.components.iter().any(|c| !c.bounded()) {
        return Err(ClasskError::NotCompact);
    }
    let h_vals = grid.eval_all(|x| h.eval(x))?;
    let norms: Vec<f64> = (0..grid.len())
        .map(|i| {
            let p = grid.point_vec(i);
            p.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .collect();
    let mut samples = Vec::new();
    for &r in r_grid {
        let mut sup = f64::NEG_INFINITY;
        for (hv, nx) in h_vals.iter().zip(&norms) {
            if *hv >= 0.0 && *hv <= r {
                sup = sup.max(alpha.eval(r, *nx));
            }
        }
        if sup > f64::NEG_INFINITY {
            samples.push((r, sup));
        }
    }
    fit_majorant(&samples, tol0, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BoxRegion;
    use crate::expr::parse;
    use approx::assert_relative_eq;

    fn assert_kappa_valid(alpha: &KappaFunction, r_max: f64) {
        assert_eq!(alpha.eval(0.0), 0.0);
        let mut prev = alpha.eval(-1e-12);
        assert!(prev < 0.0 || prev == 0.0);
        let n = 1000;
        prev = f64::NEG_INFINITY;
        for k in 0..=n {
            let r = -r_max + 2.0 * r_max * k as f64 / n as f64;
            let v = alpha.eval(r);
            assert!(v > prev, "not strictly increasing at r={r}");
            assert_relative_eq!(alpha.eval(-r), -v, epsilon = 1e-12);
            prev = v;
        }
    }

    #[test]
    fn all_nonpositive_samples_fit_to_linear_lift() {
        let samples: Vec<(f64, f64)> = (0..=10).map(|k| (k as f64, -1.0 - k as f64)).collect();
        let alpha = fit_majorant(&samples, TOL0, LIFT).unwrap();
        for k in 0..=10 {
            let r = k as f64;
            assert_relative_eq!(alpha.eval(r), LIFT * r, epsilon = 1e-12);
        }
        assert_kappa_valid(&alpha, 20.0);
    }

    #[test]
    fn positive_sample_at_zero_is_infeasible() {
        let result = fit_majorant(&[(0.0, 1.0)], TOL0, LIFT);
        assert!(matches!(result, Err(ClasskError::Infeasible { value, .. }) if value == 1.0));
    }

    #[test]
    fn running_max_construction_by_hand() {
        let alpha = fit_majorant(&[(0.0, -1.0), (1.0, 0.5), (2.0, 0.2)], TOL0, LIFT).unwrap();
        assert!(alpha.eval(1.0) >= 0.5 + LIFT - 1e-12);
        assert!(alpha.eval(2.0) >= 0.5 + 2.0 * LIFT - 1e-12);
        assert!(alpha.eval(2.0) > alpha.eval(1.0));
        assert_kappa_valid(&alpha, 10.0);
        // majorizes every sample
        for (r, v) in [(0.0, -1.0), (1.0, 0.5), (2.0, 0.2)] {
            assert!(alpha.eval(r) >= v);
        }
    }

    #[test]
    fn infeasible_iff_zero_sample_exceeds_tol() {
        // positive direction
        assert!(fit_majorant(&[(0.0, 2.0 * TOL0), (1.0, 5.0)], TOL0, LIFT).is_err());
        // negative direction: anything else fits
        assert!(fit_majorant(&[(0.0, TOL0 / 2.0), (1.0, 1e9)], TOL0, LIFT).is_ok());
        assert!(fit_majorant(&[(1.0, 1e9), (2.0, -3.0)], TOL0, LIFT).is_ok());
    }

    #[test]
    fn kk_feasible_when_zero_row_is_nonpositive() {
        // h = x with u = 0 on the slice x = 0 has rate 1, so alpha_hat(0, c) = -1
        let samples = KkSamples {
            r: vec![0.0, 1.0, 2.0],
            c: vec![0.0, 1.0],
            v: vec![
                vec![Some(-1.0), Some(-1.0)],
                vec![Some(3.0), Some(5.0)],
                vec![Some(4.0), Some(4.5)],
            ],
        };
        let alpha = fit_kk_majorant(&samples, TOL0, LIFT).unwrap();
        assert_eq!(alpha.eval(0.0, 0.5), 0.0);
        for (i, &r) in samples.r.iter().enumerate() {
            for (j, &c) in samples.c.iter().enumerate() {
                if r > 0.0 {
                    assert!(alpha.eval(r, c) >= samples.v[i][j].unwrap());
                }
            }
        }
        // strictly increasing in r at fixed s, and in s at fixed r > 0
        let mut prev = -1.0;
        for k in 0..40 {
            let v = alpha.eval(0.1 * k as f64, 0.7);
            assert!(v > prev);
            prev = v;
        }
        prev = alpha.eval(1.5, 0.0) - 1e-15;
        for k in 0..40 {
            let v = alpha.eval(1.5, 0.1 * k as f64);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn kk_positive_zero_sample_is_infeasible() {
        let samples = KkSamples {
            r: vec![0.0, 1.0],
            c: vec![0.0],
            v: vec![vec![Some(0.5)], vec![Some(1.0)]],
        };
        assert!(matches!(
            fit_kk_majorant(&samples, TOL0, LIFT),
            Err(ClasskError::Infeasible { value, .. }) if value == 0.5
        ));
    }

    #[test]
    fn product_form_majorizes_wrong_candidate_margin() {
        // alpha(r, s) = r s majorizes -x*sqrt(x^2+y^2) samples on x in [0,2]
        let alpha = KappaKappaFunction::product(1.0);
        for i in 0..=20 {
            for j in 0..=20 {
                let x = 0.1 * i as f64;
                let y = -5.0 + 0.5 * j as f64;
                let n = (x * x + y * y).sqrt();
                if n <= 5.0 {
                    let margin = -x * n;
                    assert!(alpha.eval(x, n) >= margin);
                }
            }
        }
    }

    #[test]
    fn separable_conversion_matches_paper_formula() {
        let alpha = cbf_alpha_to_ecbf(KappaFunction::linear(1.0));
        assert_relative_eq!(alpha.eval(2.0, 3.0), 8.0);
        for k in 0..10 {
            let r = 0.3 * k as f64;
            assert_relative_eq!(alpha.eval(r, 0.0), r); // s = 0 reproduces alpha
        }
        let cubic = cbf_alpha_to_ecbf(KappaFunction::power(1.0, 3.0));
        assert_relative_eq!(cubic.eval(1.0, 1.0), 2.0);
    }

    #[test]
    fn ecbf_to_cbf_on_compact_disk() {
        let h = ScalarField::from_expression(parse("10 - x^2 - y^2", &["x", "y"]).unwrap());
        let grid = Grid::new(
            BoxRegion::new(&[(-4.0, 4.0), (-4.0, 4.0)]).unwrap(),
            &[161, 161],
        )
        .unwrap();
        let alpha = KappaKappaFunction::product(1.0);
        let r_grid: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let tilde = ecbf_alpha_to_cbf(&alpha, &h, &grid, &r_grid, TOL0, LIFT).unwrap();
        let sup_norm = 10f64.sqrt();
        for &r in &r_grid {
            if r == 0.0 {
                continue;
            }
            assert!(
                tilde.eval(r) <= r * sup_norm * (1.0 + 3.0 * LIFT),
                "r={r}: {} vs {}",
                tilde.eval(r),
                r * sup_norm
            );
        }
        assert_kappa_valid(&tilde, 12.0);
    }

    #[test]
    fn ecbf_to_cbf_rejects_unbounded_safe_set() {
        let h = ScalarField::from_expression(parse("x", &["x", "y"]).unwrap());
        let grid = Grid::new(
            BoxRegion::new(&[(-4.0, 4.0), (-4.0, 4.0)]).unwrap(),
            &[81, 81],
        )
        .unwrap();
        let alpha = KappaKappaFunction::product(1.0);
        let result = ecbf_alpha_to_cbf(&alpha, &h, &grid, &[0.0, 1.0], TOL0, LIFT);
        assert!(matches!(result, Err(ClasskError::NotCompact)));
    }

    #[test]
    fn s_independent_alpha_round_trips_up_to_lift() {
        let h = ScalarField::from_expression(parse("10 - x^2 - y^2", &["x", "y"]).unwrap());
        let grid = Grid::new(
            BoxRegion::new(&[(-4.0, 4.0), (-4.0, 4.0)]).unwrap(),
            &[161, 161],
        )
        .unwrap();
        // product with c = 0 ignores s: alpha(r, s) = eps * r
        let alpha = KappaKappaFunction::product(0.0);
        let tilde = ecbf_alpha_to_cbf(&alpha, &h, &grid, &[0.0, 1.0, 2.0, 4.0], TOL0, LIFT).unwrap();
        for r in [1.0, 2.0, 4.0] {
            assert!((tilde.eval(r) - 2.0 * LIFT * r).abs() <= LIFT * r + 1e-12);
        }
    }
}
