//! Errors-in-variables estimation of a noise-corrupted PAR model.
//!
//! The noise variance is chosen to make the low-order Yule-Walker solution
//! satisfy the high-order equations as closely as possible; coefficients and
//! innovation variances then follow from the low-order equations shifted by
//! the estimated noise variance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[cfg(feature = "serde")]
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::linalg;
use crate::model::ParSpec;

/// Floor applied to the innovation variance when a fit is turned into a
/// model for density evaluation.
pub const MIN_INNOVATION_VARIANCE: f64 = 1e-8;

/// Condition number above which a phase is flagged as ill-posed.
pub const ILL_CONDITIONED: f64 = 1e10;

fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

fn ceil_div(a: i64, b: i64) -> i64 {
    -(-a).div_euclid(b)
}

/// Sum of the empirical periodic autocovariance, `None` on an empty range.
fn pacvf_sum(values: &[f64], period: usize, w: i64, k: i64) -> Option<f64> {
    let t = period as i64;
    let len = values.len() as i64;
    let l = ceil_div(1 - w, t).max(ceil_div(1 - (w - k), t));
    let r = floor_div(len - w, t).min(floor_div(len - (w - k), t));
    if r < l {
        return None;
    }
    let sum = (l..=r)
        .map(|n| {
            let i = n * t + w;
            values[(i - 1) as usize] * values[(i - k - 1) as usize]
        })
        .sum();
    Some(sum)
}

/// `gamma(w, k) = (1/N) sum_n y_{nT+w} y_{nT+w-k}` with `N = len / T` and
/// the sum over every `n` keeping both indices inside the sample. Both `w`
/// and `k` may be any integers; an empty sum gives 0 and a warning.
pub fn empirical_pacvf(values: &[f64], period: usize, w: i64, k: i64) -> f64 {
    if period == 0 || values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64 / period as f64;
    match pacvf_sum(values, period, w, k) {
        Some(s) => s / n,
        None => {
            Warning::EmptyAutocovarianceSum { phase: w, lag: k }.emit();
            0.0
        }
    }
}

/// Empirical periodic autocovariances for phases `1..=T` and lags
/// `k_min..=k_max`.
///
/// Shifting the phase by a multiple of `T` leaves the defining sum
/// unchanged, so [`PacvfTable::get`] accepts any phase.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct PacvfTable {
    period: usize,
    n_obs: usize,
    k_min: i64,
    k_max: i64,
    // row per phase, column per lag
    values: Vec<f64>,
    warnings: Vec<Warning>,
}

impl PacvfTable {
    pub fn new(values: &[f64], period: usize, k_min: i64, k_max: i64) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        if k_max < k_min {
            return Err(Error::InvalidArgument(format!("empty lag range {k_min}..={k_max}")));
        }
        let n = values.len() as f64 / period as f64;
        let mut table = Vec::with_capacity(period * (k_max - k_min + 1) as usize);
        let mut warnings = Vec::new();
        for w in 1..=period as i64 {
            for k in k_min..=k_max {
                match pacvf_sum(values, period, w, k) {
                    Some(s) => table.push(s / n),
                    None => {
                        warnings.push(Warning::EmptyAutocovarianceSum { phase: w, lag: k }.emit());
                        table.push(0.0);
                    }
                }
            }
        }
        Ok(PacvfTable {
            period,
            n_obs: values.len(),
            k_min,
            k_max,
            values: table,
            warnings,
        })
    }

    /// Table covering every lag the estimator needs for order `p` and `s`
    /// high-order equations.
    pub fn for_order(values: &[f64], period: usize, p: usize, s: usize) -> Result<Self> {
        Self::new(values, period, 1 - p as i64, (p + s) as i64)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn lag_range(&self) -> (i64, i64) {
        (self.k_min, self.k_max)
    }

    pub fn warnings(&self) -> &[Warning] {
        &self.warnings
    }

    /// `gamma(w, k)`, `None` when the lag is outside the table.
    pub fn get(&self, w: i64, k: i64) -> Option<f64> {
        if k < self.k_min || k > self.k_max {
            return None;
        }
        let phase = w.rem_euclid(self.period as i64) as usize;
        // phase 0 is phase T
        let row = if phase == 0 { self.period - 1 } else { phase - 1 };
        let width = (self.k_max - self.k_min + 1) as usize;
        Some(self.values[row * width + (k - self.k_min) as usize])
    }

    fn lag(&self, w: i64, k: i64) -> Result<f64> {
        self.get(w, k).ok_or_else(|| {
            Error::InsufficientData(format!(
                "lag {k} outside the autocovariance table {}..={}",
                self.k_min, self.k_max
            ))
        })
    }
}

/// Low-order system `(Gamma_v)_{ij} = gamma(v-i, j-i)`,
/// `gamma_v = [gamma(v,1), ..., gamma(v,p)]`.
pub fn build_low_order_yw(table: &PacvfTable, v: usize, p: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let v = v as i64;
    let mut m = DMatrix::zeros(p, p);
    for i in 1..=p {
        for j in 1..=p {
            m[(i - 1, j - 1)] = table.lag(v - i as i64, j as i64 - i as i64)?;
        }
    }
    let mut g = DVector::zeros(p);
    for i in 1..=p {
        g[i - 1] = table.lag(v, i as i64)?;
    }
    Ok((m, g))
}

/// High-order system `(G~_v)_{ij} = gamma(v-j, p+i-j)` (`s x p`),
/// `g~_v = [gamma(v,p+1), ..., gamma(v,p+s)]`.
pub fn build_high_order_yw(table: &PacvfTable, v: usize, p: usize, s: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (v, pi) = (v as i64, p as i64);
    let mut m = DMatrix::zeros(s, p);
    for i in 1..=s {
        for j in 1..=p {
            m[(i - 1, j - 1)] = table.lag(v - j as i64, pi + i as i64 - j as i64)?;
        }
    }
    let mut g = DVector::zeros(s);
    for i in 1..=s {
        g[i - 1] = table.lag(v, pi + i as i64)?;
    }
    Ok((m, g))
}

/// `[[gamma(v,0), gamma_v'], [gamma_v, Gamma_v]]`.
fn bound_matrix(table: &PacvfTable, v: usize, p: usize) -> Result<DMatrix<f64>> {
    let (low, rhs) = build_low_order_yw(table, v, p)?;
    let mut g = DMatrix::zeros(p + 1, p + 1);
    g[(0, 0)] = table.lag(v as i64, 0)?;
    for i in 0..p {
        g[(0, i + 1)] = rhs[i];
        g[(i + 1, 0)] = rhs[i];
        for j in 0..p {
            g[(i + 1, j + 1)] = low[(i, j)];
        }
    }
    Ok(g)
}

/// Upper bound on the admissible noise variance: the smallest eigenvalue
/// over phases of the bordered low-order matrix, floored at 0.
pub fn zeta_bound(table: &PacvfTable, p: usize) -> Result<f64> {
    let mut zeta = f64::INFINITY;
    for v in 1..=table.period() {
        zeta = zeta.min(linalg::min_symmetric_eigenvalue(&bound_matrix(table, v, p)?));
    }
    Ok(if zeta > 0.0 { zeta } else { 0.0 })
}

/// Per-phase systems of the estimator.
#[derive(Debug, Clone)]
struct PhaseSystems {
    low: DMatrix<f64>,
    rhs: DVector<f64>,
    high: DMatrix<f64>,
    high_rhs: DVector<f64>,
}

impl PhaseSystems {
    fn build(table: &PacvfTable, p: usize, s: usize) -> Result<Vec<Self>> {
        (1..=table.period())
            .map(|v| {
                let (low, rhs) = build_low_order_yw(table, v, p)?;
                let (high, high_rhs) = build_high_order_yw(table, v, p, s)?;
                Ok(PhaseSystems {
                    low,
                    rhs,
                    high,
                    high_rhs,
                })
            })
            .collect()
    }

    fn shifted(&self, sigma2: f64) -> DMatrix<f64> {
        let mut m = self.low.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= sigma2;
        }
        m
    }

    fn cost(&self, sigma2: f64) -> f64 {
        match linalg::solve(&self.shifted(sigma2), &self.rhs) {
            Some(phi) => (&self.high * phi - &self.high_rhs).norm_squared(),
            None => f64::INFINITY,
        }
    }

    /// `dJ_v / dsigma2 = 2 r' G~ (Gamma_v - sigma2 I)^{-1} Phi_v`.
    fn slope(&self, sigma2: f64) -> f64 {
        let shifted = self.shifted(sigma2);
        let Some(phi) = linalg::solve(&shifted, &self.rhs) else {
            return f64::NAN;
        };
        let Some(dphi) = linalg::solve(&shifted, &phi) else {
            return f64::NAN;
        };
        2.0 * (&self.high * phi - &self.high_rhs).dot(&(&self.high * dphi))
    }
}

fn total_slope(systems: &[PhaseSystems], sigma2: f64) -> f64 {
    systems.iter().map(|s| s.slope(sigma2)).sum()
}

/// Bisection on the sign of the cost slope, when it goes from negative at
/// `lo` to positive at `hi`. Runs until the midpoint no longer moves.
fn slope_root(systems: &[PhaseSystems], mut lo: f64, mut hi: f64) -> Option<f64> {
    let (s_lo, s_hi) = (total_slope(systems, lo), total_slope(systems, hi));
    if !(s_lo < 0.0 && s_hi > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s = total_slope(systems, mid);
        if s.is_nan() {
            return None;
        }
        if s < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn total_cost(systems: &[PhaseSystems], sigma2: f64) -> f64 {
    let j: f64 = systems.iter().map(|s| s.cost(sigma2)).sum();
    if j.is_finite() {
        j
    } else {
        f64::INFINITY
    }
}

/// High-order cost `J(sigma2) = sum_v |G~_v Phi_v(sigma2) - g~_v|^2` with
/// `Phi_v(sigma2)` the shifted low-order solution; `+inf` when a shifted
/// matrix is singular.
pub fn eiv_cost(table: &PacvfTable, p: usize, s: usize, sigma2: f64) -> Result<f64> {
    Ok(total_cost(&PhaseSystems::build(table, p, s)?, sigma2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct EstimatorOptions {
    /// Number of high-order equations; `None` means `s = p`.
    pub s: Option<usize>,
    /// Points of the initial sweep over `[0, zeta]`.
    pub grid_points: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            s: None,
            grid_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct EstimationResult {
    pub period: usize,
    pub order: usize,
    pub s: usize,
    pub n_obs: usize,
    /// Row `v-1` holds `phi_1(v), ..., phi_p(v)`.
    pub phi_hat: Vec<Vec<f64>>,
    pub sigma_z2_hat: f64,
    pub sigma_xi2_hat_per_phase: Vec<f64>,
    pub sigma_xi2_hat: f64,
    pub zeta: f64,
    /// `(sigma2, J)` at the sweep points.
    pub cost_curve: Vec<(f64, f64)>,
    pub cost_at_estimate: f64,
    /// Condition numbers of the shifted low-order matrices.
    pub condition_numbers: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl EstimationResult {
    /// Fitted model with the innovation variance floored at
    /// [`MIN_INNOVATION_VARIANCE`].
    pub fn to_spec(&self) -> Result<ParSpec> {
        let s2 = if self.sigma_xi2_hat.is_finite() {
            self.sigma_xi2_hat.max(MIN_INNOVATION_VARIANCE)
        } else {
            return Err(Error::InvalidModel("non-finite innovation variance".into()));
        };
        ParSpec::new(self.phi_hat.clone(), s2)
    }

    pub fn degenerate_bound(&self) -> bool {
        self.warnings
            .iter()
            .any(|w| matches!(w, Warning::DegenerateBound { .. }))
    }
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Fits a noise-corrupted PAR(`p`) model of period `period` to `values`.
///
/// The noise variance minimises the high-order cost over `[0, zeta]`: a
/// uniform sweep first, then refinement between the neighbours of the best
/// sweep point: bisection on the sign of the analytic cost slope when it
/// brackets a root there, golden-section search down to a width of
/// `1e-9 zeta` otherwise.
pub fn estimate_eiv(values: &[f64], period: usize, p: usize, opts: &EstimatorOptions) -> Result<EstimationResult> {
    if p == 0 || p >= period {
        return Err(Error::InvalidModel(format!(
            "order {p} must satisfy 1 <= p < T = {period}"
        )));
    }
    let s = opts.s.unwrap_or(p);
    if s < p {
        return Err(Error::InvalidArgument(format!("s = {s} must be at least p = {p}")));
    }
    if opts.grid_points < 2 {
        return Err(Error::InvalidArgument("the cost sweep needs at least 2 points".into()));
    }
    if values.len() < 10 * period * p {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {} for T = {period}, p = {p}",
            values.len(),
            10 * period * p
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }

    let table = PacvfTable::for_order(values, period, p, s)?;
    let mut warnings = table.warnings().to_vec();
    let systems = PhaseSystems::build(&table, p, s)?;
    let zeta = zeta_bound(&table, p)?;

    let (sigma_z2, cost_at_estimate, cost_curve) = if zeta > 0.0 {
        let n = opts.grid_points;
        let curve: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = if i + 1 == n {
                    zeta
                } else {
                    zeta * i as f64 / (n - 1) as f64
                };
                (x, total_cost(&systems, x))
            })
            .collect();
        let best = curve
            .iter()
            .enumerate()
            .filter(|(_, (_, j))| j.is_finite())
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .map(|(i, _)| i);
        match best {
            Some(b) => {
                let lo = curve[b.saturating_sub(1)].0;
                let hi = curve[(b + 1).min(n - 1)].0;
                let (x, fx) = match slope_root(&systems, lo, hi) {
                    Some(x) => (x, total_cost(&systems, x)),
                    None => golden_section(|x| total_cost(&systems, x), lo, hi, 1e-9 * zeta),
                };
                let (grid_x, grid_f) = curve[b];
                if fx < grid_f {
                    (x, fx, curve)
                } else {
                    (grid_x, grid_f, curve)
                }
            }
            None => (0.0, f64::INFINITY, curve),
        }
    } else {
        warnings.push(Warning::DegenerateBound { zeta }.emit());
        let j0 = total_cost(&systems, 0.0);
        (0.0, j0, vec![(0.0, j0)])
    };

    let mut phi_hat = Vec::with_capacity(period);
    let mut per_phase = Vec::with_capacity(period);
    let mut condition_numbers = Vec::with_capacity(period);
    for (idx, sys) in systems.iter().enumerate() {
        let v = idx + 1;
        let shifted = sys.shifted(sigma_z2);
        let cond = linalg::condition_number(&shifted);
        condition_numbers.push(cond);
        let phi = match linalg::solve(&shifted, &sys.rhs) {
            Some(phi) if cond <= ILL_CONDITIONED => phi,
            other => {
                warnings.push(
                    Warning::IllConditioned {
                        phase: v,
                        condition: cond,
                    }
                    .emit(),
                );
                match other {
                    Some(phi) => phi,
                    None => linalg::pseudo_solve(&shifted, &sys.rhs).ok_or(Error::Singular)?,
                }
            }
        };
        let gamma0 = table.lag(v as i64, 0)?;
        let s2 = gamma0 - phi.dot(&sys.rhs) - sigma_z2;
        if s2 < 0.0 {
            warnings.push(Warning::NegativeInnovationVariance { phase: v, value: s2 }.emit());
        }
        per_phase.push(s2);
        phi_hat.push(phi.iter().copied().collect());
    }
    let sigma_xi2_hat = per_phase.iter().sum::<f64>() / period as f64;

    Ok(EstimationResult {
        period,
        order: p,
        s,
        n_obs: values.len(),
        phi_hat,
        sigma_z2_hat: sigma_z2,
        sigma_xi2_hat_per_phase: per_phase,
        sigma_xi2_hat,
        zeta,
        cost_curve,
        cost_at_estimate,
        condition_numbers,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_autocovariance() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_pacvf(&y, 2, 1, 0), 5.0);
        // phase 2, lag 1: y2*y1 + y4*y3
        assert_eq!(empirical_pacvf(&y, 2, 2, 1), (2.0 + 12.0) / 2.0);
        // phase 1, lag 1: only y3*y2
        assert_eq!(empirical_pacvf(&y, 2, 1, 1), 3.0);
        // lag beyond the sample
        assert_eq!(empirical_pacvf(&y, 2, 1, 9), 0.0);
    }

    #[test]
    fn zero_series() {
        let y = vec![0.0; 40];
        let t = PacvfTable::new(&y, 4, -2, 5).unwrap();
        for w in 1..=4 {
            for k in -2..=5 {
                assert_eq!(t.get(w, k), Some(0.0));
            }
        }
        assert_eq!(zeta_bound(&t, 2).unwrap(), 0.0);
    }

    #[test]
    fn table_is_periodic_in_phase_and_symmetric() {
        let y: Vec<f64> = (0..37)
            .map(|i| crate::math::sin(i as f64 * 1.3) + 0.1 * i as f64)
            .collect();
        let t = PacvfTable::new(&y, 3, -3, 3).unwrap();
        for w in -5..8 {
            for k in -3..=3 {
                assert_eq!(t.get(w, k).unwrap(), empirical_pacvf(&y, 3, w, k));
                assert_eq!(t.get(w, k), t.get(w + 3, k));
                if k.abs() <= 3 {
                    assert_eq!(t.get(w, k).unwrap(), t.get(w - k, -k).unwrap());
                }
            }
        }
        assert_eq!(t.get(1, 4), None);
    }

    #[test]
    fn order_one_systems() {
        let y: Vec<f64> = (0..20).map(|i| (i % 7) as f64 - 3.0).collect();
        let t = PacvfTable::for_order(&y, 2, 1, 1).unwrap();
        let (m, g) = build_low_order_yw(&t, 2, 1).unwrap();
        assert_eq!(m[(0, 0)], t.get(1, 0).unwrap());
        assert_eq!(g[0], t.get(2, 1).unwrap());
        let (h, hg) = build_high_order_yw(&t, 2, 1, 1).unwrap();
        assert_eq!(h[(0, 0)], t.get(1, 1).unwrap());
        assert_eq!(hg[0], t.get(2, 2).unwrap());
        let t2 = PacvfTable::for_order(&y, 3, 2, 2).unwrap();
        let (h, hg) = build_high_order_yw(&t2, 1, 2, 2).unwrap();
        assert_eq!((h.nrows(), h.ncols(), hg.len()), (2, 2, 2));
        assert!(build_high_order_yw(&t, 1, 1, 3).is_err());
    }

    #[test]
    fn cost_slope_matches_finite_difference() {
        let y: Vec<f64> = (0..400)
            .map(|i| ((i * 7919 % 211) as f64 / 211.0 - 0.5) + 0.3 * (i % 3) as f64)
            .collect();
        let table = PacvfTable::for_order(&y, 3, 2, 2).unwrap();
        let systems = PhaseSystems::build(&table, 2, 2).unwrap();
        let zeta = zeta_bound(&table, 2).unwrap();
        for x in [0.1 * zeta, 0.5 * zeta, 0.8 * zeta] {
            let h = 1e-6 * zeta;
            let fd = (total_cost(&systems, x + h) - total_cost(&systems, x - h)) / (2.0 * h);
            let an = total_slope(&systems, x);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| (x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-9);
        assert!(fx < 1e-18);
    }

    #[test]
    fn input_checks() {
        let y = vec![1.0; 100];
        let o = EstimatorOptions::default();
        assert!(matches!(estimate_eiv(&y, 2, 2, &o), Err(Error::InvalidModel(_))));
        assert!(matches!(
            estimate_eiv(&y[..30], 4, 1, &o),
            Err(Error::InsufficientData(_))
        ));
        let bad = EstimatorOptions {
            s: Some(1),
            grid_points: 200,
        };
        assert!(estimate_eiv(&y, 4, 2, &bad).is_err());
    }

    #[test]
    fn constant_series_is_degenerate_but_finite() {
        let y = vec![2.5; 400];
        let r = estimate_eiv(&y, 4, 1, &EstimatorOptions::default()).unwrap();
        assert!(r.zeta >= 0.0 && r.sigma_z2_hat <= r.zeta);
        assert!(r.phi_hat.iter().flatten().all(|v| v.is_finite()));
    }
}
