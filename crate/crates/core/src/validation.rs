//! Goodness of fit of the residual-block distribution by a characteristic
//! function distance with parametric bootstrap p-values, and a lag-one
//! block independence diagnostic.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[cfg(feature = "serde")]
use serde::Serialize;

use crate::charfn::{empirical_cf, CfEvaluator};
use crate::error::{Error, Result, Warning};
use crate::estimation::EstimationResult;
use crate::identification::NoiseFamily;
use crate::math::{abs, cos, sin, sqrt};
use crate::model::{simulate, NoiseSpec, ParSpec, SimOptions};
use crate::residuals::{compute_residuals, lag_one_cross_cov, sample_block_cov, ResidualBlocks};
use crate::rng::{derive_seed, tag};
use crate::runner::ReplicationRunner;

/// Largest number of lattice points a distance evaluation may use.
pub const MAX_LATTICE_POINTS: usize = 10_000_000;

/// Smallest accepted number of bootstrap replications.
pub const MIN_BOOTSTRAP: usize = 20;

/// Symmetric lattice `{(i - K) h : i = 0..=2K}^T`, `K = floor(b / h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct TGrid {
    pub dim: usize,
    pub bound: f64,
    pub step: f64,
}

impl TGrid {
    pub const DEFAULT_BOUND: f64 = 10.0;
    pub const DEFAULT_STEP: f64 = 0.1;

    pub fn new(dim: usize, bound: f64, step: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("lattice dimension must be positive".into()));
        }
        if !(bound.is_finite() && bound > 0.0 && step.is_finite() && step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lattice bound {bound} and step {step} must be positive"
            )));
        }
        Ok(TGrid { dim, bound, step })
    }

    pub fn default_for(dim: usize) -> Self {
        TGrid {
            dim,
            bound: Self::DEFAULT_BOUND,
            step: Self::DEFAULT_STEP,
        }
    }

    /// `K`, the number of positive points per axis.
    pub fn half_width(&self) -> usize {
        // tolerate b/h landing just below an integer
        libm::floor(self.bound / self.step * (1.0 + 1e-12)) as usize
    }

    /// Axis values `(i - K) h`, ascending.
    pub fn axis(&self) -> Vec<f64> {
        let k = self.half_width() as i64;
        (-k..=k).map(|i| i as f64 * self.step).collect()
    }

    pub fn n_points(&self) -> usize {
        (2 * self.half_width() + 1).saturating_pow(self.dim as u32)
    }

    /// Points with `t_1 >= 0`, where the distance is actually evaluated.
    pub fn n_evaluated(&self) -> usize {
        (self.half_width() + 1).saturating_mul((2 * self.half_width() + 1).saturating_pow(self.dim as u32 - 1))
    }
}

/// Null hypothesis of the goodness-of-fit test.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct NullModel {
    pub spec: ParSpec,
    pub noise: NoiseSpec,
}

impl NullModel {
    pub fn new(spec: ParSpec, noise: NoiseSpec) -> Self {
        NullModel { spec, noise }
    }

    /// The fitted model, with the noise family rescaled to the estimated
    /// noise variance.
    pub fn from_estimate(est: &EstimationResult, family: &NoiseFamily) -> Result<Self> {
        Ok(NullModel {
            spec: est.to_spec()?,
            noise: family.with_variance(est.sigma_z2_hat)?,
        })
    }
}

/// Sup-distance between empirical and model characteristic functions over
/// a [`TGrid`], with the model side precomputed.
///
/// Both functions are Hermitian, so only lattice points with `t_1 >= 0` are
/// visited. The empirical sums factor over dimensions: with `a_n(t_1)` the
/// first-coordinate factor and `b_n(t_2..t_T)` the rest, the lattice of sums
/// `sum_n a_n b_n` is a complex matrix product, evaluated as a single real
/// GEMM on stacked real and imaginary parts.
#[derive(Debug, Clone)]
pub struct CfDistance {
    grid: TGrid,
    axis: Vec<f64>,
    half: usize,
    rest: usize,
    // model CF, row per t_1 >= 0, column per remaining multi-index
    model: Vec<f64>,
}

const COLUMN_CHUNK: usize = 2048;

impl CfDistance {
    pub fn new(spec: &ParSpec, noise: &NoiseSpec, grid: TGrid) -> Result<Self> {
        if grid.dim != spec.period() {
            return Err(Error::DimensionMismatch {
                expected: spec.period(),
                found: grid.dim,
            });
        }
        let axis = grid.axis();
        let k = grid.half_width();
        let half = k + 1;
        if grid.n_evaluated() > MAX_LATTICE_POINTS {
            return Err(Error::InvalidArgument(format!(
                "lattice with {} points per axis in {} dimensions is too large",
                axis.len(),
                grid.dim
            )));
        }
        let rest = axis.len().pow(grid.dim as u32 - 1);
        let mut eval = CfEvaluator::new(spec, noise);
        let mut model = Vec::with_capacity(half * rest);
        let mut t = vec![0.0; grid.dim];
        for i in 0..half {
            t[0] = axis[k + i];
            for c in 0..rest {
                Self::fill_rest(&axis, c, &mut t[1..]);
                model.push(eval.eval(&t));
            }
        }
        Ok(CfDistance {
            grid,
            axis,
            half,
            rest,
            model,
        })
    }

    pub fn grid(&self) -> &TGrid {
        &self.grid
    }

    /// Coordinates `t_2..t_T` of column `c` (last coordinate fastest).
    fn fill_rest(axis: &[f64], mut c: usize, out: &mut [f64]) {
        for slot in out.iter_mut().rev() {
            *slot = axis[c % axis.len()];
            c /= axis.len();
        }
    }

    /// `max_t |empirical_cf(t) - model_cf(t)|`; NaN if a block is not finite.
    pub fn distance(&self, blocks: &ResidualBlocks) -> Result<f64> {
        let dim = self.grid.dim;
        if blocks.period() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: blocks.period(),
            });
        }
        if blocks.is_empty() {
            return Err(Error::InsufficientData("no residual blocks".into()));
        }
        if blocks.rows().flatten().any(|v| !v.is_finite()) {
            return Ok(f64::NAN);
        }
        let n = blocks.len();
        let m = self.half;
        let k = self.grid.half_width();
        let na = self.axis.len();

        let step = self.grid.step;
        // first-coordinate factors, [cos | sin], n x 2m row-major
        let mut x = vec![0.0; n * 2 * m];
        let mut pow = vec![(0.0, 0.0); m];
        for (b, r) in blocks.rows().enumerate() {
            rotation_powers(r[0] * step, &mut pow);
            for (j, (c, s)) in pow.iter().enumerate() {
                x[b * 2 * m + j] = *c;
                x[b * 2 * m + m + j] = *s;
            }
        }
        // per-axis factors of the remaining coordinates, n x na complex
        let mut factors = Vec::with_capacity(dim - 1);
        for d in 1..dim {
            let mut f = vec![(0.0, 0.0); n * na];
            for (b, r) in blocks.rows().enumerate() {
                rotation_powers(r[d] * step, &mut pow);
                let row = &mut f[b * na..(b + 1) * na];
                for (j, (c, s)) in pow.iter().enumerate() {
                    row[k + j] = (*c, *s);
                    row[k - j] = (*c, -*s);
                }
            }
            factors.push(f);
        }

        let inv_n = 1.0 / n as f64;
        let mut best = 0.0f64;
        let mut idx = vec![0usize; dim - 1];
        // negating t_2..t_T conjugates b_n and maps column c to rest - 1 - c,
        // so the first half of the columns determines the second
        let computed = self.rest.div_ceil(2);
        let mut c0 = 0;
        while c0 < computed {
            let qc = COLUMN_CHUNK.min(computed - c0);
            let mut y = vec![0.0; n * 2 * qc];
            for c in 0..qc {
                let mut rem = c0 + c;
                for slot in idx.iter_mut().rev() {
                    *slot = rem % na;
                    rem /= na;
                }
                for b in 0..n {
                    let (mut re, mut im) = (1.0, 0.0);
                    for (d, f) in factors.iter().enumerate() {
                        let (fr, fi) = f[b * na + idx[d]];
                        let nr = re * fr - im * fi;
                        im = re * fi + im * fr;
                        re = nr;
                    }
                    y[b * 2 * qc + c] = re;
                    y[b * 2 * qc + qc + c] = im;
                }
            }
            let mut prod = vec![0.0; 2 * m * 2 * qc];
            // prod (2m x 2qc) = x' (2m x n) * y (n x 2qc)
            unsafe {
                matrixmultiply::dgemm(
                    2 * m,
                    n,
                    2 * qc,
                    1.0,
                    x.as_ptr(),
                    1,
                    (2 * m) as isize,
                    y.as_ptr(),
                    (2 * qc) as isize,
                    1,
                    0.0,
                    prod.as_mut_ptr(),
                    (2 * qc) as isize,
                    1,
                );
            }
            let w = 2 * qc;
            for j in 0..m {
                let model = &self.model[j * self.rest..(j + 1) * self.rest];
                for c in 0..qc {
                    let rr = prod[j * w + c];
                    let ri = prod[j * w + qc + c];
                    let ir = prod[(m + j) * w + c];
                    let ii = prod[(m + j) * w + qc + c];
                    let col = c0 + c;
                    let dr = (rr - ii) * inv_n - model[col];
                    let di = (ri + ir) * inv_n;
                    best = best.max(sqrt(dr * dr + di * di));
                    let mirror = self.rest - 1 - col;
                    let dr = (rr + ii) * inv_n - model[mirror];
                    let di = (ir - ri) * inv_n;
                    best = best.max(sqrt(dr * dr + di * di));
                }
            }
            c0 += qc;
        }
        Ok(best)
    }
}

/// `out[j] = (cos(j a), sin(j a))`, re-anchored on exact values every 16
/// steps so the rounding error of the complex recurrence stays near 1e-15.
fn rotation_powers(a: f64, out: &mut [(f64, f64)]) {
    let (c1, s1) = (cos(a), sin(a));
    let mut cur = (1.0, 0.0);
    for (j, slot) in out.iter_mut().enumerate() {
        if j % 16 == 0 {
            let t = j as f64 * a;
            cur = (cos(t), sin(t));
        }
        *slot = cur;
        cur = (cur.0 * c1 - cur.1 * s1, cur.0 * s1 + cur.1 * c1);
    }
}

/// `max |empirical_cf - theoretical_cf|` over the lattice of `grid`.
pub fn cf_distance(blocks: &ResidualBlocks, spec: &ParSpec, noise: &NoiseSpec, grid: &TGrid) -> Result<f64> {
    CfDistance::new(spec, noise, *grid)?.distance(blocks)
}

/// The same distance evaluated point by point over an explicit list of CF
/// arguments.
pub fn cf_distance_at(blocks: &ResidualBlocks, spec: &ParSpec, noise: &NoiseSpec, points: &[Vec<f64>]) -> Result<f64> {
    let mut eval = CfEvaluator::new(spec, noise);
    let mut best = 0.0f64;
    for t in points {
        let e = empirical_cf(blocks, t)?;
        let d = (e - num_complex::Complex64::new(eval.eval(t), 0.0)).norm();
        best = best.max(d);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct GofTestResult {
    pub d_observed: f64,
    /// Fraction of finite bootstrap statistics `>= d_observed`.
    pub p_value: f64,
    pub m_boot: usize,
    pub n_finite: usize,
    pub d_samples: Vec<f64>,
    pub seed: u64,
    pub grid: TGrid,
    pub null: NullModel,
    pub warnings: Vec<Warning>,
}

impl GofTestResult {
    /// Rejection at level `alpha`: `p < alpha`, and always for `alpha >= 1`.
    pub fn rejects(&self, alpha: f64) -> bool {
        alpha >= 1.0 || self.p_value < alpha
    }
}

fn blocks_under(values: &[f64], spec: &ParSpec) -> Result<ResidualBlocks> {
    ResidualBlocks::from_residuals(&compute_residuals(values, spec)?, spec.period())
}

/// Bootstrap distribution of the CF distance under a null model, for series
/// of a given length.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct BootstrapSample {
    pub n_obs: usize,
    pub seed: u64,
    pub d_samples: Vec<f64>,
    pub n_finite: usize,
}

/// Simulates `m_boot` series of length `n_obs` from `null` and computes
/// their CF distances. Replication `i` uses seed
/// `derive_seed(seed, [BOOTSTRAP, i])`.
pub fn bootstrap_null<R: ReplicationRunner>(
    null: &NullModel,
    dist: &CfDistance,
    n_obs: usize,
    m_boot: usize,
    seed: u64,
    runner: &R,
) -> Result<BootstrapSample> {
    if m_boot < MIN_BOOTSTRAP {
        return Err(Error::TooFewReplications(m_boot));
    }
    let samples = runner.run(m_boot, |i| -> Result<f64> {
        let s = derive_seed(seed, &[tag::BOOTSTRAP, i as u64]);
        let traj = simulate(&null.spec, &null.noise, n_obs, SimOptions::default(), s)?;
        dist.distance(&blocks_under(&traj.values, &null.spec)?)
    });
    let d_samples = samples.into_iter().collect::<Result<Vec<f64>>>()?;
    let n_finite = d_samples.iter().filter(|d| d.is_finite()).count();
    Ok(BootstrapSample {
        n_obs,
        seed,
        d_samples,
        n_finite,
    })
}

/// Test of `values` against a precomputed bootstrap sample of the same
/// length.
pub fn gof_test_with(
    values: &[f64],
    null: &NullModel,
    dist: &CfDistance,
    boot: &BootstrapSample,
) -> Result<GofTestResult> {
    if boot.n_obs != values.len() {
        return Err(Error::DimensionMismatch {
            expected: boot.n_obs,
            found: values.len(),
        });
    }
    let d_observed = dist.distance(&blocks_under(values, &null.spec)?)?;
    if !d_observed.is_finite() {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    let m_boot = boot.d_samples.len();
    let mut warnings = Vec::new();
    if boot.n_finite < m_boot {
        warnings.push(
            Warning::NonFiniteBootstrap {
                count: m_boot - boot.n_finite,
            }
            .emit(),
        );
    }
    if boot.n_finite == 0 {
        return Err(Error::TooFewReplications(0));
    }
    let exceed = boot
        .d_samples
        .iter()
        .filter(|d| d.is_finite() && **d >= d_observed)
        .count();
    Ok(GofTestResult {
        d_observed,
        p_value: exceed as f64 / boot.n_finite as f64,
        m_boot,
        n_finite: boot.n_finite,
        d_samples: boot.d_samples.clone(),
        seed: boot.seed,
        grid: *dist.grid(),
        null: null.clone(),
        warnings,
    })
}

/// Parametric bootstrap test of the residual-block distribution under
/// `null`.
///
/// The statistic is the CF distance of the data's residual blocks, computed
/// with the null coefficients; the p-value is the fraction of bootstrap
/// statistics ([`bootstrap_null`]) at least as large.
pub fn gof_test<R: ReplicationRunner>(
    values: &[f64],
    null: &NullModel,
    m_boot: usize,
    grid: &TGrid,
    seed: u64,
    runner: &R,
) -> Result<GofTestResult> {
    if m_boot < MIN_BOOTSTRAP {
        return Err(Error::TooFewReplications(m_boot));
    }
    let dist = CfDistance::new(&null.spec, &null.noise, *grid)?;
    // check the data before paying for the bootstrap
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("series contains non-finite values".into()));
    }
    let boot = bootstrap_null(null, &dist, values.len(), m_boot, seed, runner)?;
    gof_test_with(values, null, &dist, &boot)
}

/// Lag-one correlation between consecutive residual blocks.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct IndependenceReport {
    pub n_blocks: usize,
    /// Entry `(k, l)`: correlation of component `k` of a block with
    /// component `l` of the next one.
    pub correlation: Vec<Vec<f64>>,
    /// `4 / sqrt(n_blocks)`.
    pub threshold: f64,
    /// `(k, l)` pairs (0-based) whose correlation exceeds the threshold.
    pub flags: Vec<(usize, usize)>,
}

impl IndependenceReport {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }
}

pub fn block_independence_check(blocks: &ResidualBlocks) -> Result<IndependenceReport> {
    let n = blocks.len();
    if n < 30 {
        return Err(Error::InsufficientData(format!("need at least 30 blocks, got {n}")));
    }
    let t = blocks.period();
    let var = sample_block_cov(blocks)?;
    let cross: DMatrix<f64> = lag_one_cross_cov(blocks)?;
    let threshold = 4.0 / sqrt(n as f64);
    let mut correlation = vec![vec![0.0; t]; t];
    let mut flags = Vec::new();
    for k in 0..t {
        for l in 0..t {
            let s = sqrt(var.get(k, k) * var.get(l, l));
            let c = if s > 0.0 { cross[(k, l)] / s } else { 0.0 };
            correlation[k][l] = c;
            if abs(c) > threshold {
                flags.push((k, l));
            }
        }
    }
    Ok(IndependenceReport {
        n_blocks: n,
        correlation,
        threshold,
        flags,
    })
}
