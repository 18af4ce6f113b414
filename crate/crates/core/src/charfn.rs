//! Characteristic functions of residual blocks and the block densities
//! derived from them.
//!
//! A residual block is `R_n = xi_n + Z_n A` (see
//! [`build_loading_matrix`]), a linear map of `T` innovations and `p + T`
//! noise values, all independent. Its characteristic function therefore
//! factors into `T` innovation factors and `p + T` noise factors. Densities
//! come either in closed form (Gaussian noise, or a finite mixture expanded
//! over every assignment of components to the noise window) or from a
//! multidimensional FFT inversion of the characteristic function.

use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft;
use crate::math::{cos, exp, log, sin, sqrt, LN_2PI};
use crate::model::{NoiseSpec, ParSpec};
use crate::residuals::{build_loading_matrix, residual_cov_direct, CovMatrix, ResidualBlocks};

/// Upper limit on Gaussian components enumerated by [`MixtureDensity`].
pub const MAX_MIXTURE_COMPONENTS: usize = 100_000;

/// Arguments `u_j` (`j = 1..=p+T`) of the noise factors for CF argument `t`:
/// `u_j = -sum_{i=max(1,j-p)}^{min(j,T)} t_i phi_{p-(j-i)}(i)`.
fn noise_arguments(spec: &ParSpec, t: &[f64], out: &mut Vec<f64>) {
    let (period, p) = (spec.period() as i64, spec.order() as i64);
    out.clear();
    for j in 1..=p + period {
        let lo = (j - p).max(1);
        let hi = j.min(period);
        let u: f64 = (lo..=hi).map(|i| t[i as usize - 1] * spec.coef(p - (j - i), i)).sum();
        out.push(-u);
    }
}

fn cf_value(spec: &ParSpec, noise: &NoiseSpec, t: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let innov = exp(-0.5 * spec.sigma_xi2() * t.iter().map(|x| x * x).sum::<f64>());
    noise_arguments(spec, t, scratch);
    scratch.iter().fold(innov, |acc, u| acc * noise.cf(*u))
}

/// Model characteristic function of a residual block at `t` (length `T`).
///
/// Innovations are Gaussian and noise components centred, so the value is
/// real; it is returned as a complex number for uniformity with
/// [`empirical_cf`].
pub fn theoretical_cf(spec: &ParSpec, noise: &NoiseSpec, t: &[f64]) -> Result<Complex64> {
    if t.len() != spec.period() {
        return Err(Error::DimensionMismatch {
            expected: spec.period(),
            found: t.len(),
        });
    }
    Ok(Complex64::new(cf_value(spec, noise, t, &mut Vec::new()), 0.0))
}

/// Evaluates the model CF at many points without reallocating.
#[derive(Debug, Clone)]
pub struct CfEvaluator<'a> {
    spec: &'a ParSpec,
    noise: &'a NoiseSpec,
    scratch: Vec<f64>,
}

impl<'a> CfEvaluator<'a> {
    pub fn new(spec: &'a ParSpec, noise: &'a NoiseSpec) -> Self {
        CfEvaluator {
            spec,
            noise,
            scratch: Vec::with_capacity(spec.order() + spec.period()),
        }
    }

    pub fn eval(&mut self, t: &[f64]) -> f64 {
        cf_value(self.spec, self.noise, t, &mut self.scratch)
    }
}

/// `(1/n) sum_n exp(i t . r_n)` over the blocks.
pub fn empirical_cf(blocks: &ResidualBlocks, t: &[f64]) -> Result<Complex64> {
    if t.len() != blocks.period() {
        return Err(Error::DimensionMismatch {
            expected: blocks.period(),
            found: t.len(),
        });
    }
    if blocks.is_empty() {
        return Err(Error::InsufficientData("no residual blocks".into()));
    }
    let sum: Complex64 = blocks
        .rows()
        .map(|r| {
            let a: f64 = r.iter().zip(t).map(|(x, s)| x * s).sum();
            Complex64::new(cos(a), sin(a))
        })
        .sum();
    Ok(sum / blocks.len() as f64)
}

/// A density over residual blocks.
pub trait BlockDensity {
    fn dim(&self) -> usize;

    fn density(&self, r: &[f64]) -> f64;

    fn log_density(&self, r: &[f64]) -> f64 {
        log(self.density(r))
    }
}

/// Zero-mean multivariate Gaussian density with a precomputed Cholesky
/// factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    dim: usize,
    // row-major lower triangle, including the diagonal
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(cov: &CovMatrix) -> Result<Self> {
        Self::from_matrix(cov.matrix())
    }

    fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let dim = m.nrows();
        let l = m.clone().cholesky().ok_or(Error::Singular)?.unpack();
        let mut chol = Vec::with_capacity(dim * (dim + 1) / 2);
        let mut log_det = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                chol.push(l[(i, j)]);
            }
            let d = l[(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Singular);
            }
            log_det += 2.0 * log(d);
        }
        let log_norm = -0.5 * (dim as f64 * LN_2PI + log_det);
        Ok(GaussianDensity { dim, chol, log_norm })
    }

    /// `r Sigma^{-1} r'` by forward substitution.
    fn quadratic_form(&self, r: &[f64]) -> f64 {
        let mut y = [0.0f64; 16];
        let mut heap;
        let y: &mut [f64] = if self.dim <= 16 {
            &mut y[..self.dim]
        } else {
            heap = vec![0.0; self.dim];
            &mut heap
        };
        let mut q = 0.0;
        let mut idx = 0;
        for i in 0..self.dim {
            let mut s = r[i];
            for (c, yj) in self.chol[idx..idx + i].iter().zip(y.iter()) {
                s -= c * yj;
            }
            let v = s / self.chol[idx + i];
            y[i] = v;
            q += v * v;
            idx += i + 1;
        }
        q
    }
}

impl BlockDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, r: &[f64]) -> f64 {
        exp(self.log_density(r))
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        self.log_norm - 0.5 * self.quadratic_form(r)
    }
}

/// Density `exp(-r Gamma^{-1} r' / 2) / sqrt((2 pi)^T |Gamma|)`.
pub fn gaussian_block_pdf(cov: &CovMatrix, r: &[f64]) -> Result<f64> {
    if r.len() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            found: r.len(),
        });
    }
    Ok(GaussianDensity::new(cov)?.density(r))
}

/// Residual block density when the noise is a finite mixture of centred
/// Gaussians.
///
/// Conditionally on which component generated each of the `p + T` noise
/// values in the block window, the block is Gaussian with covariance
/// `sigma_xi2 I + A' Omega A`, `Omega` the diagonal of the chosen component
/// variances. The density is the weighted sum over all `m^(p+T)`
/// assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDensity {
    dim: usize,
    components: Vec<(f64, GaussianDensity)>,
}

impl MixtureDensity {
    pub fn new(spec: &ParSpec, noise: &NoiseSpec) -> Result<Self> {
        let comps = noise.components();
        let m = comps.len();
        let window = spec.order() + spec.period();
        let count = (0..window).try_fold(1usize, |acc, _| acc.checked_mul(m));
        let count = match count {
            Some(c) if c <= MAX_MIXTURE_COMPONENTS => c,
            Some(c) => return Err(Error::TooManyComponents(c)),
            None => return Err(Error::TooManyComponents(usize::MAX)),
        };
        let a = build_loading_matrix(spec);
        let a = a.matrix();
        let dim = spec.period();
        let base = DMatrix::<f64>::identity(dim, dim) * spec.sigma_xi2();
        let mut components = Vec::with_capacity(count);
        let mut assignment = vec![0usize; window];
        for _ in 0..count {
            let weight: f64 = assignment.iter().map(|&c| comps[c].0).product();
            if weight > 0.0 {
                let mut cov = base.clone();
                for (row, &c) in assignment.iter().enumerate() {
                    let s2 = comps[c].1;
                    for k in 0..dim {
                        for l in 0..dim {
                            cov[(k, l)] += s2 * a[(row, k)] * a[(row, l)];
                        }
                    }
                }
                components.push((weight, GaussianDensity::from_matrix(&cov)?));
            }
            // odometer increment
            for slot in assignment.iter_mut() {
                *slot += 1;
                if *slot < m {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(MixtureDensity { dim, components })
    }

    /// `(weight, component density)` pairs.
    pub fn components(&self) -> &[(f64, GaussianDensity)] {
        &self.components
    }
}

impl BlockDensity for MixtureDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, r: &[f64]) -> f64 {
        exp(self.log_density(r))
    }

    fn log_density(&self, r: &[f64]) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let mut logs = Vec::with_capacity(self.components.len());
        for (w, g) in &self.components {
            let v = log(*w) + g.log_density(r);
            max = max.max(v);
            logs.push(v);
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + log(logs.iter().map(|v| exp(v - max)).sum::<f64>())
    }
}

pub fn mixture_block_pdf(spec: &ParSpec, noise: &NoiseSpec, r: &[f64]) -> Result<f64> {
    if r.len() != spec.period() {
        return Err(Error::DimensionMismatch {
            expected: spec.period(),
            found: r.len(),
        });
    }
    Ok(MixtureDensity::new(spec, noise)?.density(r))
}

/// Node count and per-dimension bounds of an inversion grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub nodes: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl GridSpec {
    pub const DEFAULT_NODES: usize = 32;
    pub const MAX_NODES: usize = 256;
    pub const MAX_POINTS: usize = 1 << 20;

    /// `+-6` marginal standard deviations per dimension.
    pub fn around(cov: &CovMatrix, nodes: usize) -> Self {
        let bounds = (0..cov.dim())
            .map(|k| {
                let h = 6.0 * sqrt(cov.get(k, k));
                (-h, h)
            })
            .collect();
        GridSpec { nodes, bounds }
    }
}

/// Density values on a tensor grid, with multilinear interpolation between
/// nodes and zero outside the bounds.
#[derive(Debug)]
pub struct PdfGrid {
    dim: usize,
    nodes: usize,
    lo: Vec<f64>,
    step: Vec<f64>,
    values: Vec<f64>,
    mass: f64,
    clipped_mass: f64,
    out_of_bounds: AtomicUsize,
}

impl Clone for PdfGrid {
    fn clone(&self) -> Self {
        PdfGrid {
            dim: self.dim,
            nodes: self.nodes,
            lo: self.lo.clone(),
            step: self.step.clone(),
            values: self.values.clone(),
            mass: self.mass,
            clipped_mass: self.clipped_mass,
            out_of_bounds: AtomicUsize::new(self.out_of_bounds.load(Ordering::Relaxed)),
        }
    }
}

impl PdfGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Riemann sum of the stored (clipped) values.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Probability mass removed by clipping negative ripple.
    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Number of evaluations that fell outside the grid.
    pub fn out_of_bounds(&self) -> usize {
        self.out_of_bounds.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multi-index of flat node `i` (last dimension fastest).
    pub fn node_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        for d in (0..self.dim).rev() {
            idx[d] = i % self.nodes;
            i /= self.nodes;
        }
        idx
    }

    pub fn node_coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(d, &k)| self.lo[d] + k as f64 * self.step[d])
            .collect()
    }

    pub fn value(&self, idx: &[usize]) -> f64 {
        self.values[self.flat(idx)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.nodes + k)
    }

    /// Interpolated density at `r`.
    pub fn pdf_eval(&self, r: &[f64]) -> f64 {
        let mut base = [0usize; 4];
        let mut frac = [0.0f64; 4];
        let last = (self.nodes - 1) as f64;
        for d in 0..self.dim {
            let x = (r[d] - self.lo[d]) / self.step[d];
            if !(0.0..=last).contains(&x) {
                self.out_of_bounds.fetch_add(1, Ordering::Relaxed);
                return 0.0;
            }
            let i = (libm::floor(x) as usize).min(self.nodes - 2);
            base[d] = i;
            frac[d] = x - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..self.dim {
                let up = (corner >> (self.dim - 1 - d)) & 1;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                flat = flat * self.nodes + base[d] + up;
            }
            if w != 0.0 {
                acc += w * self.values[flat];
            }
        }
        acc
    }
}

impl BlockDensity for PdfGrid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, r: &[f64]) -> f64 {
        self.pdf_eval(r)
    }
}

/// Inverts a characteristic function onto a tensor grid with a
/// `dim`-dimensional FFT.
///
/// With nodes `x_k = lo + k dx` and frequencies `t_j = (j - n/2) dt`,
/// `dt = 2 pi / (n dx)`, the inversion integral becomes
/// `f(x_k) = prod(dt / 2 pi) (-1)^{sum k} DFT[cf(t_j) exp(-i t_j . lo)]_k`.
/// Negative ripple is clipped to zero and its mass reported.
pub fn invert_cf_to_pdf<F>(cf: F, dim: usize, grid: &GridSpec) -> Result<PdfGrid>
where
    F: Fn(&[f64]) -> Complex64,
{
    let n = grid.nodes;
    let too_large = Error::GridTooLarge { nodes: n, dim };
    if dim == 0 || dim > 4 || n < 2 || !n.is_power_of_two() || n > GridSpec::MAX_NODES {
        return Err(too_large);
    }
    let total = n
        .checked_pow(dim as u32)
        .filter(|&t| t <= GridSpec::MAX_POINTS)
        .ok_or(too_large)?;
    if grid.bounds.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: grid.bounds.len(),
        });
    }
    if grid
        .bounds
        .iter()
        .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && hi > lo))
    {
        return Err(Error::InvalidArgument(
            "grid bounds must be finite and increasing".into(),
        ));
    }
    let origin = cf(&vec![0.0; dim]);
    if (origin - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
        return Err(Error::CfNotNormalized(origin.re));
    }

    let lo: Vec<f64> = grid.bounds.iter().map(|b| b.0).collect();
    let step: Vec<f64> = grid.bounds.iter().map(|(lo, hi)| (hi - lo) / (n - 1) as f64).collect();
    let dt: Vec<f64> = step
        .iter()
        .map(|dx| 2.0 * core::f64::consts::PI / (n as f64 * dx))
        .collect();
    let freq = |d: usize, j: usize| (j as f64 - (n / 2) as f64) * dt[d];

    let mut data = vec![Complex64::new(0.0, 0.0); total];
    let mut t = vec![0.0; dim];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut rem = flat;
        for d in (0..dim).rev() {
            t[d] = freq(d, rem % n);
            rem /= n;
        }
        let shift: f64 = t.iter().zip(&lo).map(|(a, b)| a * b).sum();
        *slot = cf(&t) * Complex64::new(cos(shift), -sin(shift));
    }
    fft::fft_nd(&mut data, n, dim);

    let scale: f64 = dt.iter().map(|d| d / (2.0 * core::f64::consts::PI)).product();
    let cell: f64 = step.iter().product();
    let mut values = Vec::with_capacity(total);
    let (mut mass, mut clipped) = (0.0, 0.0);
    for (flat, v) in data.iter().enumerate() {
        let mut rem = flat;
        let mut parity = 0;
        for _ in 0..dim {
            parity += rem % n;
            rem /= n;
        }
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        let f = sign * scale * v.re;
        if f < 0.0 {
            clipped -= f * cell;
            values.push(0.0);
        } else {
            mass += f * cell;
            values.push(f);
        }
    }
    if !(0.9..=1.1).contains(&mass) {
        return Err(Error::Normalization(mass));
    }
    Ok(PdfGrid {
        dim,
        nodes: n,
        lo,
        step,
        values,
        mass,
        clipped_mass: clipped,
        out_of_bounds: AtomicUsize::new(0),
    })
}

/// Inverts the model CF of a residual block on the default `+-6` standard
/// deviation grid.
pub fn invert_model_cf(spec: &ParSpec, noise: &NoiseSpec, nodes: usize) -> Result<PdfGrid> {
    let cov = residual_cov_direct(spec, noise.total_variance());
    let grid = GridSpec::around(&cov, nodes);
    invert_cf_to_pdf(
        |t| Complex64::new(cf_value(spec, noise, t, &mut Vec::new()), 0.0),
        spec.period(),
        &grid,
    )
}
