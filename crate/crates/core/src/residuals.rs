//! Residuals, residual blocks and the block covariance matrix.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[cfg(feature = "serde")]
use serde::Serialize;

use crate::error::{Error, Result, Warning};
use crate::model::ParSpec;

/// `R_t = Y_t - phi_1(t) Y_{t-1} - ... - phi_p(t) Y_{t-p}` for
/// `t = p+1..=len` (times are 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    values: Vec<f64>,
    first_t: usize,
    len: usize,
}

impl Residuals {
    /// First time index with a defined residual.
    pub fn first_t(&self) -> usize {
        self.first_t
    }

    /// Last time index (the series length).
    pub fn last_t(&self) -> usize {
        self.len
    }

    pub fn get(&self, t: usize) -> f64 {
        self.values[t - self.first_t]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn compute_residuals(values: &[f64], spec: &ParSpec) -> Result<Residuals> {
    let p = spec.order();
    if values.len() < p + 1 {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot give residuals of order {p}",
            values.len()
        )));
    }
    let period = spec.period();
    let residuals = (p..values.len())
        .map(|i| {
            // i is the 0-based index of time t = i + 1
            let phi = spec.row(i % period + 1);
            values[i] - phi.iter().enumerate().map(|(j, c)| c * values[i - j - 1]).sum::<f64>()
        })
        .collect();
    Ok(Residuals {
        values: residuals,
        first_t: p + 1,
        len: values.len(),
    })
}

/// Consecutive non-overlapping residual vectors
/// `[R_{t0}, ..., R_{t0+T-1}]`, one per row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct ResidualBlocks {
    data: Vec<f64>,
    period: usize,
    first_t: usize,
    dropped: usize,
}

impl ResidualBlocks {
    /// Blocks `R_n = [R_{nT+1}, ..., R_{(n+1)T}]` for `n = 1, 2, ...`; the
    /// first cycle is always dropped.
    pub fn from_residuals(res: &Residuals, period: usize) -> Result<Self> {
        Self::from_range(res, period, period + 1, res.last_t())
    }

    /// Blocks covering `first_t..=last_t`; an incomplete trailing block is
    /// dropped with a warning.
    pub fn from_range(res: &Residuals, period: usize, first_t: usize, last_t: usize) -> Result<Self> {
        if period == 0 {
            return Err(Error::InvalidArgument("period must be positive".into()));
        }
        if first_t < res.first_t() || last_t > res.last_t() || last_t < first_t {
            return Err(Error::InvalidArgument(format!(
                "range {first_t}..={last_t} outside residuals {}..={}",
                res.first_t(),
                res.last_t()
            )));
        }
        let span = last_t - first_t + 1;
        let dropped = span % period;
        if dropped > 0 {
            Warning::TrailingSamplesDropped { count: dropped }.emit();
        }
        let end = last_t - dropped;
        let data = (first_t..=end).map(|t| res.get(t)).collect();
        Ok(ResidualBlocks {
            data,
            period,
            first_t,
            dropped,
        })
    }

    /// Wraps externally supplied rows (e.g. read from a file).
    pub fn from_rows(rows: &[Vec<f64>], period: usize) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.len() != period) {
            return Err(Error::DimensionMismatch {
                expected: period,
                found: r.len(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(ResidualBlocks {
            data,
            period,
            first_t: period + 1,
            dropped: 0,
        })
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.period
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.period..(n + 1) * self.period]
    }

    pub fn rows(&self) -> core::slice::Chunks<'_, f64> {
        self.data.chunks(self.period)
    }

    /// Time index of the first entry of the first block.
    pub fn first_t(&self) -> usize {
        self.first_t
    }

    /// Phase of the first block entry minus one, i.e. 0 when blocks start at
    /// phase 1.
    pub fn phase_offset(&self) -> usize {
        (self.first_t - 1) % self.period
    }

    /// Residuals ignored after the last complete block.
    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// Covariance matrix of a residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    /// Checks symmetry (1e-12) and positive semidefiniteness (min eigenvalue
    /// >= -1e-10 * trace).
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if (&m - m.transpose()).iter().any(|d| d.abs() > 1e-12 * scale) {
            return Err(Error::InvalidArgument("covariance matrix is not symmetric".into()));
        }
        if crate::linalg::min_symmetric_eigenvalue(&m) < -1e-10 * m.trace().abs() {
            return Err(Error::InvalidArgument(
                "covariance matrix is not positive semidefinite".into(),
            ));
        }
        Ok(CovMatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.0[(k, l)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// The `(p+T) x T` matrix with `R_n = xi_n + Z_n A`, where
/// `Z_n = [Z_{nT+T}, ..., Z_{nT+1-p}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix(DMatrix<f64>);

impl LoadingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_loading_matrix(spec: &ParSpec) -> LoadingMatrix {
    let (t, p) = (spec.period(), spec.order());
    LoadingMatrix(DMatrix::from_fn(p + t, t, |k, l| {
        let (k, l) = (k as i64 + 1, l as i64 + 1);
        -spec.coef(k + l - t as i64 - 1, l)
    }))
}

/// Block covariance from the explicit three-case formula (`k = l`, `k < l`,
/// `k > l`) with `phi_0 = -1`.
pub fn residual_cov_direct(spec: &ParSpec, sigma_z2: f64) -> CovMatrix {
    let (t, p) = (spec.period(), spec.order() as i64);
    let sigma_xi2 = spec.sigma_xi2();
    let entry = |k: i64, l: i64| -> f64 {
        if k == l {
            let s: f64 = (0..=p).map(|j| spec.coef(j, k) * spec.coef(j, k)).sum();
            sigma_xi2 + sigma_z2 * s
        } else {
            let (a, b) = if k < l { (k, l) } else { (l, k) };
            let s: f64 = (0..=p + a - b).map(|j| spec.coef(j, a) * spec.coef(j + b - a, b)).sum();
            sigma_z2 * s
        }
    };
    CovMatrix(DMatrix::from_fn(t, t, |k, l| entry(k as i64 + 1, l as i64 + 1)))
}

/// Block covariance as `sigma_xi2 I + sigma_z2 A'A`.
pub fn residual_cov_matrixform(spec: &ParSpec, sigma_z2: f64) -> CovMatrix {
    let a = build_loading_matrix(spec).0;
    let t = spec.period();
    CovMatrix(DMatrix::identity(t, t) * spec.sigma_xi2() + a.transpose() * a * sigma_z2)
}

/// Zero-mean sample covariance `(1/n) sum_n r_n' r_n`.
pub fn sample_block_cov(blocks: &ResidualBlocks) -> Result<CovMatrix> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 blocks, got {n}")));
    }
    let t = blocks.period();
    let mut m = DMatrix::<f64>::zeros(t, t);
    for r in blocks.rows() {
        for k in 0..t {
            for l in 0..t {
                m[(k, l)] += r[k] * r[l];
            }
        }
    }
    Ok(CovMatrix(m / n as f64))
}

/// `(1/(n-1)) sum_n r_n' r_{n+1}`: entry `(k, l)` pairs component `k` of a
/// block with component `l` of the next block.
pub fn lag_one_cross_cov(blocks: &ResidualBlocks) -> Result<DMatrix<f64>> {
    let n = blocks.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 blocks, got {n}")));
    }
    let t = blocks.period();
    let mut m = DMatrix::<f64>::zeros(t, t);
    for i in 0..n - 1 {
        let (a, b) = (blocks.row(i), blocks.row(i + 1));
        for k in 0..t {
            for l in 0..t {
                m[(k, l)] += a[k] * b[l];
            }
        }
    }
    Ok(m / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_phase() -> ParSpec {
        ParSpec::new(vec![vec![0.4], vec![-0.6]], 1.0).unwrap()
    }

    #[test]
    fn residuals_by_hand() {
        let res = compute_residuals(&[1.0, 2.0, 3.0, 4.0], &two_phase()).unwrap();
        assert_eq!(res.first_t(), 2);
        let expect = [2.6, 2.2, 5.8];
        for (got, want) in res.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_coefficients_are_identity() {
        let y = [0.3, -1.0, 2.0, 0.5, 0.1, 9.0];
        let res = compute_residuals(&y, &ParSpec::white(3, 2, 1.0).unwrap()).unwrap();
        assert_eq!(res.values(), &y[2..]);
    }

    #[test]
    fn block_counts() {
        let y = vec![1.0; 1200];
        let r4 = compute_residuals(&y, &ParSpec::white(4, 1, 1.0).unwrap()).unwrap();
        assert_eq!(ResidualBlocks::from_residuals(&r4, 4).unwrap().len(), 299);
        let r2 = compute_residuals(&y, &ParSpec::white(2, 1, 1.0).unwrap()).unwrap();
        let b2 = ResidualBlocks::from_residuals(&r2, 2).unwrap();
        assert_eq!(b2.len(), 599);
        assert_eq!(b2.phase_offset(), 0);
        assert_eq!(b2.dropped(), 0);
    }

    #[test]
    fn trailing_partial_block_is_dropped() {
        let y: Vec<f64> = (0..11).map(f64::from).collect();
        let r = compute_residuals(&y, &ParSpec::white(4, 1, 1.0).unwrap()).unwrap();
        let b = ResidualBlocks::from_residuals(&r, 4).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.dropped(), 3);
        assert_eq!(b.row(0), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn shifted_range_reports_phase() {
        let y: Vec<f64> = (0..1205).map(f64::from).collect();
        let r = compute_residuals(&y, &ParSpec::white(4, 1, 1.0).unwrap()).unwrap();
        let b = ResidualBlocks::from_range(&r, 4, 6, 1205).unwrap();
        assert_eq!(b.len(), 300);
        assert_eq!(b.phase_offset(), 1);
        assert!(ResidualBlocks::from_range(&r, 4, 1, 1205).is_err());
    }

    #[test]
    fn covariance_two_phase_example() {
        let spec = two_phase();
        let expect = [[2.16, 0.6], [0.6, 2.36]];
        for cov in [residual_cov_direct(&spec, 1.0), residual_cov_matrixform(&spec, 1.0)] {
            for (k, row) in expect.iter().enumerate() {
                for (l, want) in row.iter().enumerate() {
                    assert!((cov.get(k, l) - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn noise_free_covariance_is_scaled_identity() {
        let spec = ParSpec::new(vec![vec![0.5, 0.1], vec![0.2, -0.3], vec![0.9, 0.0]], 1.7).unwrap();
        let cov = residual_cov_direct(&spec, 0.0);
        assert_eq!(cov.matrix(), &(DMatrix::identity(3, 3) * 1.7));
    }

    #[test]
    fn loading_matrix_two_phase() {
        let a = build_loading_matrix(&two_phase());
        let expect = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, 0.6, -0.4, 0.0]);
        assert_eq!(a.matrix(), &expect);
    }

    #[test]
    fn loading_matrix_of_white_model() {
        let a = build_loading_matrix(&ParSpec::white(4, 2, 1.0).unwrap());
        for l in 0..4 {
            let col = a.matrix().column(l);
            assert_eq!(col.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|v| **v == 0.0).count(), 5);
            // the +1 sits at k = T + 1 - l (1-based)
            assert_eq!(col[4 - l - 1], 1.0);
        }
    }

    #[test]
    fn cov_matrix_validation() {
        assert!(CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).is_ok());
    }

    #[test]
    fn repeated_row_gives_rank_one() {
        let blocks = ResidualBlocks::from_rows(&vec![vec![1.0, 2.0, -1.0]; 5], 3).unwrap();
        let cov = sample_block_cov(&blocks).unwrap();
        let sv = cov.into_matrix().singular_values();
        assert!(sv[1].abs() < 1e-12 && sv[2].abs() < 1e-12);
        let one = ResidualBlocks::from_rows(&[vec![1.0, 2.0, -1.0]], 3).unwrap();
        assert!(sample_block_cov(&one).is_err());
    }
}
