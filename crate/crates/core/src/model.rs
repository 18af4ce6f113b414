//! Model and noise specifications, and simulation of `Y_t = X_t + Z_t`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Warning};
use crate::math::sqrt;
use crate::rng::{self, StreamRng};

/// Periodic autoregression `X_t = sum_i phi_i(t) X_{t-i} + xi_t` with
/// Gaussian innovations of variance `sigma_xi2`.
///
/// Coefficients are stored row-major: row `v - 1` holds
/// `phi_1(v), ..., phi_p(v)` for phase `v = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "ParSpecRepr", into = "ParSpecRepr"))]
pub struct ParSpec {
    period: usize,
    order: usize,
    phi: Vec<f64>,
    sigma_xi2: f64,
}

#[cfg(feature = "serde")]
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParSpecRepr {
    phi: Vec<Vec<f64>>,
    sigma_xi2: f64,
}

#[cfg(feature = "serde")]
impl TryFrom<ParSpecRepr> for ParSpec {
    type Error = Error;

    fn try_from(r: ParSpecRepr) -> Result<Self> {
        ParSpec::new(r.phi, r.sigma_xi2)
    }
}

#[cfg(feature = "serde")]
impl From<ParSpec> for ParSpecRepr {
    fn from(s: ParSpec) -> Self {
        ParSpecRepr {
            phi: s.rows(),
            sigma_xi2: s.sigma_xi2,
        }
    }
}

impl ParSpec {
    /// Builds a specification from one coefficient row per phase. The period
    /// is the number of rows and the order the row length.
    pub fn new(phi: Vec<Vec<f64>>, sigma_xi2: f64) -> Result<Self> {
        let period = phi.len();
        let order = phi.first().map_or(0, Vec::len);
        if order == 0 {
            return Err(Error::InvalidModel("order must be at least 1".into()));
        }
        if order >= period {
            return Err(Error::InvalidModel(format!(
                "order {order} must be smaller than the period {period}"
            )));
        }
        if let Some(row) = phi.iter().find(|row| row.len() != order) {
            return Err(Error::DimensionMismatch {
                expected: order,
                found: row.len(),
            });
        }
        if phi.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        if !(sigma_xi2.is_finite() && sigma_xi2 > 0.0) {
            return Err(Error::InvalidModel(format!(
                "innovation variance must be positive, got {sigma_xi2}"
            )));
        }
        Ok(ParSpec {
            period,
            order,
            phi: phi.into_iter().flatten().collect(),
            sigma_xi2,
        })
    }

    /// All-zero coefficients: `X` is white noise.
    pub fn white(period: usize, order: usize, sigma_xi2: f64) -> Result<Self> {
        ParSpec::new(vec![vec![0.0; order]; period], sigma_xi2)
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn sigma_xi2(&self) -> f64 {
        self.sigma_xi2
    }

    /// Coefficients `phi_1(v)..phi_p(v)` of phase `v` in `1..=T`.
    pub fn row(&self, v: usize) -> &[f64] {
        let start = (v - 1) * self.order;
        &self.phi[start..start + self.order]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.phi.chunks(self.order).map(<[f64]>::to_vec).collect()
    }

    /// Extended coefficient accessor: `phi_0(v) = -1`, `phi_j(v) = 0` outside
    /// `0..=p`, and periodic in `v` over all integers.
    pub fn coef(&self, j: i64, v: i64) -> f64 {
        if j == 0 {
            return -1.0;
        }
        if j < 0 || j as usize > self.order {
            return 0.0;
        }
        let phase = (v - 1).rem_euclid(self.period as i64) as usize;
        self.phi[phase * self.order + j as usize - 1]
    }

    pub fn with_sigma_xi2(&self, sigma_xi2: f64) -> Result<Self> {
        ParSpec::new(self.rows(), sigma_xi2)
    }

    /// The same model observed from a later phase: phase `v` of the result
    /// is phase `v + offset` of `self`.
    pub fn rotated(&self, offset: usize) -> Self {
        let rows = (1..=self.period)
            .map(|v| self.row((v - 1 + offset) % self.period + 1).to_vec())
            .collect::<Vec<_>>();
        ParSpec {
            phi: rows.into_iter().flatten().collect(),
            ..self.clone()
        }
    }
}

/// Distribution of the additive noise. Mixtures have zero-mean components.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "NoiseRepr", into = "NoiseRepr"))]
pub enum NoiseSpec {
    Gaussian { variance: f64 },
    Mixture { weights: Vec<f64>, variances: Vec<f64> },
}

#[cfg(feature = "serde")]
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum NoiseRepr {
    Gaussian { variance: f64 },
    Mixture { weights: Vec<f64>, variances: Vec<f64> },
}

#[cfg(feature = "serde")]
impl TryFrom<NoiseRepr> for NoiseSpec {
    type Error = Error;

    fn try_from(r: NoiseRepr) -> Result<Self> {
        match r {
            NoiseRepr::Gaussian { variance } => NoiseSpec::gaussian(variance),
            NoiseRepr::Mixture { weights, variances } => NoiseSpec::mixture(weights, variances),
        }
    }
}

#[cfg(feature = "serde")]
impl From<NoiseSpec> for NoiseRepr {
    fn from(n: NoiseSpec) -> Self {
        match n {
            NoiseSpec::Gaussian { variance } => NoiseRepr::Gaussian { variance },
            NoiseSpec::Mixture { weights, variances } => NoiseRepr::Mixture { weights, variances },
        }
    }
}

impl NoiseSpec {
    /// Zero variance is accepted and means "no noise".
    pub fn gaussian(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::InvalidNoise(format!("variance must be >= 0, got {variance}")));
        }
        Ok(NoiseSpec::Gaussian { variance })
    }

    pub fn mixture(weights: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidNoise("mixture needs at least one component".into()));
        }
        if weights.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: variances.len(),
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidNoise("weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidNoise(format!("weights sum to {total}, expected 1")));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidNoise("component variances must be positive".into()));
        }
        Ok(NoiseSpec::Mixture { weights, variances })
    }

    /// `(weight, variance)` pairs; a Gaussian is a single component.
    pub fn components(&self) -> Vec<(f64, f64)> {
        match self {
            NoiseSpec::Gaussian { variance } => vec![(1.0, *variance)],
            NoiseSpec::Mixture { weights, variances } => {
                weights.iter().copied().zip(variances.iter().copied()).collect()
            }
        }
    }

    pub fn total_variance(&self) -> f64 {
        self.components().iter().map(|(a, s)| a * s).sum()
    }

    /// `3 sum(a_i s_i^2) / (sum a_i s_i)^2 - 3`, zero for a Gaussian.
    pub fn excess_kurtosis(&self) -> f64 {
        match self {
            NoiseSpec::Gaussian { .. } => 0.0,
            NoiseSpec::Mixture { .. } => {
                let comps = self.components();
                let m2: f64 = comps.iter().map(|(a, s)| a * s).sum();
                let m4: f64 = comps.iter().map(|(a, s)| a * s * s).sum();
                3.0 * m4 / (m2 * m2) - 3.0
            }
        }
    }

    /// Characteristic function; real because every component is centred.
    pub fn cf(&self, u: f64) -> f64 {
        match self {
            NoiseSpec::Gaussian { variance } => crate::math::exp(-0.5 * variance * u * u),
            NoiseSpec::Mixture { weights, variances } => weights
                .iter()
                .zip(variances)
                .map(|(a, s)| a * crate::math::exp(-0.5 * s * u * u))
                .sum(),
        }
    }

    /// Rescales the distribution (keeping its shape) to the given total
    /// variance. A target of zero yields the degenerate Gaussian.
    pub fn scaled_to_variance(&self, target: f64) -> Result<NoiseSpec> {
        if target == 0.0 {
            return NoiseSpec::gaussian(0.0);
        }
        match self {
            NoiseSpec::Gaussian { .. } => NoiseSpec::gaussian(target),
            NoiseSpec::Mixture { weights, variances } => {
                let factor = target / self.total_variance();
                NoiseSpec::mixture(weights.clone(), variances.iter().map(|s| s * factor).collect())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSpec::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                sqrt(*variance) * z
            }
            NoiseSpec::Mixture { weights, variances } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                sqrt(variances[idx]) * z
            }
        }
    }
}

/// `n` i.i.d. noise draws from the stream keyed by `seed`.
pub fn sample_noise(noise: &NoiseSpec, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, &[rng::tag::NOISE]);
    (0..n).map(|_| noise.sample(&mut rng)).collect()
}

/// An observed series, optionally with its signal and noise parts.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub period: usize,
    pub seed: Option<u64>,
    pub signal: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub warnings: Vec<Warning>,
}

impl Trajectory {
    pub fn from_values(values: Vec<f64>, period: usize) -> Self {
        Trajectory {
            values,
            period,
            seed: None,
            signal: None,
            noise: None,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of complete cycles.
    pub fn n_cycles(&self) -> usize {
        self.values.len() / self.period
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Whole periods simulated and discarded before the retained sample.
    pub burn_in: usize,
    /// Keep the `X` and `Z` components in the trajectory.
    pub keep_components: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            burn_in: 100,
            keep_components: false,
        }
    }
}

/// Simulates `n_obs` observations of `Y_t = X_t + Z_t`, starting at phase 1.
///
/// Innovations and noise come from separate streams of `seed`, so the signal
/// path does not depend on the noise specification.
pub fn simulate(spec: &ParSpec, noise: &NoiseSpec, n_obs: usize, opts: SimOptions, seed: u64) -> Result<Trajectory> {
    let period = spec.period();
    if n_obs < 2 * period {
        return Err(Error::InsufficientData(format!(
            "need at least two cycles ({} samples), got {n_obs}",
            2 * period
        )));
    }
    let mut warnings = Vec::new();
    let radius = stability_radius(spec);
    if radius >= 1.0 {
        warnings.push(Warning::Unstable { radius }.emit());
    }

    let signal = simulate_signal(spec, n_obs, opts.burn_in, seed);
    let noise_part = sample_noise(noise, n_obs, seed);
    let values = signal.iter().zip(&noise_part).map(|(x, z)| x + z).collect();
    let (signal, noise_part) = if opts.keep_components {
        (Some(signal), Some(noise_part))
    } else {
        (None, None)
    };
    Ok(Trajectory {
        values,
        period,
        seed: Some(seed),
        signal,
        noise: noise_part,
        warnings,
    })
}

fn simulate_signal(spec: &ParSpec, n_obs: usize, burn_in: usize, seed: u64) -> Vec<f64> {
    let period = spec.period();
    let p = spec.order();
    let sd = sqrt(spec.sigma_xi2());
    let mut rng: StreamRng = rng::substream(seed, &[rng::tag::INNOVATIONS]);
    let total = burn_in * period + n_obs;
    // history[0] is X_{t-1}
    let mut history = vec![0.0; p];
    let mut out = Vec::with_capacity(n_obs);
    for step in 0..total {
        let phi = spec.row(step % period + 1);
        let eps: f64 = rng.sample(StandardNormal);
        let x = phi.iter().zip(&history).map(|(c, h)| c * h).sum::<f64>() + sd * eps;
        history.rotate_right(1);
        history[0] = x;
        if step >= burn_in * period {
            out.push(x);
        }
    }
    out
}

/// Spectral radius of the product of the phase companion matrices over one
/// period. Values below one mean the periodic recursion is stable.
pub fn stability_radius(spec: &ParSpec) -> f64 {
    let p = spec.order();
    let mut product = DMatrix::<f64>::identity(p, p);
    for v in 1..=spec.period() {
        let mut companion = DMatrix::<f64>::zeros(p, p);
        for (i, c) in spec.row(v).iter().enumerate() {
            companion[(0, i)] = *c;
        }
        for i in 1..p {
            companion[(i, i - 1)] = 1.0;
        }
        product = companion * product;
    }
    if p == 1 {
        return product[(0, 0)].abs();
    }
    product
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Per-phase ratio `Var(X_t) / Var(Z_t)` estimated over `n_rep` independent
/// two-cycle trajectories (both cycles pooled).
pub fn empirical_snr(spec: &ParSpec, noise: &NoiseSpec, n_rep: usize, seed: u64) -> Result<Vec<f64>> {
    if n_rep < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 replications, got {n_rep}"
        )));
    }
    if noise.total_variance() == 0.0 {
        return Err(Error::ZeroNoiseVariance);
    }
    let period = spec.period();
    let opts = SimOptions {
        keep_components: true,
        ..SimOptions::default()
    };
    let mut sums = vec![[0.0f64; 4]; period];
    let mut count = 0usize;
    for r in 0..n_rep {
        let traj = simulate(spec, noise, 2 * period, opts, rng::derive_seed(seed, &[r as u64]))?;
        let (x, z) = (traj.signal.unwrap_or_default(), traj.noise.unwrap_or_default());
        for (t, (xv, zv)) in x.iter().zip(&z).enumerate() {
            let s = &mut sums[t % period];
            s[0] += xv;
            s[1] += xv * xv;
            s[2] += zv;
            s[3] += zv * zv;
        }
        count += 2;
    }
    let n = count as f64;
    let var = |sum: f64, sq: f64| (sq - sum * sum / n) / (n - 1.0);
    Ok(sums.iter().map(|s| var(s[0], s[1]) / var(s[2], s[3])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn phi1() -> ParSpec {
        ParSpec::new(vec![vec![-0.1208], vec![-0.5773], vec![-0.0362], vec![-0.3254]], 1.0).unwrap()
    }

    #[test]
    fn rejects_order_not_below_period() {
        assert!(ParSpec::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]], 1.0).is_err());
        assert!(ParSpec::new(vec![vec![0.1], vec![0.3]], 0.0).is_err());
        assert!(ParSpec::new(vec![vec![f64::NAN], vec![0.3]], 1.0).is_err());
        assert!(ParSpec::new(vec![vec![0.1], vec![0.3, 0.1], vec![0.0]], 1.0).is_err());
    }

    #[test]
    fn extended_coefficients() {
        let s = phi1();
        for v in -9..9 {
            assert_eq!(s.coef(0, v), -1.0);
            assert_eq!(s.coef(2, v), 0.0);
            assert_eq!(s.coef(-1, v), 0.0);
            assert_eq!(s.coef(1, v), s.coef(1, v + 4));
        }
        assert_eq!(s.coef(1, 2), -0.5773);
        assert_eq!(s.coef(1, 0), -0.3254);
    }

    #[test]
    fn rotation_shifts_phases() {
        let s = phi1().rotated(1);
        assert_eq!(s.row(1), &[-0.5773]);
        assert_eq!(s.row(4), &[-0.1208]);
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseSpec::mixture(vec![0.5, 0.4], vec![1.0, 1.0]).is_err());
        assert!(NoiseSpec::mixture(vec![0.5, 0.5], vec![1.0, 0.0]).is_err());
        assert!(NoiseSpec::mixture(vec![0.5], vec![1.0, 2.0]).is_err());
        assert!(NoiseSpec::gaussian(-1.0).is_err());
    }

    #[test]
    fn kurtosis_values() {
        assert_eq!(NoiseSpec::gaussian(2.0).unwrap().excess_kurtosis(), 0.0);
        let mix = NoiseSpec::mixture(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap();
        // 3 * (0.5 * 0.25 + 0.5 * 2.25) / 1 - 3
        assert!((mix.excess_kurtosis() - 0.75).abs() < 1e-15);
        assert!((mix.total_variance() - 1.0).abs() < 1e-15);
        for s2 in [0.3, 1.0, 7.0] {
            let one = NoiseSpec::mixture(vec![1.0], vec![s2]).unwrap();
            assert!(one.excess_kurtosis().abs() < 1e-14);
        }
    }

    #[test]
    fn scaling_keeps_shape() {
        let mix = NoiseSpec::mixture(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap();
        let s = mix.scaled_to_variance(2.0).unwrap();
        assert!((s.total_variance() - 2.0).abs() < 1e-14);
        assert!((s.excess_kurtosis() - 0.75).abs() < 1e-12);
        assert_eq!(
            mix.scaled_to_variance(0.0).unwrap(),
            NoiseSpec::Gaussian { variance: 0.0 }
        );
    }

    #[test]
    fn stability_examples() {
        assert_eq!(stability_radius(&ParSpec::white(4, 2, 1.0).unwrap()), 0.0);
        let rw = ParSpec::new(vec![vec![1.0]; 3], 1.0).unwrap();
        assert!((stability_radius(&rw) - 1.0).abs() < 1e-15);
        let r = stability_radius(&phi1());
        assert!(r > 0.0 && r < 1.0);
        let two = ParSpec::new(
            vec![
                vec![-0.1208, -0.0878],
                vec![-0.5773, -0.9798],
                vec![-0.0362, 0.9196],
                vec![-0.3254, -0.5802],
            ],
            1.0,
        )
        .unwrap();
        let r2 = stability_radius(&two);
        assert!(r2.is_finite() && r2 >= 0.0);
    }

    #[test]
    fn unstable_model_warns() {
        let rw = ParSpec::new(vec![vec![1.1]; 2], 1.0).unwrap();
        let traj = simulate(
            &rw,
            &NoiseSpec::gaussian(0.0).unwrap(),
            20,
            SimOptions {
                burn_in: 1,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        assert!(matches!(traj.warnings[0], Warning::Unstable { .. }));
    }

    #[test]
    fn simulation_is_reproducible_and_noise_free_path_matches_signal() {
        let spec = phi1();
        let none = NoiseSpec::gaussian(0.0).unwrap();
        let opts = SimOptions {
            keep_components: true,
            ..Default::default()
        };
        let a = simulate(&spec, &none, 400, opts, 11).unwrap();
        let b = simulate(&spec, &none, 400, opts, 11).unwrap();
        let c = simulate(&spec, &none, 400, opts, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        assert_eq!(a.values, a.signal.clone().unwrap());
        // the signal does not depend on the noise distribution
        let noisy = simulate(&spec, &NoiseSpec::gaussian(1.0).unwrap(), 400, opts, 11).unwrap();
        assert_eq!(noisy.signal, a.signal);
    }

    #[test]
    fn too_short_simulation_is_rejected() {
        assert!(simulate(&phi1(), &NoiseSpec::gaussian(1.0).unwrap(), 7, SimOptions::default(), 0).is_err());
    }

    #[test]
    fn snr_requires_noise() {
        let none = NoiseSpec::gaussian(0.0).unwrap();
        assert_eq!(empirical_snr(&phi1(), &none, 100, 0), Err(Error::ZeroNoiseVariance));
        assert!(empirical_snr(&phi1(), &NoiseSpec::gaussian(1.0).unwrap(), 99, 0).is_err());
    }
}
