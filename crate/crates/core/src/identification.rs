//! Order and period selection by the Bayesian information criterion on
//! residual-block likelihoods.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::charfn::{invert_model_cf, BlockDensity, GaussianDensity, GridSpec, MixtureDensity};
use crate::error::{Error, Result, Warning};
use crate::estimation::{estimate_eiv, EstimationResult, EstimatorOptions};
use crate::math::log;
use crate::model::{NoiseSpec, ParSpec};
use crate::residuals::{compute_residuals, residual_cov_direct, ResidualBlocks};

/// Densities below this value are replaced by it inside logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Fraction of floored blocks above which a BIC entry is unreliable.
pub const UNRELIABLE_FRACTION: f64 = 0.01;

/// Mixture closed forms with more Gaussian terms than this fall back to
/// characteristic function inversion.
pub const CLOSED_FORM_LIMIT: usize = 10_000;

/// How block densities are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DensityPath {
    /// Closed form where one exists, inversion otherwise.
    #[default]
    Closed,
    /// Always invert the characteristic function.
    Inversion,
}

/// The density actually used for one BIC entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum DensityKind {
    GaussianClosedForm,
    MixtureClosedForm,
    CfInversion,
}

impl DensityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityKind::GaussianClosedForm => "gaussian-closed-form",
            DensityKind::MixtureClosedForm => "mixture-closed-form",
            DensityKind::CfInversion => "cf-inversion",
        }
    }
}

/// Assumed noise distribution family. A mixture shape is fixed and rescaled
/// to the estimated noise variance.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub enum NoiseFamily {
    Gaussian,
    Mixture(NoiseSpec),
}

impl NoiseFamily {
    pub fn with_variance(&self, variance: f64) -> Result<NoiseSpec> {
        match self {
            NoiseFamily::Gaussian => NoiseSpec::gaussian(variance),
            NoiseFamily::Mixture(shape) => shape.scaled_to_variance(variance),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct IdentifyOptions {
    pub estimator: EstimatorOptions,
    /// Nodes per dimension for inversion grids.
    pub inversion_nodes: usize,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            estimator: EstimatorOptions::default(),
            inversion_nodes: GridSpec::DEFAULT_NODES,
        }
    }
}

/// A block density together with how it was built.
pub struct FittedDensity {
    pub kind: DensityKind,
    pub density: Box<dyn BlockDensity + Send + Sync>,
}

impl core::fmt::Debug for FittedDensity {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FittedDensity")
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Density of residual blocks of `spec` under `noise`.
pub fn block_density(spec: &ParSpec, noise: &NoiseSpec, path: DensityPath, nodes: usize) -> Result<FittedDensity> {
    let invert = || -> Result<FittedDensity> {
        Ok(FittedDensity {
            kind: DensityKind::CfInversion,
            density: Box::new(invert_model_cf(spec, noise, nodes)?),
        })
    };
    if path == DensityPath::Inversion {
        return invert();
    }
    match noise {
        NoiseSpec::Gaussian { variance } => {
            let cov = residual_cov_direct(spec, *variance);
            Ok(FittedDensity {
                kind: DensityKind::GaussianClosedForm,
                density: Box::new(GaussianDensity::new(&cov)?),
            })
        }
        NoiseSpec::Mixture { weights, .. } => {
            let terms = weights.len().checked_pow((spec.order() + spec.period()) as u32);
            if terms.is_some_and(|n| n <= CLOSED_FORM_LIMIT) {
                Ok(FittedDensity {
                    kind: DensityKind::MixtureClosedForm,
                    density: Box::new(MixtureDensity::new(spec, noise)?),
                })
            } else {
                invert()
            }
        }
    }
}

/// BIC together with the share of blocks whose density hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicValue {
    pub bic: f64,
    pub floored_fraction: f64,
}

/// `-2 sum_n log f(r_n) + log(NT) (T p* + 2)`, densities floored at
/// [`DENSITY_FLOOR`].
pub fn bic_detailed(
    blocks: &ResidualBlocks,
    density: &dyn BlockDensity,
    p_star: usize,
    period: usize,
    nt: usize,
) -> Result<BicValue> {
    if blocks.is_empty() {
        return Err(Error::InsufficientData("no residual blocks".into()));
    }
    let log_floor = log(DENSITY_FLOOR);
    let mut sum = 0.0;
    let mut floored = 0usize;
    for (n, r) in blocks.rows().enumerate() {
        let l = density.log_density(r);
        if l.is_nan() || l == f64::INFINITY {
            return Err(Error::NonFiniteLogDensity(n));
        }
        if l < log_floor {
            floored += 1;
            sum += log_floor;
        } else {
            sum += l;
        }
    }
    let penalty = log(nt as f64) * (period * p_star + 2) as f64;
    Ok(BicValue {
        bic: -2.0 * sum + penalty,
        floored_fraction: floored as f64 / blocks.len() as f64,
    })
}

pub fn bic_value(
    blocks: &ResidualBlocks,
    density: &dyn BlockDensity,
    p_star: usize,
    period: usize,
    nt: usize,
) -> Result<f64> {
    bic_detailed(blocks, density, p_star, period, nt).map(|b| b.bic)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct BicEntry {
    pub p_star: usize,
    pub t_star: usize,
    /// `+inf` when the candidate could not be evaluated.
    pub bic: f64,
    pub density: Option<DensityKind>,
    pub floored_fraction: f64,
    pub unreliable: bool,
    pub estimation: Option<EstimationResult>,
    pub error: Option<String>,
}

impl BicEntry {
    fn failed(p_star: usize, t_star: usize, err: Error) -> Self {
        BicEntry {
            p_star,
            t_star,
            bic: f64::INFINITY,
            density: None,
            floored_fraction: 0.0,
            unreliable: false,
            estimation: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize))]
pub struct BicTable {
    /// Sorted by `(p_star, t_star)`.
    pub entries: Vec<BicEntry>,
    pub selected: (usize, usize),
    pub warnings: Vec<Warning>,
}

impl BicTable {
    pub fn get(&self, p_star: usize, t_star: usize) -> Option<&BicEntry> {
        self.entries.iter().find(|e| e.p_star == p_star && e.t_star == t_star)
    }

    pub fn selected_entry(&self) -> &BicEntry {
        self.get(self.selected.0, self.selected.1)
            .expect("selected entry is in the table")
    }

    /// Assembles a table from entries and selects its optimum.
    pub fn from_entries(mut entries: Vec<BicEntry>) -> Result<Self> {
        entries.sort_by_key(|e| (e.p_star, e.t_star));
        let selected = select_optimum(&entries)?;
        let warnings = entries
            .iter()
            .filter(|e| e.unreliable)
            .map(|e| Warning::UnreliableDensity {
                floored_fraction: e.floored_fraction,
            })
            .collect();
        Ok(BicTable {
            entries,
            selected,
            warnings,
        })
    }
}

/// `(p*, T*)` of the smallest finite BIC; ties go to the smaller `p*`, then
/// the smaller `T*`.
pub fn select_optimum(entries: &[BicEntry]) -> Result<(usize, usize)> {
    entries
        .iter()
        .filter(|e| e.bic.is_finite())
        .min_by(|a, b| {
            a.bic
                .total_cmp(&b.bic)
                .then(a.p_star.cmp(&b.p_star))
                .then(a.t_star.cmp(&b.t_star))
        })
        .map(|e| (e.p_star, e.t_star))
        .ok_or(Error::NoFiniteCandidate)
}

fn evaluate_candidate(
    values: &[f64],
    p_star: usize,
    t_star: usize,
    range: Option<(usize, usize)>,
    family: &NoiseFamily,
    path: DensityPath,
    opts: &IdentifyOptions,
) -> Result<BicEntry> {
    let est = estimate_eiv(values, t_star, p_star, &opts.estimator)?;
    let spec = est.to_spec()?;
    let noise = family.with_variance(est.sigma_z2_hat)?;
    let res = compute_residuals(values, &spec)?;
    let (blocks, nt) = match range {
        None => (ResidualBlocks::from_residuals(&res, t_star)?, values.len()),
        Some((first, last)) => (ResidualBlocks::from_range(&res, t_star, first, last)?, last - first + 1),
    };
    let fitted = block_density(&spec.rotated(blocks.phase_offset()), &noise, path, opts.inversion_nodes)?;
    let b = bic_detailed(&blocks, fitted.density.as_ref(), p_star, t_star, nt)?;
    let unreliable = b.floored_fraction > UNRELIABLE_FRACTION;
    if unreliable {
        Warning::UnreliableDensity {
            floored_fraction: b.floored_fraction,
        }
        .emit();
    }
    Ok(BicEntry {
        p_star,
        t_star,
        bic: b.bic,
        density: Some(fitted.kind),
        floored_fraction: b.floored_fraction,
        unreliable,
        estimation: Some(est),
        error: None,
    })
}

/// BIC over `p* = 1..=p_max` for a known period; blocks start at the second
/// cycle.
pub fn select_order_known_t(
    values: &[f64],
    period: usize,
    p_max: usize,
    family: &NoiseFamily,
    path: DensityPath,
    opts: &IdentifyOptions,
) -> Result<BicTable> {
    if p_max == 0 || p_max >= period {
        return Err(Error::InvalidArgument(format!(
            "p_max = {p_max} must satisfy 1 <= p_max < T = {period}"
        )));
    }
    let entries = (1..=p_max)
        .map(|p| {
            evaluate_candidate(values, p, period, None, family, path, opts)
                .unwrap_or_else(|e| BicEntry::failed(p, period, e))
        })
        .collect();
    BicTable::from_entries(entries)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Residual index range shared by every candidate period up to `t_max`:
/// it starts at `t_max + 1` and its length is the largest multiple of
/// `lcm(2..=t_max)` that fits in a series of `len` samples.
pub fn common_range(len: usize, t_max: usize) -> Result<(usize, usize)> {
    let lcm = (2..=t_max).fold(1, |acc, t| acc / gcd(acc, t) * t);
    let avail = len.saturating_sub(t_max);
    let span = avail - avail % lcm;
    if t_max < 2 || span == 0 {
        return Err(Error::InsufficientData(format!(
            "{len} samples leave no common residual range for periods up to {t_max}"
        )));
    }
    Ok((t_max + 1, t_max + span))
}

/// Candidate pairs `(p*, T*)` with `1 <= p* <= p_max`, `p* < T* <= t_max`.
pub fn joint_candidates(p_max: usize, t_max: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for p in 1..=p_max {
        for t in (p + 1)..=t_max {
            out.push((p, t));
        }
    }
    out
}

/// Joint BIC selection of order and period on the common residual range of
/// [`common_range`].
pub fn select_joint(
    values: &[f64],
    p_max: usize,
    t_max: usize,
    family: &NoiseFamily,
    path: DensityPath,
    opts: &IdentifyOptions,
) -> Result<BicTable> {
    if p_max == 0 || p_max >= t_max {
        return Err(Error::InvalidArgument(format!(
            "p_max = {p_max} must satisfy 1 <= p_max < T_max = {t_max}"
        )));
    }
    if values.len() < t_max * t_max {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least {}",
            values.len(),
            t_max * t_max
        )));
    }
    let range = common_range(values.len(), t_max)?;
    let entries = joint_candidates(p_max, t_max)
        .into_iter()
        .map(|(p, t)| {
            evaluate_candidate(values, p, t, Some(range), family, path, opts)
                .unwrap_or_else(|e| BicEntry::failed(p, t, e))
        })
        .collect();
    BicTable::from_entries(entries)
}
