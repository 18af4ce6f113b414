//! TOML experiment configuration.
//!
//! ```toml
//! kind = "order-id"
//! seed = 7
//! replications = 200
//! n_obs = 1200
//! p_max = 3
//!
//! [model]
//! sigma_xi2 = 1.0
//! phi = [[-0.1208], [-0.5773], [-0.0362], [-0.3254]]
//!
//! [noise]
//! kind = "gaussian"
//! variance = 0.2
//! ```
//!
//! Unknown keys are rejected. A mixture `[noise]` section gives `weights`
//! and component `variances`; an optional `variance` rescales the mixture to
//! that total variance while keeping its shape.

use std::path::{Path, PathBuf};

use parid_core::identification::{common_range, DensityPath, IdentifyOptions, NoiseFamily};
use parid_core::model::{NoiseSpec, ParSpec, SimOptions};
use parid_core::validation::{TGrid, MAX_LATTICE_POINTS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OrderId,
    JointId,
    Power,
    SingleFit,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Optional; must equal the number of `phi` rows when given.
    pub period: Option<usize>,
    #[serde(default = "one")]
    pub sigma_xi2: f64,
    /// Row `v-1` holds `phi_1(v), ..., phi_p(v)`.
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub variance: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_bound")]
    pub bound: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            bound: TGrid::DEFAULT_BOUND,
            step: TGrid::DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    /// True noise variances of the simulated data.
    pub variances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    /// Overrides a period declared in the file header.
    pub period: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub seed: Option<u64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub n_obs: Option<usize>,
    /// Order fitted by `estimate` and `validate`; defaults to the model order.
    pub order: Option<usize>,
    pub p_max: Option<usize>,
    pub t_max: Option<usize>,
    #[serde(default)]
    pub density_path: DensityPath,
    #[serde(default = "default_m_boot")]
    pub m_boot: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_nodes")]
    pub inversion_nodes: usize,
    pub out_dir: Option<PathBuf>,
    pub model: Option<ModelConfig>,
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    pub power: Option<PowerConfig>,
    pub data: Option<DataConfig>,
}

fn one() -> f64 {
    1.0
}
fn default_bound() -> f64 {
    TGrid::DEFAULT_BOUND
}
fn default_step() -> f64 {
    TGrid::DEFAULT_STEP
}
fn default_replications() -> usize {
    200
}
fn default_m_boot() -> usize {
    200
}
fn default_alpha() -> f64 {
    0.05
}
fn default_burn_in() -> usize {
    SimOptions::default().burn_in
}
fn default_nodes() -> usize {
    32
}

impl ModelConfig {
    pub fn to_spec(&self) -> CliResult<ParSpec> {
        if let Some(t) = self.period {
            if t != self.phi.len() {
                return Err(CliError::config(format!(
                    "model.period = {t} but model.phi has {} rows",
                    self.phi.len()
                )));
            }
        }
        ParSpec::new(self.phi.clone(), self.sigma_xi2).map_err(|e| CliError::config(format!("model: {e}")))
    }
}

impl NoiseConfig {
    /// The configured noise distribution.
    pub fn to_spec(&self) -> CliResult<NoiseSpec> {
        let err = |e: parid_core::Error| CliError::config(format!("noise: {e}"));
        match self.kind {
            NoiseKind::Gaussian => {
                if self.weights.is_some() || self.variances.is_some() {
                    return Err(CliError::config("noise: weights and variances apply to mixtures only"));
                }
                let v = self
                    .variance
                    .ok_or_else(|| CliError::config("noise.variance is required"))?;
                NoiseSpec::gaussian(v).map_err(err)
            }
            NoiseKind::Mixture => {
                let w = self
                    .weights
                    .clone()
                    .ok_or_else(|| CliError::config("noise.weights is required"))?;
                let s = self
                    .variances
                    .clone()
                    .ok_or_else(|| CliError::config("noise.variances is required"))?;
                let shape = NoiseSpec::mixture(w, s).map_err(err)?;
                match self.variance {
                    Some(v) => shape.scaled_to_variance(v).map_err(err),
                    None => Ok(shape),
                }
            }
        }
    }

    /// Family assumed when fitting: Gaussian, or the mixture shape.
    pub fn family(&self) -> CliResult<NoiseFamily> {
        Ok(match self.to_spec()? {
            NoiseSpec::Gaussian { .. } => NoiseFamily::Gaussian,
            m @ NoiseSpec::Mixture { .. } => NoiseFamily::Mixture(m),
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::config("seed is required"))
    }

    pub fn spec(&self) -> CliResult<ParSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| CliError::config("[model] section is required"))?
            .to_spec()
    }

    pub fn noise_spec(&self) -> CliResult<NoiseSpec> {
        self.noise
            .as_ref()
            .ok_or_else(|| CliError::config("[noise] section is required"))?
            .to_spec()
    }

    /// Family assumed when fitting; Gaussian when no `[noise]` is given.
    pub fn family(&self) -> CliResult<NoiseFamily> {
        match &self.noise {
            Some(n) => n.family(),
            None => Ok(NoiseFamily::Gaussian),
        }
    }

    pub fn n_obs(&self) -> CliResult<usize> {
        self.n_obs.ok_or_else(|| CliError::config("n_obs is required"))
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            burn_in: self.burn_in,
            keep_components: false,
        }
    }

    pub fn t_grid(&self, dim: usize) -> CliResult<TGrid> {
        let grid =
            TGrid::new(dim, self.grid.bound, self.grid.step).map_err(|e| CliError::config(format!("grid: {e}")))?;
        if grid.n_evaluated() > MAX_LATTICE_POINTS {
            return Err(CliError::config(format!(
                "grid: {} lattice points in {dim} dimensions exceed the limit of {MAX_LATTICE_POINTS}; increase grid.step or decrease grid.bound",
                grid.n_evaluated()
            )));
        }
        Ok(grid)
    }

    pub fn identify_options(&self) -> IdentifyOptions {
        IdentifyOptions {
            inversion_nodes: self.inversion_nodes,
            ..IdentifyOptions::default()
        }
    }

    /// Largest candidate order for a known period.
    pub fn p_max_for(&self, period: usize) -> CliResult<usize> {
        let p = self.p_max.unwrap_or(period.saturating_sub(1));
        if p == 0 || p >= period {
            return Err(CliError::config(format!(
                "p_max = {p} must satisfy 1 <= p_max < T = {period}"
            )));
        }
        Ok(p)
    }

    fn joint_bounds(&self) -> CliResult<(usize, usize)> {
        let t_max = self.t_max.ok_or_else(|| CliError::config("t_max is required"))?;
        let p_max = self.p_max.unwrap_or(t_max.saturating_sub(1));
        if t_max < 2 || p_max == 0 || p_max >= t_max {
            return Err(CliError::config(format!(
                "need 1 <= p_max < t_max, got p_max = {p_max}, t_max = {t_max}"
            )));
        }
        Ok((p_max, t_max))
    }

    /// `(p_max, t_max)` for joint selection on a series of `len` samples.
    /// The residual range after `t_max` must split into whole blocks of
    /// every candidate period.
    pub fn joint_setup(&self, len: usize) -> CliResult<(usize, usize)> {
        let (p_max, t_max) = self.joint_bounds()?;
        let (first, last) = common_range(len, t_max).map_err(|e| CliError::config(e.to_string()))?;
        if last != len {
            return Err(CliError::config(format!(
                "series length {len} leaves a residual range {first}..={len} not divisible by every period up to {t_max}; use length {last}"
            )));
        }
        Ok((p_max, t_max))
    }

    /// Checks the fields required by `kind`.
    pub fn validate(&self, kind: ExperimentKind) -> CliResult<()> {
        self.seed()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(CliError::config(format!("alpha = {} must lie in [0, 1]", self.alpha)));
        }
        let needs_data = self.data.is_none();
        match kind {
            ExperimentKind::Simulate => {
                self.spec()?;
                self.noise_spec()?;
                self.n_obs()?;
            }
            ExperimentKind::OrderId => {
                let spec = self.spec()?;
                self.noise_spec()?;
                self.n_obs()?;
                self.p_max_for(spec.period())?;
                self.check_replications()?;
            }
            ExperimentKind::JointId => {
                self.spec()?;
                self.noise_spec()?;
                self.joint_setup(self.n_obs()?)?;
                self.check_replications()?;
            }
            ExperimentKind::Power => {
                let spec = self.spec()?;
                self.noise_spec()?;
                self.n_obs()?;
                self.t_grid(spec.period())?;
                self.check_replications()?;
                self.check_m_boot()?;
                let p = self
                    .power
                    .as_ref()
                    .ok_or_else(|| CliError::config("[power] section is required"))?;
                if p.variances.is_empty() || p.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(CliError::config(
                        "power.variances must be a non-empty list of variances >= 0",
                    ));
                }
            }
            ExperimentKind::SingleFit => {
                if needs_data {
                    self.spec()?;
                    self.noise_spec()?;
                    self.n_obs()?;
                } else if self.order.is_none() && self.model.is_none() {
                    return Err(CliError::config("order is required when fitting a data file"));
                }
                self.check_m_boot()?;
            }
        }
        Ok(())
    }

    fn check_replications(&self) -> CliResult<()> {
        if self.replications == 0 {
            return Err(CliError::config("replications must be positive"));
        }
        Ok(())
    }

    fn check_m_boot(&self) -> CliResult<()> {
        if self.m_boot < parid_core::validation::MIN_BOOTSTRAP {
            return Err(CliError::config(format!(
                "m_boot = {} is below the minimum of {}",
                self.m_boot,
                parid_core::validation::MIN_BOOTSTRAP
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "order-id"
seed = 7
n_obs = 1200

[model]
phi = [[0.4], [-0.6]]

[noise]
kind = "gaussian"
variance = 1.0
"#;

    #[test]
    fn defaults() {
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(c.kind, Some(ExperimentKind::OrderId));
        assert_eq!(c.replications, 200);
        assert_eq!(c.m_boot, 200);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.density_path, DensityPath::Closed);
        assert_eq!(c.grid, GridConfig::default());
        assert_eq!(c.spec().unwrap().sigma_xi2(), 1.0);
        assert_eq!(c.p_max_for(2).unwrap(), 1);
        c.validate(ExperimentKind::OrderId).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BASE}\nbogus = 1\n");
        let err = ExperimentConfig::from_toml(&text.replace("seed = 7", "seed = 7\nfoo = 2")).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
        let err =
            ExperimentConfig::from_toml(&BASE.replace("variance = 1.0", "variance = 1.0\nscale = 2")).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn field_level_messages() {
        let c = ExperimentConfig::from_toml(&BASE.replace("seed = 7\n", "")).unwrap();
        assert_eq!(
            c.validate(ExperimentKind::OrderId).unwrap_err().to_string(),
            "config error: seed is required"
        );
        let c = ExperimentConfig::from_toml(BASE).unwrap();
        let e = c.validate(ExperimentKind::Power).unwrap_err().to_string();
        assert!(e.contains("[power]"), "{e}");
        let e = c.validate(ExperimentKind::JointId).unwrap_err().to_string();
        assert!(e.contains("t_max"), "{e}");
        let c = ExperimentConfig::from_toml(&BASE.replace("phi = ", "period = 3\nphi = ")).unwrap();
        assert!(c.spec().unwrap_err().to_string().contains("model.period"));
    }

    #[test]
    fn mixture_noise_rescaled() {
        let text = BASE.replace(
            "kind = \"gaussian\"\nvariance = 1.0",
            "kind = \"mixture\"\nweights = [0.5, 0.5]\nvariances = [0.5, 1.5]\nvariance = 2.0",
        );
        let c = ExperimentConfig::from_toml(&text).unwrap();
        let n = c.noise_spec().unwrap();
        assert!((n.total_variance() - 2.0).abs() < 1e-12);
        assert!(matches!(c.family().unwrap(), NoiseFamily::Mixture(_)));
    }

    #[test]
    fn joint_length_rule() {
        let text = BASE.replace("n_obs = 1200", "n_obs = 1205\nt_max = 5\np_max = 4");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.joint_setup(1205).unwrap(), (4, 5));
        assert!(c.joint_setup(1200).unwrap_err().to_string().contains("use length 1145"));
        c.validate(ExperimentKind::JointId).unwrap();
    }
}
