//! Monte Carlo experiments and single-series fits.
//!
//! Replication `i` of every experiment simulates its series with seed
//! `derive_seed(seed, [REPLICATION, i])`, so records are identical under any
//! thread count. Reports carry the configuration that produced them.

use std::time::Instant;

use parid_core::estimation::{estimate_eiv, EstimationResult};
use parid_core::identification::{joint_candidates, select_joint, select_order_known_t, BicTable};
use parid_core::model::{simulate, Trajectory};
use parid_core::residuals::{compute_residuals, ResidualBlocks};
use parid_core::rng::{derive_seed, tag};
use parid_core::validation::{
    block_independence_check, bootstrap_null, gof_test, gof_test_with, CfDistance, GofTestResult, IndependenceReport,
    NullModel,
};
use parid_core::{ReplicationRunner, Sequential, Warning};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::io;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed of the series simulated for replication `i`.
pub fn replication_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, &[tag::REPLICATION, i as u64])
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<S, R> {
    pub kind: ExperimentKind,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub wall_time_secs: f64,
    pub summary: S,
    pub records: Vec<R>,
}

/// Per-replication records as a CSV table.
pub trait Tabular {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>);
}

fn strings(cells: &[&str]) -> Vec<String> {
    cells.iter().map(|s| s.to_string()).collect()
}

fn collect<T>(results: Vec<CliResult<T>>) -> CliResult<Vec<T>> {
    results.into_iter().collect()
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderIdRecord {
    pub replication: usize,
    pub seed: u64,
    pub selected_p: usize,
    pub correct: bool,
    /// BIC of `p* = 1..=p_max`.
    pub bic: Vec<f64>,
    /// Estimated noise variance for each `p*`.
    pub sigma_z2_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderIdSummary {
    pub period: usize,
    pub true_order: usize,
    pub p_max: usize,
    pub replications: usize,
    pub fraction_correct: f64,
    /// How often each `p* = 1..=p_max` was selected.
    pub selected_counts: Vec<usize>,
}

impl OrderIdSummary {
    pub fn from_records(period: usize, true_order: usize, p_max: usize, records: &[OrderIdRecord]) -> Self {
        let mut selected_counts = vec![0; p_max];
        for r in records {
            selected_counts[r.selected_p - 1] += 1;
        }
        OrderIdSummary {
            period,
            true_order,
            p_max,
            replications: records.len(),
            fraction_correct: fraction(records.iter().filter(|r| r.correct).count(), records.len()),
            selected_counts,
        }
    }
}

pub type OrderIdReport = Report<OrderIdSummary, OrderIdRecord>;

impl Tabular for OrderIdReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = strings(&["replication", "seed", "selected_p", "correct"]);
        header.extend((1..=self.summary.p_max).map(|p| format!("bic_p{p}")));
        header.extend((1..=self.summary.p_max).map(|p| format!("sigma_z2_p{p}")));
        let rows = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.replication.to_string(),
                    r.seed.to_string(),
                    r.selected_p.to_string(),
                    r.correct.to_string(),
                ];
                row.extend(r.bic.iter().map(f64::to_string));
                row.extend(r.sigma_z2_hat.iter().map(f64::to_string));
                row
            })
            .collect();
        (header, rows)
    }
}

fn sigma_z2_column(table: &BicTable) -> Vec<f64> {
    table
        .entries
        .iter()
        .map(|e| e.estimation.as_ref().map_or(f64::NAN, |est| est.sigma_z2_hat))
        .collect()
}

/// Order selection with known period on simulated series.
pub fn run_order_id<R: ReplicationRunner>(cfg: &ExperimentConfig, runner: &R) -> CliResult<OrderIdReport> {
    cfg.validate(ExperimentKind::OrderId)?;
    let start = Instant::now();
    let (seed, spec, noise, n_obs) = (cfg.seed()?, cfg.spec()?, cfg.noise_spec()?, cfg.n_obs()?);
    let family = cfg.family()?;
    let p_max = cfg.p_max_for(spec.period())?;
    let opts = cfg.identify_options();
    let records = collect(runner.run(cfg.replications, |i| -> CliResult<OrderIdRecord> {
        let s = replication_seed(seed, i);
        let y = simulate(&spec, &noise, n_obs, cfg.sim_options(), s)?;
        let table = select_order_known_t(&y.values, spec.period(), p_max, &family, cfg.density_path, &opts)?;
        Ok(OrderIdRecord {
            replication: i,
            seed: s,
            selected_p: table.selected.0,
            correct: table.selected.0 == spec.order(),
            bic: table.entries.iter().map(|e| e.bic).collect(),
            sigma_z2_hat: sigma_z2_column(&table),
        })
    }))?;
    Ok(Report {
        kind: ExperimentKind::OrderId,
        version: VERSION,
        config: cfg.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        summary: OrderIdSummary::from_records(spec.period(), spec.order(), p_max, &records),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointIdRecord {
    pub replication: usize,
    pub seed: u64,
    pub selected_p: usize,
    pub selected_t: usize,
    pub joint_correct: bool,
    pub period_correct: bool,
    /// BIC per candidate, in the order of the summary's `candidates`.
    pub bic: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointIdSummary {
    pub true_order: usize,
    pub true_period: usize,
    pub candidates: Vec<(usize, usize)>,
    pub replications: usize,
    pub joint_fraction: f64,
    pub period_fraction: f64,
}

impl JointIdSummary {
    pub fn from_records(
        true_order: usize,
        true_period: usize,
        candidates: Vec<(usize, usize)>,
        records: &[JointIdRecord],
    ) -> Self {
        let n = records.len();
        JointIdSummary {
            true_order,
            true_period,
            candidates,
            replications: n,
            joint_fraction: fraction(records.iter().filter(|r| r.joint_correct).count(), n),
            period_fraction: fraction(records.iter().filter(|r| r.period_correct).count(), n),
        }
    }
}

pub type JointIdReport = Report<JointIdSummary, JointIdRecord>;

impl Tabular for JointIdReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = strings(&[
            "replication",
            "seed",
            "selected_p",
            "selected_T",
            "joint_correct",
            "period_correct",
        ]);
        header.extend(self.summary.candidates.iter().map(|(p, t)| format!("bic_p{p}_T{t}")));
        let rows = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.replication.to_string(),
                    r.seed.to_string(),
                    r.selected_p.to_string(),
                    r.selected_t.to_string(),
                    r.joint_correct.to_string(),
                    r.period_correct.to_string(),
                ];
                row.extend(r.bic.iter().map(f64::to_string));
                row
            })
            .collect();
        (header, rows)
    }
}

/// Joint order and period selection on simulated series.
pub fn run_joint_id<R: ReplicationRunner>(cfg: &ExperimentConfig, runner: &R) -> CliResult<JointIdReport> {
    cfg.validate(ExperimentKind::JointId)?;
    let start = Instant::now();
    let (seed, spec, noise, n_obs) = (cfg.seed()?, cfg.spec()?, cfg.noise_spec()?, cfg.n_obs()?);
    let family = cfg.family()?;
    let (p_max, t_max) = cfg.joint_setup(n_obs)?;
    let opts = cfg.identify_options();
    let candidates = joint_candidates(p_max, t_max);
    let records = collect(runner.run(cfg.replications, |i| -> CliResult<JointIdRecord> {
        let s = replication_seed(seed, i);
        let y = simulate(&spec, &noise, n_obs, cfg.sim_options(), s)?;
        let table = select_joint(&y.values, p_max, t_max, &family, cfg.density_path, &opts)?;
        let (p, t) = table.selected;
        Ok(JointIdRecord {
            replication: i,
            seed: s,
            selected_p: p,
            selected_t: t,
            joint_correct: (p, t) == (spec.order(), spec.period()),
            period_correct: t == spec.period(),
            bic: candidates
                .iter()
                .map(|&(p, t)| table.get(p, t).map_or(f64::INFINITY, |e| e.bic))
                .collect(),
        })
    }))?;
    Ok(Report {
        kind: ExperimentKind::JointId,
        version: VERSION,
        config: cfg.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        summary: JointIdSummary::from_records(spec.order(), spec.period(), candidates, &records),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRecord {
    pub variance: f64,
    pub replication: usize,
    pub seed: u64,
    pub d_observed: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPoint {
    pub variance: f64,
    pub replications: usize,
    pub rejections: usize,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSummary {
    pub alpha: f64,
    pub m_boot: usize,
    pub null: NullModel,
    pub curve: Vec<PowerPoint>,
}

impl PowerSummary {
    pub fn from_records(
        alpha: f64,
        m_boot: usize,
        null: NullModel,
        variances: &[f64],
        records: &[PowerRecord],
    ) -> Self {
        let curve = variances
            .iter()
            .map(|&v| {
                let at: Vec<&PowerRecord> = records.iter().filter(|r| r.variance == v).collect();
                let rejections = at.iter().filter(|r| r.rejected).count();
                PowerPoint {
                    variance: v,
                    replications: at.len(),
                    rejections,
                    power: fraction(rejections, at.len()),
                }
            })
            .collect();
        PowerSummary {
            alpha,
            m_boot,
            null,
            curve,
        }
    }
}

pub type PowerReport = Report<PowerSummary, PowerRecord>;

impl Tabular for PowerReport {
    fn table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let header = strings(&["variance", "replication", "seed", "d_observed", "p_value", "rejected"]);
        let rows = self
            .records
            .iter()
            .map(|r| {
                vec![
                    r.variance.to_string(),
                    r.replication.to_string(),
                    r.seed.to_string(),
                    r.d_observed.to_string(),
                    r.p_value.to_string(),
                    r.rejected.to_string(),
                ]
            })
            .collect();
        (header, rows)
    }
}

/// Rejection rates of the goodness-of-fit test against the configured
/// (known) null model, for data whose noise is the null noise rescaled to
/// each variance of `[power]`.
///
/// Replication `i` uses one seed for every variance, so all variances see
/// the same innovations and standardized noise, and share one bootstrap
/// sample under the null.
pub fn run_power<R: ReplicationRunner>(cfg: &ExperimentConfig, runner: &R) -> CliResult<PowerReport> {
    cfg.validate(ExperimentKind::Power)?;
    let start = Instant::now();
    let (seed, spec, noise, n_obs) = (cfg.seed()?, cfg.spec()?, cfg.noise_spec()?, cfg.n_obs()?);
    let variances = cfg.power.as_ref().map(|p| p.variances.clone()).unwrap_or_default();
    let null = NullModel::new(spec.clone(), noise.clone());
    let grid = cfg.t_grid(spec.period())?;
    let dist = CfDistance::new(&null.spec, &null.noise, grid)?;
    let data_noise = variances
        .iter()
        .map(|&v| noise.scaled_to_variance(v))
        .collect::<Result<Vec<_>, _>>()?;
    let per_rep = collect(runner.run(cfg.replications, |i| -> CliResult<Vec<PowerRecord>> {
        let s = replication_seed(seed, i);
        let boot = bootstrap_null(&null, &dist, n_obs, cfg.m_boot, s, &Sequential)?;
        variances
            .iter()
            .zip(&data_noise)
            .map(|(&v, z)| {
                let y = simulate(&spec, z, n_obs, cfg.sim_options(), s)?;
                let r = gof_test_with(&y.values, &null, &dist, &boot)?;
                Ok(PowerRecord {
                    variance: v,
                    replication: i,
                    seed: s,
                    d_observed: r.d_observed,
                    p_value: r.p_value,
                    rejected: r.rejects(cfg.alpha),
                })
            })
            .collect()
    }))?;
    // order by variance, then replication
    let mut records: Vec<PowerRecord> = Vec::with_capacity(per_rep.len() * variances.len());
    for k in 0..variances.len() {
        records.extend(per_rep.iter().map(|r| r[k].clone()));
    }
    Ok(Report {
        kind: ExperimentKind::Power,
        version: VERSION,
        config: cfg.clone(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        summary: PowerSummary::from_records(cfg.alpha, cfg.m_boot, null, &variances, &records),
        records,
    })
}

/// The series a single-series command works on: the `[data]` file when
/// given, otherwise a simulation from `[model]` and `[noise]`.
pub fn load_or_simulate(cfg: &ExperimentConfig) -> CliResult<Trajectory> {
    match &cfg.data {
        Some(d) => {
            let series = io::read_series(&d.path)?;
            let period = d
                .period
                .or(series.period)
                .or_else(|| cfg.model.as_ref().map(|m| m.phi.len()))
                .ok_or_else(|| CliError::config("the period is not declared in the data file, [data] or [model]"))?;
            if period < 2 {
                return Err(CliError::config(format!("period {period} must be at least 2")));
            }
            Ok(Trajectory::from_values(series.values, period))
        }
        None => {
            let (spec, noise, n_obs) = (cfg.spec()?, cfg.noise_spec()?, cfg.n_obs()?);
            Ok(simulate(&spec, &noise, n_obs, cfg.sim_options(), cfg.seed()?)?)
        }
    }
}

/// Order fitted by single-series commands.
pub fn fit_order(cfg: &ExperimentConfig) -> CliResult<usize> {
    cfg.order
        .or_else(|| cfg.model.as_ref().and_then(|m| m.phi.first().map(Vec::len)))
        .ok_or_else(|| CliError::config("order is required"))
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleFitReport {
    pub kind: ExperimentKind,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub period: usize,
    pub order: usize,
    pub n_obs: usize,
    pub estimation: EstimationResult,
    pub bic_table: Option<BicTable>,
    pub gof: Option<GofTestResult>,
    pub independence: Option<IndependenceReport>,
    /// Failures of individual stages that did not stop the fit.
    pub stage_errors: Vec<String>,
    pub warnings: Vec<Warning>,
}

/// Estimation, order selection and goodness of fit on one series.
pub fn run_single_fit<R: ReplicationRunner>(cfg: &ExperimentConfig, runner: &R) -> CliResult<SingleFitReport> {
    cfg.validate(ExperimentKind::SingleFit)?;
    let seed = cfg.seed()?;
    let traj = load_or_simulate(cfg)?;
    let (period, p) = (traj.period, fit_order(cfg)?);
    let family = cfg.family()?;
    let opts = cfg.identify_options();
    let est = estimate_eiv(&traj.values, period, p, &opts.estimator)?;
    let mut warnings = traj.warnings.clone();
    warnings.extend(est.warnings.iter().cloned());
    let mut stage_errors = Vec::new();

    let bic_table = match cfg.p_max_for(period) {
        Ok(p_max) => match select_order_known_t(&traj.values, period, p_max, &family, cfg.density_path, &opts) {
            Ok(t) => Some(t),
            Err(e) => {
                stage_errors.push(format!("identification: {e}"));
                None
            }
        },
        Err(e) => {
            stage_errors.push(format!("identification: {e}"));
            None
        }
    };

    let spec = est.to_spec()?;
    let blocks = ResidualBlocks::from_residuals(&compute_residuals(&traj.values, &spec)?, period)?;
    if blocks.dropped() > 0 {
        warnings.push(Warning::TrailingSamplesDropped {
            count: blocks.dropped(),
        });
    }
    let independence = match block_independence_check(&blocks) {
        Ok(r) => Some(r),
        Err(e) => {
            stage_errors.push(format!("independence: {e}"));
            None
        }
    };
    let gof = match cfg.t_grid(period).and_then(|grid| {
        let null = NullModel::from_estimate(&est, &family)?;
        Ok(gof_test(&traj.values, &null, cfg.m_boot, &grid, seed, runner)?)
    }) {
        Ok(g) => Some(g),
        Err(e) => {
            stage_errors.push(format!("validation: {e}"));
            None
        }
    };
    Ok(SingleFitReport {
        kind: ExperimentKind::SingleFit,
        version: VERSION,
        config: cfg.clone(),
        period,
        order: p,
        n_obs: traj.len(),
        estimation: est,
        bic_table,
        gof,
        independence,
        stage_errors,
        warnings,
    })
}
