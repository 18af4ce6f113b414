//! Command-line interface.
//!
//! Every command reads a TOML configuration ([`crate::config`]); flags
//! override the matching config fields. Outputs go to `--out` (or
//! `out_dir`, or the working directory): CSV for tables, JSON for reports.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use parid_core::estimation::estimate_eiv;
use parid_core::identification::{select_joint, select_order_known_t, DensityPath};
use parid_core::model::simulate;
use parid_core::residuals::{compute_residuals, ResidualBlocks};
use parid_core::validation::{gof_test, NullModel};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{CliError, CliResult};
use crate::experiments::{self, fit_order, load_or_simulate, Tabular};
use crate::io;
use crate::runner::Parallel;

#[derive(Debug, Parser)]
#[command(
    name = "parid",
    version,
    about = "Identification and validation of periodic AR models observed with noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a series from [model] and [noise].
    Simulate,
    /// Errors-in-variables estimate of a series.
    Estimate,
    /// BIC order selection with the period known.
    Identify,
    /// BIC selection of order and period together.
    IdentifyJoint,
    /// Goodness-of-fit test of the fitted model.
    Validate,
    /// Run the experiment named by `kind` in the config.
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DensityPathArg {
    Closed,
    Inversion,
}

impl From<DensityPathArg> for DensityPath {
    fn from(d: DensityPathArg) -> Self {
        match d {
            DensityPathArg::Closed => DensityPath::Closed,
            DensityPathArg::Inversion => DensityPath::Inversion,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every CPU.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    pub threads: usize,
    #[arg(long, global = true, value_enum)]
    pub density_path: Option<DensityPathArg>,
    /// Series file for the single-series commands; overrides [data].
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

impl CommonArgs {
    /// The config file with flag overrides applied.
    pub fn config(&self) -> CliResult<ExperimentConfig> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::config("--config is required"))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(d) = self.density_path {
            cfg.density_path = d.into();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(p) = &self.data {
            let period = cfg.data.as_ref().and_then(|d| d.period);
            cfg.data = Some(crate::config::DataConfig {
                path: p.clone(),
                period,
            });
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    io::ensure_dir(cfg.out_dir.as_deref().unwrap_or(Path::new(".")))
}

#[derive(Serialize)]
struct Output<'a, T: Serialize> {
    command: &'a str,
    version: &'static str,
    config: &'a ExperimentConfig,
    #[serde(flatten)]
    result: T,
}

fn write_report<T: Serialize>(dir: &Path, name: &str, cfg: &ExperimentConfig, result: T) -> CliResult<()> {
    let out = Output {
        command: name,
        version: experiments::VERSION,
        config: cfg,
        result,
    };
    io::write_json(&dir.join(format!("{}.json", name.replace('-', "_"))), &out)
}

fn write_tabular<T: Tabular + Serialize>(dir: &Path, report: &T) -> CliResult<()> {
    let (header, rows) = report.table();
    io::write_table(&dir.join("records.csv"), &header, &rows)?;
    io::write_json(&dir.join("report.json"), report)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.common.config()?;
    let runner = Parallel::new(cli.common.threads);
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Estimate => cmd_estimate(&cfg),
        Command::Identify => cmd_identify(&cfg),
        Command::IdentifyJoint => cmd_identify_joint(&cfg),
        Command::Validate => cmd_validate(&cfg, &runner),
        Command::Experiment => cmd_experiment(&cfg, &runner),
    }
}

fn cmd_simulate(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.validate(ExperimentKind::Simulate)?;
    let dir = out_dir(cfg)?;
    let spec = cfg.spec()?;
    let traj = simulate(&spec, &cfg.noise_spec()?, cfg.n_obs()?, cfg.sim_options(), cfg.seed()?)?;
    io::write_series(&dir.join("series.csv"), &traj.values, spec.period())?;
    #[derive(Serialize)]
    struct R<'a> {
        n_obs: usize,
        period: usize,
        warnings: &'a [parid_core::Warning],
    }
    write_report(
        &dir,
        "simulate",
        cfg,
        R {
            n_obs: traj.len(),
            period: spec.period(),
            warnings: &traj.warnings,
        },
    )?;
    println!("wrote {} samples to {}", traj.len(), dir.join("series.csv").display());
    Ok(())
}

fn cmd_estimate(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.seed()?;
    let dir = out_dir(cfg)?;
    let traj = load_or_simulate(cfg)?;
    let p = fit_order(cfg)?;
    let est = estimate_eiv(&traj.values, traj.period, p, &cfg.identify_options().estimator)?;
    let rows: Vec<Vec<String>> = est
        .cost_curve
        .iter()
        .map(|(s, c)| vec![s.to_string(), c.to_string()])
        .collect();
    io::write_table(&dir.join("cost_curve.csv"), &["sigma_z2".into(), "cost".into()], &rows)?;
    let blocks = ResidualBlocks::from_residuals(&compute_residuals(&traj.values, &est.to_spec()?)?, traj.period)?;
    io::write_blocks(&dir.join("residual_blocks.csv"), &blocks)?;
    #[derive(Serialize)]
    struct R<'a> {
        estimation: &'a parid_core::estimation::EstimationResult,
    }
    write_report(&dir, "estimate", cfg, R { estimation: &est })?;
    println!("sigma_z2_hat = {} (zeta = {})", est.sigma_z2_hat, est.zeta);
    for (v, row) in est.phi_hat.iter().enumerate() {
        println!("phi({}) = {:?}", v + 1, row);
    }
    Ok(())
}

fn cmd_identify(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.seed()?;
    let dir = out_dir(cfg)?;
    let traj = load_or_simulate(cfg)?;
    let p_max = cfg.p_max_for(traj.period)?;
    let table = select_order_known_t(
        &traj.values,
        traj.period,
        p_max,
        &cfg.family()?,
        cfg.density_path,
        &cfg.identify_options(),
    )?;
    io::write_bic_table(&dir.join("bic_table.csv"), &table)?;
    #[derive(Serialize)]
    struct R<'a> {
        bic_table: &'a parid_core::identification::BicTable,
    }
    write_report(&dir, "identify", cfg, R { bic_table: &table })?;
    println!("selected p = {} (T = {})", table.selected.0, table.selected.1);
    Ok(())
}

fn cmd_identify_joint(cfg: &ExperimentConfig) -> CliResult<()> {
    cfg.seed()?;
    let dir = out_dir(cfg)?;
    let traj = load_or_simulate(cfg)?;
    let (p_max, t_max) = cfg.joint_setup(traj.len())?;
    let table = select_joint(
        &traj.values,
        p_max,
        t_max,
        &cfg.family()?,
        cfg.density_path,
        &cfg.identify_options(),
    )?;
    io::write_bic_table(&dir.join("bic_table.csv"), &table)?;
    #[derive(Serialize)]
    struct R<'a> {
        bic_table: &'a parid_core::identification::BicTable,
    }
    write_report(&dir, "identify-joint", cfg, R { bic_table: &table })?;
    println!("selected p = {}, T = {}", table.selected.0, table.selected.1);
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig, runner: &Parallel) -> CliResult<()> {
    cfg.validate(ExperimentKind::SingleFit)?;
    let dir = out_dir(cfg)?;
    let traj = load_or_simulate(cfg)?;
    let p = fit_order(cfg)?;
    let est = estimate_eiv(&traj.values, traj.period, p, &cfg.identify_options().estimator)?;
    let null = NullModel::from_estimate(&est, &cfg.family()?)?;
    let result = gof_test(
        &traj.values,
        &null,
        cfg.m_boot,
        &cfg.t_grid(traj.period)?,
        cfg.seed()?,
        runner,
    )?;
    let rows: Vec<Vec<String>> = result
        .d_samples
        .iter()
        .enumerate()
        .map(|(i, d)| vec![i.to_string(), d.to_string()])
        .collect();
    io::write_table(&dir.join("bootstrap.csv"), &["replication".into(), "d".into()], &rows)?;
    #[derive(Serialize)]
    struct R<'a> {
        rejected: bool,
        gof: &'a parid_core::validation::GofTestResult,
    }
    write_report(
        &dir,
        "validate",
        cfg,
        R {
            rejected: result.rejects(cfg.alpha),
            gof: &result,
        },
    )?;
    println!(
        "D = {}, p-value = {} ({} at alpha = {})",
        result.d_observed,
        result.p_value,
        if result.rejects(cfg.alpha) {
            "rejected"
        } else {
            "not rejected"
        },
        cfg.alpha
    );
    Ok(())
}

fn cmd_experiment(cfg: &ExperimentConfig, runner: &Parallel) -> CliResult<()> {
    let kind = cfg
        .kind
        .ok_or_else(|| CliError::config("kind is required for `experiment`"))?;
    let dir = out_dir(cfg)?;
    match kind {
        ExperimentKind::OrderId => {
            let r = experiments::run_order_id(cfg, runner)?;
            write_tabular(&dir, &r)?;
            println!("fraction correct = {}", r.summary.fraction_correct);
        }
        ExperimentKind::JointId => {
            let r = experiments::run_joint_id(cfg, runner)?;
            write_tabular(&dir, &r)?;
            println!(
                "joint fraction = {}, period fraction = {}",
                r.summary.joint_fraction, r.summary.period_fraction
            );
        }
        ExperimentKind::Power => {
            let r = experiments::run_power(cfg, runner)?;
            write_tabular(&dir, &r)?;
            let rows: Vec<Vec<String>> = r
                .summary
                .curve
                .iter()
                .map(|p| {
                    vec![
                        p.variance.to_string(),
                        p.replications.to_string(),
                        p.rejections.to_string(),
                        p.power.to_string(),
                    ]
                })
                .collect();
            io::write_table(
                &dir.join("power_curve.csv"),
                &[
                    "variance".into(),
                    "replications".into(),
                    "rejections".into(),
                    "power".into(),
                ],
                &rows,
            )?;
            for p in &r.summary.curve {
                println!("variance {}: power {}", p.variance, p.power);
            }
        }
        ExperimentKind::SingleFit => {
            let r = experiments::run_single_fit(cfg, runner)?;
            if let Some(t) = &r.bic_table {
                io::write_bic_table(&dir.join("bic_table.csv"), t)?;
            }
            io::write_json(&dir.join("report.json"), &r)?;
            println!("sigma_z2_hat = {}", r.estimation.sigma_z2_hat);
            for e in &r.stage_errors {
                println!("{e}");
            }
        }
        ExperimentKind::Simulate => cmd_simulate(cfg)?,
    }
    Ok(())
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
