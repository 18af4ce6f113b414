use parid::config::{ExperimentConfig, ExperimentKind};
use parid::experiments::{
    run_joint_id, run_order_id, run_power, run_single_fit, JointIdSummary, OrderIdSummary, PowerSummary, Tabular,
};
use parid::Parallel;
use parid_core::Warning;

const MODEL: &str = r#"
[model]
phi = [[-0.1208], [-0.5773], [-0.0362], [-0.3254]]

[noise]
kind = "gaussian"
variance = 0.2
"#;

fn cfg(head: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!("{head}\n{MODEL}")).unwrap()
}

#[test]
fn single_replication() {
    let c = cfg("seed = 1\nreplications = 1\nn_obs = 1200\np_max = 3");
    let r = run_order_id(&c, &Parallel::new(1)).unwrap();
    assert_eq!(r.records.len(), 1);
    assert!(r.summary.fraction_correct == 0.0 || r.summary.fraction_correct == 1.0);
    assert_eq!(r.records[0].bic.len(), 3);
    assert_eq!(r.config, c);
}

#[test]
fn order_id_summary_matches_records() {
    let c = cfg("seed = 2\nreplications = 15\nn_obs = 1200\np_max = 3");
    let r = run_order_id(&c, &Parallel::new(2)).unwrap();
    assert_eq!(r.summary, OrderIdSummary::from_records(4, 1, 3, &r.records));
    assert_eq!(r.summary.selected_counts.iter().sum::<usize>(), 15);
    for rec in &r.records {
        let best = (1..=3)
            .min_by(|&a, &b| rec.bic[a - 1].total_cmp(&rec.bic[b - 1]))
            .unwrap();
        assert_eq!(rec.selected_p, best);
    }
    let (header, rows) = r.table();
    assert_eq!(header.len(), 4 + 3 + 3);
    assert_eq!(rows.len(), 15);
}

#[test]
fn joint_candidates_respect_order_below_period() {
    let c = ExperimentConfig::from_toml(
        "seed = 3\nreplications = 4\nn_obs = 1205\np_max = 4\nt_max = 5\n\n[model]\nphi = [[-0.1208, -0.0878], [-0.5773, -0.9798], [-0.0362, 0.9196], [-0.3254, -0.5802]]\n\n[noise]\nkind = \"gaussian\"\nvariance = 0.2\n",
    )
    .unwrap();
    let r = run_joint_id(&c, &Parallel::new(1)).unwrap();
    assert_eq!(r.summary.candidates.len(), 10);
    assert!(r.summary.candidates.iter().all(|(p, t)| p < t && *t <= 5));
    assert_eq!(
        r.summary,
        JointIdSummary::from_records(2, 4, r.summary.candidates.clone(), &r.records)
    );
    for rec in &r.records {
        assert_eq!(rec.bic.len(), 10);
        assert_eq!(rec.joint_correct, (rec.selected_p, rec.selected_t) == (2, 4));
    }
}

#[test]
fn joint_rejects_misaligned_length() {
    let c = cfg("seed = 3\nreplications = 4\nn_obs = 1200\nt_max = 5");
    let e = run_joint_id(&c, &Parallel::new(1)).unwrap_err();
    assert_eq!(e.exit_code(), 1);
    assert!(e.to_string().contains("use length"), "{e}");
}

#[test]
fn power_summary_matches_records() {
    let c = ExperimentConfig::from_toml(
        "seed = 4\nreplications = 5\nn_obs = 400\nm_boot = 20\n\n[model]\nphi = [[0.4], [-0.6]]\n\n[noise]\nkind = \"gaussian\"\nvariance = 1.0\n\n[power]\nvariances = [0.5, 1.0, 2.0]\n",
    )
    .unwrap();
    let r = run_power(&c, &Parallel::new(1)).unwrap();
    assert_eq!(r.records.len(), 15);
    assert_eq!(
        r.summary,
        PowerSummary::from_records(0.05, 20, r.summary.null.clone(), &[0.5, 1.0, 2.0], &r.records)
    );
    for rec in &r.records {
        // p-values live on the 1/20 lattice
        assert!((rec.p_value * 20.0 - (rec.p_value * 20.0).round()).abs() < 1e-12);
        assert_eq!(rec.rejected, rec.p_value < 0.05);
    }
    // the replication seed is shared across variances
    assert_eq!(r.records[0].seed, r.records[5].seed);
}

#[test]
fn power_needs_enough_bootstrap_replications() {
    let c = ExperimentConfig::from_toml(
        "seed = 4\nn_obs = 400\nm_boot = 10\n\n[model]\nphi = [[0.4], [-0.6]]\n\n[noise]\nkind = \"gaussian\"\nvariance = 1.0\n\n[power]\nvariances = [1.0]\n",
    )
    .unwrap();
    let e = run_power(&c, &Parallel::new(1)).unwrap_err();
    assert!(e.to_string().contains("m_boot"), "{e}");
}

#[test]
fn single_fit_on_simulated_series() {
    let c = cfg("seed = 5\nn_obs = 1200\np_max = 3\nm_boot = 40\n\n[grid]\nstep = 0.5");
    let r = run_single_fit(&c, &Parallel::new(1)).unwrap();
    assert_eq!(r.kind, ExperimentKind::SingleFit);
    assert_eq!(r.bic_table.as_ref().unwrap().selected.0, 1);
    let gof = r.gof.as_ref().unwrap();
    assert!(gof.p_value > 0.05, "p = {}", gof.p_value);
    assert!(r.stage_errors.is_empty(), "{:?}", r.stage_errors);
    assert!(r.independence.is_some());
}

fn data_config(dir: &std::path::Path, values: &[f64], period: usize) -> ExperimentConfig {
    let path = dir.join("y.csv");
    parid::io::write_series(&path, values, period).unwrap();
    ExperimentConfig::from_toml(&format!(
        "seed = 6\norder = 1\nm_boot = 20\n\n[data]\npath = {:?}\n",
        path
    ))
    .unwrap()
}

#[test]
fn single_fit_on_constant_series() {
    let dir = tempfile::tempdir().unwrap();
    let c = data_config(dir.path(), &vec![5.0; 400], 4);
    let r = run_single_fit(&c, &Parallel::new(1)).unwrap();
    assert!(r.estimation.degenerate_bound());
    assert_eq!(r.estimation.sigma_z2_hat, 0.0);
    // the default lattice is too large in four dimensions
    assert!(r.gof.is_none());
    assert!(
        r.stage_errors
            .iter()
            .any(|e| e.starts_with("validation: ") && e.contains("grid.step")),
        "{:?}",
        r.stage_errors
    );
}

#[test]
fn single_fit_reports_trailing_samples() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parid_core::ParSpec::new(vec![vec![0.4], vec![-0.6], vec![0.2]], 1.0).unwrap();
    let noise = parid_core::NoiseSpec::gaussian(0.5).unwrap();
    let y = parid_core::model::simulate(&spec, &noise, 601, Default::default(), 7).unwrap();
    let c = data_config(dir.path(), &y.values, 3);
    let r = run_single_fit(&c, &Parallel::new(1)).unwrap();
    assert_eq!(r.period, 3);
    assert!(
        r.warnings
            .iter()
            .any(|w| matches!(w, Warning::TrailingSamplesDropped { .. })),
        "{:?}",
        r.warnings
    );
}
