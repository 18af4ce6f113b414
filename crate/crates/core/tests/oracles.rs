//! Library results against independent reference computations.
//!
//! The references expand each residual block component over the noise
//! samples it touches, `R_k = xi_k + Z_k - sum_j phi_j(k) Z_{k-j}`, and work
//! from that expansion instead of the library's closed forms.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use parid_core::charfn::{
    gaussian_block_pdf, invert_cf_to_pdf, invert_model_cf, mixture_block_pdf, theoretical_cf, GridSpec,
};
use parid_core::estimation::{empirical_pacvf, estimate_eiv, EstimatorOptions};
use parid_core::model::{simulate, NoiseSpec, ParSpec, SimOptions};
use parid_core::residuals::{compute_residuals, residual_cov_direct, residual_cov_matrixform, ResidualBlocks};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `loadings[k][s]`: coefficient of a noise sample in block component `k`,
/// so that `s = 0` is `Z_{1-p}` and `s = p + T - 1` is `Z_T`.
fn loadings(spec: &ParSpec) -> Vec<Vec<f64>> {
    let (t, p) = (spec.period(), spec.order());
    (1..=t)
        .map(|k| {
            let mut a = vec![0.0; p + t];
            a[k + p - 1] = 1.0;
            for j in 1..=p {
                a[k + p - 1 - j] -= spec.row(k)[j - 1];
            }
            a
        })
        .collect()
}

fn cov_oracle(spec: &ParSpec, sigma_z2: f64) -> DMatrix<f64> {
    let a = loadings(spec);
    let t = spec.period();
    DMatrix::from_fn(t, t, |k, l| {
        let noise: f64 = a[k].iter().zip(&a[l]).map(|(x, y)| x * y).sum();
        sigma_z2 * noise + if k == l { spec.sigma_xi2() } else { 0.0 }
    })
}

fn cf_oracle(spec: &ParSpec, noise: &NoiseSpec, t: &[f64]) -> f64 {
    let a = loadings(spec);
    let innov = (-0.5 * spec.sigma_xi2() * t.iter().map(|x| x * x).sum::<f64>()).exp();
    (0..a[0].len()).fold(innov, |acc, s| {
        let u: f64 = (0..t.len()).map(|k| t[k] * a[k][s]).sum();
        acc * noise
            .components()
            .iter()
            .map(|(w, v)| w * (-0.5 * v * u * u).exp())
            .sum::<f64>()
    })
}

fn random_spec(rng: &mut ChaCha8Rng, t: usize, p: usize) -> ParSpec {
    let phi = (0..t)
        .map(|_| (0..p).map(|_| rng.random_range(-0.9..0.9)).collect())
        .collect();
    ParSpec::new(phi, rng.random_range(0.1..3.0)).unwrap()
}

fn paper_phi(p: usize) -> Vec<Vec<f64>> {
    let cols = [
        [-0.1208, -0.5773, -0.0362, -0.3254],
        [-0.0878, -0.9798, 0.9196, -0.5802],
        [0.6605, -0.6826, 0.6555, -0.5313],
    ];
    (0..4).map(|v| (0..p).map(|j| cols[j][v]).collect()).collect()
}

#[test]
fn block_covariance_matches_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let t = rng.random_range(2..=5);
        let p = rng.random_range(1..t);
        let spec = random_spec(&mut rng, t, p);
        let s2 = rng.random_range(0.0..3.0);
        let direct = residual_cov_direct(&spec, s2);
        let matrix = residual_cov_matrixform(&spec, s2);
        let oracle = cov_oracle(&spec, s2);
        for k in 0..t {
            for l in 0..t {
                assert!((direct.get(k, l) - oracle[(k, l)]).abs() < 1e-12);
                assert!((matrix.get(k, l) - oracle[(k, l)]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn covariance_has_band_structure() {
    let spec = ParSpec::new(paper_phi(1), 1.0).unwrap();
    let c = residual_cov_direct(&spec, 1.0);
    // p = 1: components two or more apart share no noise sample
    assert_eq!(c.get(0, 2), 0.0);
    assert_eq!(c.get(1, 3), 0.0);
    assert!((c.get(0, 1) - 0.5773).abs() < 1e-15);
    assert!((c.get(0, 0) - (2.0 + 0.1208 * 0.1208)).abs() < 1e-15);
}

#[test]
fn model_cf_matches_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mix = NoiseSpec::mixture(vec![0.2, 0.5, 0.3], vec![0.1, 1.0, 4.0]).unwrap();
    for _ in 0..50 {
        let t = rng.random_range(2..=4);
        let p = rng.random_range(1..t);
        let spec = random_spec(&mut rng, t, p);
        let arg: Vec<f64> = (0..t).map(|_| rng.random_range(-2.0..2.0)).collect();
        for noise in [NoiseSpec::gaussian(0.7).unwrap(), mix.clone()] {
            let got = theoretical_cf(&spec, &noise, &arg).unwrap();
            assert_eq!(got.im, 0.0);
            assert!((got.re - cf_oracle(&spec, &noise, &arg)).abs() < 1e-13);
        }
    }
}

#[test]
fn gaussian_pdf_matches_explicit_formula() {
    let spec = ParSpec::new(vec![vec![0.4], vec![-0.6]], 1.0).unwrap();
    let cov = residual_cov_direct(&spec, 1.0);
    let (a, b, c) = (cov.get(0, 0), cov.get(0, 1), cov.get(1, 1));
    let det = a * c - b * b;
    for r in [[0.0, 0.0], [1.0, -0.5], [-2.0, 3.0]] {
        let q = (c * r[0] * r[0] - 2.0 * b * r[0] * r[1] + a * r[1] * r[1]) / det;
        let want = (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
        assert!((gaussian_block_pdf(&cov, &r).unwrap() - want).abs() < 1e-15);
    }
}

#[test]
fn mixture_pdf_matches_component_enumeration() {
    let spec = ParSpec::new(vec![vec![0.4], vec![-0.6]], 1.0).unwrap();
    let noise = NoiseSpec::mixture(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap();
    let a = loadings(&spec);
    let comps = noise.components();
    let r = [0.3, -1.1];
    let mut want = 0.0;
    for code in 0..8usize {
        let pick: Vec<(f64, f64)> = (0..3).map(|s| comps[(code >> s) & 1]).collect();
        let weight: f64 = pick.iter().map(|c| c.0).product();
        let cov = DMatrix::from_fn(2, 2, |k, l| {
            let z: f64 = (0..3).map(|s| a[k][s] * a[l][s] * pick[s].1).sum();
            z + if k == l { 1.0 } else { 0.0 }
        });
        let det = cov.determinant();
        let inv = cov.try_inverse().unwrap();
        let q = r[0] * r[0] * inv[(0, 0)] + 2.0 * r[0] * r[1] * inv[(0, 1)] + r[1] * r[1] * inv[(1, 1)];
        want += weight * (-0.5 * q).exp() / (2.0 * PI * det.sqrt());
    }
    assert!((mixture_block_pdf(&spec, &noise, &r).unwrap() - want).abs() < 1e-15);
}

#[test]
fn inversion_recovers_closed_form_densities() {
    let gauss = NoiseSpec::gaussian(1.0).unwrap();
    let mix = NoiseSpec::mixture(vec![0.5, 0.5], vec![0.5, 1.5]).unwrap();
    let specs = [
        ParSpec::new(vec![vec![0.4], vec![-0.6]], 1.0).unwrap(),
        ParSpec::new(vec![vec![0.3, -0.2], vec![0.5, 0.1], vec![-0.4, 0.2]], 0.5).unwrap(),
    ];
    for spec in &specs {
        for noise in [&gauss, &mix] {
            let nodes = if spec.period() == 2 { 64 } else { 32 };
            let grid = invert_model_cf(spec, noise, nodes).unwrap();
            assert!((0.98..=1.02).contains(&grid.mass()), "mass {}", grid.mass());
            let mut worst = 0.0f64;
            for i in 0..grid.len() {
                let x = grid.node_coords(&grid.node_index(i));
                worst = worst.max((grid.values()[i] - mixture_block_pdf(spec, noise, &x).unwrap()).abs());
            }
            assert!(worst <= 1e-3, "T = {}: max error {worst}", spec.period());
        }
    }
}

#[test]
fn inversion_of_a_known_product_density() {
    // independent standard normal and Laplace(1/sqrt 2) coordinates
    let cf = |t: &[f64]| Complex64::new((-0.5 * t[0] * t[0]).exp() / (1.0 + 0.5 * t[1] * t[1]), 0.0);
    let grid = invert_cf_to_pdf(
        cf,
        2,
        &GridSpec {
            nodes: 128,
            bounds: vec![(-8.0, 8.0), (-12.0, 12.0)],
        },
    )
    .unwrap();
    let b = 0.5f64.sqrt();
    for x in [[0.0f64, 0.5], [1.0, -2.0], [-0.5, 3.0]] {
        let want = (-0.5 * x[0] * x[0]).exp() / (2.0 * PI).sqrt() * (-x[1].abs() / b).exp() / (2.0 * b);
        assert!((grid.pdf_eval(&x) - want).abs() < 5e-3, "{x:?}");
    }
}

fn pacvf_oracle(y: &[f64], period: usize, w: i64, k: i64) -> f64 {
    // sum over all t = w + nT (1-based) with both t and t - k inside the sample
    let n = y.len() as i64;
    let mut sum = 0.0;
    for t in 1..=n {
        if (t - w).rem_euclid(period as i64) == 0 && t - k >= 1 && t - k <= n {
            sum += y[(t - 1) as usize] * y[(t - k - 1) as usize];
        }
    }
    sum / (y.len() as f64 / period as f64)
}

#[test]
fn autocovariance_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let y: Vec<f64> = (0..103).map(|_| rng.random_range(-1.0..1.0)).collect();
    for w in -3..=8 {
        for k in -4..=4 {
            let got = empirical_pacvf(&y, 4, w, k);
            assert!((got - pacvf_oracle(&y, 4, w, k)).abs() < 1e-12, "w {w} k {k}");
        }
    }
}

#[test]
fn estimator_is_consistent_on_long_series() {
    let spec = ParSpec::new(paper_phi(2), 1.0).unwrap();
    let noise = NoiseSpec::gaussian(0.5).unwrap();
    let y = simulate(&spec, &noise, 400_000, SimOptions::default(), 21).unwrap();
    let est = estimate_eiv(&y.values, 4, 2, &EstimatorOptions::default()).unwrap();
    for v in 0..4 {
        for j in 0..2 {
            assert!(
                (est.phi_hat[v][j] - spec.row(v + 1)[j]).abs() < 0.05,
                "{:?}",
                est.phi_hat
            );
        }
    }
    assert!((est.sigma_z2_hat - 0.5).abs() < 0.1, "{}", est.sigma_z2_hat);
    assert!((est.sigma_xi2_hat - 1.0).abs() < 0.15, "{}", est.sigma_xi2_hat);
}

#[test]
fn residuals_of_the_true_model_have_the_model_covariance() {
    // moderate sample; the full-size check lives with the acceptance suite
    let spec = ParSpec::new(paper_phi(1), 1.0).unwrap();
    let noise = NoiseSpec::gaussian(1.0).unwrap();
    let y = simulate(&spec, &noise, 4 * 20_001, SimOptions::default(), 22).unwrap();
    let blocks = ResidualBlocks::from_residuals(&compute_residuals(&y.values, &spec).unwrap(), 4).unwrap();
    let sample = parid_core::residuals::sample_block_cov(&blocks).unwrap();
    let model = residual_cov_direct(&spec, 1.0);
    for k in 0..4 {
        for l in 0..4 {
            let scale = (model.get(k, k) * model.get(l, l)).sqrt();
            assert!((sample.get(k, l) - model.get(k, l)).abs() / scale < 0.05);
        }
    }
}
