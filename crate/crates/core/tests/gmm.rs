mod common;

use common::*;
use flexem::init::{kmeans_init_gaussian, mean_fill, InitPlan};
use flexem::gmm::{gaussian_loglik, gmm_e_step_missing, gmm_fit_impute};
use flexem::synth::{generate_dataset, inject_missing, MissingnessSpec, SyntheticSpec};
use flexem::{FitConfig, GaussianMixtureModel, IndexPartition, MaskedDataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_gaussian_model(r: &mut ChaCha8Rng, k: usize, m: usize) -> GaussianMixtureModel {
    let e = random_model(r, k, m);
    GaussianMixtureModel::new(e.weights, e.means, e.scatters).unwrap()
}

#[test]
fn textbook_gaussian_conditional() {
    let model = GaussianMixtureModel::new(
        vec![1.0],
        vec![DVector::zeros(2)],
        vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])],
    )
    .unwrap();
    let part = IndexPartition { observed: vec![0], missing: vec![1] };
    let c = gmm_e_step_missing(&[1.0], &part, &model).unwrap();
    assert_eq!(c.resp, vec![1.0]);
    assert!((c.cond_mean[0][0] - 0.5).abs() < 1e-15);
    assert!((c.cond_cov[0][(0, 0)] - 0.75).abs() < 1e-15);
}

#[test]
fn fully_observed_row_gives_standard_responsibilities() {
    let mut r = rng(1);
    let model = random_gaussian_model(&mut r, 3, 4);
    let x = random_vector(&mut r, 4, 2.0);
    let c = gmm_e_step_missing(x.as_slice(), &IndexPartition::full(4), &model).unwrap();
    let dens: Vec<f64> = (0..3)
        .map(|k| {
            let s = &model.covariances[k];
            let q = naive_mahalanobis(&x, &model.means[k], s);
            model.weights[k] * (-0.5 * q).exp()
                / ((2.0 * std::f64::consts::PI).powi(4) * s.determinant()).sqrt()
        })
        .collect();
    let total: f64 = dens.iter().sum();
    for k in 0..3 {
        assert!((c.resp[k] - dens[k] / total).abs() < 1e-12);
        assert_eq!(c.cond_mean[k].len(), 0);
    }
}

#[test]
fn conditional_moments_match_conditioned_draws() {
    let mut r = rng(2);
    let m = 4;
    let sigma = random_spd(&mut r, m);
    let mu = random_vector(&mut r, m, 1.0);
    let model = GaussianMixtureModel::new(vec![1.0], vec![mu.clone()], vec![sigma.clone()]).unwrap();
    let part = IndexPartition { observed: vec![0, 2], missing: vec![1, 3] };
    let x_obs = [mu[0] + 0.3, mu[2] - 0.7];
    let c = gmm_e_step_missing(&x_obs, &part, &model).unwrap();
    // Conditioned draws: joint draw, then shift by the regression residual
    // (exact conditioning for Gaussians).
    let l = sigma.clone().cholesky().unwrap().l();
    let reg = sub_matrix(&sigma, &part.missing, &part.observed)
        * sub_matrix(&sigma, &part.observed, &part.observed).try_inverse().unwrap();
    let xo = DVector::from_row_slice(&x_obs);
    let n = 1_000_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut r));
        let x = &mu + &l * z;
        let xo_draw = sub_vector(&x, &part.observed);
        let xm_draw = sub_vector(&x, &part.missing);
        draws.push(xm_draw + &reg * (&xo - xo_draw));
    }
    let mean: DVector<f64> = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n as f64;
    let se = c.cond_cov[0].diagonal().map(|v| (v / n as f64).sqrt());
    for a in 0..2 {
        assert!((mean[a] - c.cond_mean[0][a]).abs() < 3.0 * se[a]);
    }
    let z = covariance_z_score(&draws, &c.cond_mean[0], &c.cond_cov[0]);
    assert!(z < 3.0, "z = {z}");
}

#[test]
fn conditional_covariance_ignores_observed_distance() {
    let mut r = rng(3);
    let model = random_gaussian_model(&mut r, 1, 5);
    let part = random_partition(&mut r, 5, 2);
    let mu_o = sub_vector(&model.means[0], &part.observed);
    let dir = random_vector(&mut r, 3, 1.0);
    let base = gmm_e_step_missing((&mu_o + &dir).as_slice(), &part, &model).unwrap();
    for t in [0.1, 5.0, 40.0] {
        let c = gmm_e_step_missing((&mu_o + &dir * t).as_slice(), &part, &model).unwrap();
        assert!((&c.cond_cov[0] - &base.cond_cov[0]).amax() < 1e-14);
    }
}

#[test]
fn complete_single_component_is_closed_form_mle() {
    let mut r = rng(4);
    let data = DMatrix::from_fn(200, 3, |_, _| r.random_range(-2.0..2.0));
    let masked = MaskedDataset::complete(data.clone()).unwrap();
    let init = GaussianMixtureModel::new(vec![1.0], vec![DVector::zeros(3)], vec![DMatrix::identity(3, 3)]).unwrap();
    let cfg = FitConfig { gaussian_reg: 0.0, ..FitConfig::default() };
    let fit = gmm_fit_impute(&masked, &init, &cfg).unwrap();
    let mean = data.row_mean().transpose();
    let mut cov = DMatrix::zeros(3, 3);
    for i in 0..200 {
        let d = data.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= 200.0;
    assert!((&fit.model.means[0] - &mean).amax() < 1e-12);
    assert!((&fit.model.covariances[0] - &cov).amax() < 1e-12);
    assert_eq!(fit.imputed, data);
}

/// Penalized objective with the default prior, and plain observed-data
/// log-likelihood without it, never decrease.
#[test]
fn em_is_monotone_on_missing_data() {
    for run in 0..20u64 {
        let d = generate_dataset(&SyntheticSpec { n: 300, m: 5, seed: run, ..SyntheticSpec::default() }).unwrap();
        let masked = inject_missing(&d.data, &MissingnessSpec::mcar(0.3, run)).unwrap();
        let filled = mean_fill(&masked).unwrap();
        let init = kmeans_init_gaussian(&filled, 3, &InitPlan::with_seed(run)).unwrap();
        for reg in [FitConfig::default().gaussian_reg, 0.0] {
            let cfg = FitConfig { gaussian_reg: reg, ..FitConfig::default() };
            let fit = gmm_fit_impute(&masked, &init, &cfg).unwrap();
            assert_eq!(fit.report.ridge_retries, 0);
            let trace = if reg > 0.0 { &fit.report.objective_trace } else { &fit.report.pseudo_loglik_trace };
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-10 * w[0].abs().max(1.0), "run {run}: {} -> {}", w[0], w[1]);
            }
            let ll = gaussian_loglik(&masked, &fit.model).unwrap();
            assert!((ll - fit.report.final_loglik).abs() < 1e-9 * ll.abs());
        }
    }
}
