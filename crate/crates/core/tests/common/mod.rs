//! Independent oracles shared by the integration and acceptance tests.
//!
//! Everything here is deliberately written with explicit inverses,
//! determinants and scalar loops so that it shares no code path with the
//! library under test.
#![allow(dead_code, clippy::too_many_arguments)]

use flexem::{IndexPartition, MixtureModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

pub fn random_spd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    a.transpose() * a + DMatrix::identity(m, m) * 0.5
}

pub fn random_vector(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.random_range(-scale..scale))
}

pub fn random_model(rng: &mut ChaCha8Rng, k: usize, m: usize) -> MixtureModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / s).collect();
    let means = (0..k).map(|_| random_vector(rng, m, 2.0)).collect();
    let scatters = (0..k)
        .map(|_| {
            let s = random_spd(rng, m);
            let tr = s.trace();
            s * (m as f64 / tr)
        })
        .collect();
    MixtureModel::new(weights, means, scatters).unwrap()
}

/// Random partition with exactly `d_mis` missing columns.
pub fn random_partition(rng: &mut ChaCha8Rng, m: usize, d_mis: usize) -> IndexPartition {
    let mut cols: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        cols.swap(i, j);
    }
    let mut missing = cols[..d_mis].to_vec();
    let mut observed = cols[d_mis..].to_vec();
    missing.sort_unstable();
    observed.sort_unstable();
    IndexPartition { observed, missing }
}

pub fn sub_matrix(s: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| s[(rows[a], cols[b])])
}

pub fn sub_vector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |a, _| v[idx[a]])
}

/// Triple-loop quadratic form with an explicit inverse.
pub fn naive_mahalanobis(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let inv = sigma.clone().try_inverse().unwrap();
    let d = x.len();
    let mut acc = 0.0;
    for a in 0..d {
        for b in 0..d {
            acc += (x[a] - mu[a]) * inv[(a, b)] * (x[b] - mu[b]);
        }
    }
    acc
}

/// `π_k det(Σ^{oo})^{-1/2} Q^{-d/2}` normalized over `k`, evaluated directly.
pub fn naive_ag_responsibilities(
    x_obs: &DVector<f64>,
    part: &IndexPartition,
    model: &MixtureModel,
) -> Vec<f64> {
    let d = part.observed.len() as f64;
    let raw: Vec<f64> = (0..model.n_components())
        .map(|k| {
            let s = sub_matrix(&model.scatters[k], &part.observed, &part.observed);
            let mu = sub_vector(&model.means[k], &part.observed);
            let q = naive_mahalanobis(x_obs, &mu, &s);
            model.weights[k] * s.determinant().powf(-0.5) * q.powf(-d / 2.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| r / total).collect()
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `∫_{-∞}^{∞} f(t) dt` through `t = c + s·tan θ`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, c: f64, s: f64, tol: f64) -> f64 {
    let h = std::f64::consts::FRAC_PI_2;
    let g = |theta: f64| {
        let ct = theta.cos();
        if ct <= 0.0 {
            return 0.0;
        }
        let t = c + s * theta.tan();
        f(t) * s / (ct * ct)
    };
    adaptive_simpson(&g, -h, h, tol)
}

/// Draws from a multivariate Student-t with `nu` degrees of freedom.
pub fn sample_student(
    rng: &mut ChaCha8Rng,
    nu: f64,
    mean: &DVector<f64>,
    scale: &DMatrix<f64>,
    n: usize,
) -> Vec<DVector<f64>> {
    let l = scale.clone().cholesky().unwrap().l();
    let chi = ChiSquared::new(nu).unwrap();
    let d = mean.len();
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let w: f64 = chi.sample(rng);
            mean + (&l * z) / (w / nu).sqrt()
        })
        .collect()
}

/// Checks every entry of the empirical covariance of `draws` (about the
/// known `mean`) against `target` within `k` Monte-Carlo standard errors.
/// Returns the largest observed z-score.
pub fn covariance_z_score(draws: &[DVector<f64>], mean: &DVector<f64>, target: &DMatrix<f64>) -> f64 {
    let n = draws.len() as f64;
    let d = mean.len();
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in a..d {
            let prods: Vec<f64> = draws
                .iter()
                .map(|x| (x[a] - mean[a]) * (x[b] - mean[b]))
                .collect();
            let m1 = prods.iter().sum::<f64>() / n;
            let var = prods.iter().map(|p| (p - m1).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            worst = worst.max((m1 - target[(a, b)]).abs() / se);
        }
    }
    worst
}

pub fn naive_mape(truth: &[f64], est: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..truth.len() {
        s += ((truth[i] - est[i]) / truth[i]).abs();
    }
    100.0 * s / truth.len() as f64
}

pub fn naive_mae(truth: &[f64], est: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..truth.len() {
        s += (truth[i] - est[i]).abs();
    }
    s / truth.len() as f64
}

pub fn naive_rmse(truth: &[f64], est: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..truth.len() {
        s += (truth[i] - est[i]) * (truth[i] - est[i]);
    }
    (s / truth.len() as f64).sqrt()
}

/// Best agreement between two labelings over all permutations of the
/// predicted labels (small `k` only).
pub fn permuted_agreement(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    fn perms(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in perms(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let kk = k.max(pred.iter().copied().max().unwrap_or(0) + 1);
    perms(kk)
        .iter()
        .map(|perm| {
            truth
                .iter()
                .zip(pred)
                .filter(|(t, p)| perm[**p] == **t)
                .count() as f64
                / truth.len() as f64
        })
        .fold(0.0, f64::max)
}
