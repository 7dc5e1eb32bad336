//! Fixed-point M-step for the elliptical mixture.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estep::Suff;
use crate::linalg::{factor_with_retry, normalize_trace, quad_form_dense};
use crate::model::{FitConfig, MixtureModel, Responsibilities};

/// Shared M-step kernel. Rows without missing entries contribute no
/// conditional-covariance term, which makes the complete-data update a
/// special case of the missing-data one.
pub(crate) fn update(
    suff: &Suff,
    resp: &Responsibilities,
    prev: &MixtureModel,
    cfg: &FitConfig,
) -> Result<(MixtureModel, usize)> {
    let n = resp.nrows();
    let k = prev.n_components();
    let totals = resp.totals();
    let mut retries = 0;
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut scatters = Vec::with_capacity(k);

    for c in 0..k {
        let total = totals[c];
        if !(total > n as f64 * f64::EPSILON) {
            return Err(Error::FitDiverged {
                iteration: 0,
                reason: format!("component {c} collapsed (total responsibility {total:e})"),
            });
        }
        weights.push(total / n as f64);
        let (mu, sigma, r) = fixed_point(c, suff, resp, &prev.means[c], &prev.scatters[c], total, cfg)?;
        retries += r;
        means.push(mu);
        scatters.push(sigma);
    }
    Ok((
        MixtureModel {
            weights,
            means,
            scatters,
        },
        retries,
    ))
}

fn fixed_point(
    c: usize,
    suff: &Suff,
    resp: &Responsibilities,
    mu0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    total: f64,
    cfg: &FitConfig,
) -> Result<(DVector<f64>, DMatrix<f64>, usize)> {
    let n = resp.nrows();
    let m = mu0.len();
    let xt = &suff.x_tilde[c];
    let covs = &suff.cond_cov[c];
    let mut mu = mu0.clone();
    let mut sigma = sigma0.clone();
    let mut retries = 0;
    let mut d = vec![0.0; m];
    let mut acc = vec![0.0; m * m];

    for _ in 0..cfg.max_inner_iters {
        let (factor, ridged) = factor_with_retry(&sigma, cfg.ridge)?;
        if let Some(r) = ridged {
            sigma = r;
            retries += 1;
        }
        let prec = factor.inverse();

        let mut weight_sum = 0.0;
        let mut mu_acc = vec![0.0; m];
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let p = resp.p[(i, c)];
            if p == 0.0 {
                continue;
            }
            let x = &xt[i * m..(i + 1) * m];
            for j in 0..m {
                d[j] = x[j] - mu[j];
            }
            let q = quad_form_dense(&prec, &d);
            let w = 1.0 / q.max(cfg.distance_floor);
            let pw = p * w;
            weight_sum += pw;
            for j in 0..m {
                mu_acc[j] += pw * x[j];
            }
            // upper triangle, column-major
            for b in 0..m {
                let s = pw * d[b];
                for a in 0..=b {
                    acc[b * m + a] += s * d[a];
                }
            }
            if let Some(cov) = &covs[i] {
                let mis = &suff.missing[i];
                let mut tr = 0.0;
                for (a, &ja) in mis.iter().enumerate() {
                    for (b, &jb) in mis.iter().enumerate() {
                        tr += prec[(jb, ja)] * cov[(a, b)];
                    }
                }
                if tr > 0.0 {
                    let s = p / tr;
                    for (b, &jb) in mis.iter().enumerate() {
                        for (a, &ja) in mis[..=b].iter().enumerate() {
                            acc[jb * m + ja] += s * cov[(a, b)];
                        }
                    }
                }
            }
        }

        let new_mu = DVector::from_iterator(m, mu_acc.iter().map(|v| v / weight_sum));
        let scale = m as f64 / total;
        let mut new_sigma = DMatrix::from_fn(m, m, |a, b| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            acc[hi * m + lo] * scale
        });
        normalize_trace(&mut new_sigma, m as f64);

        let change = ((&new_mu - &mu).norm() / mu.norm().max(f64::MIN_POSITIVE))
            .max((&new_sigma - &sigma).norm() / sigma.norm().max(f64::MIN_POSITIVE));
        mu = new_mu;
        sigma = new_sigma;
        if change < cfg.inner_tol {
            break;
        }
    }

    let (_, ridged) = factor_with_retry(&sigma, cfg.ridge)?;
    if let Some(mut r) = ridged {
        normalize_trace(&mut r, m as f64);
        sigma = r;
        retries += 1;
    }
    Ok((mu, sigma, retries))
}
