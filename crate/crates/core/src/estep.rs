//! Observed-data E-step shared by the elliptical fitter and the Gaussian
//! baseline.
//!
//! Rows are grouped by missingness pattern so that every per-component
//! block factorization (`Σ^{oo}`, regression coefficients, Schur complement)
//! is computed once per pattern. Fully observed rows use the same code path
//! with an empty missing block.

use nalgebra::{DMatrix, DVector};

use crate::data::{extract_blocks, IndexPartition, MaskedDataset, MIN_OBSERVED_WITH_MISSING};
use crate::error::{Error, Result};
use crate::linalg::{factor_with_retry, symmetrized, SpdFactor};
use crate::model::Responsibilities;

/// Which component density the E-step evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Family {
    /// Angular Gaussian: `det(Σ^{oo})^{-1/2} Q^{-d_obs/2}`, Student-t conditionals.
    Angular,
    /// Gaussian: `N(x^o; μ^o, Σ^{oo})`, Gaussian conditionals.
    Gaussian,
}

/// Component quantities restricted to one missingness pattern.
#[derive(Debug, Clone)]
pub(crate) struct ComponentBlocks {
    pub factor: SpdFactor,
    pub mu_o: Vec<f64>,
    pub mu_m: DVector<f64>,
    /// `Σ^{mo}(Σ^{oo})^{-1}`, `d_mis × d_obs`.
    pub regression: DMatrix<f64>,
    /// `Σ^{mm} − Σ^{mo}(Σ^{oo})^{-1}Σ^{om}`.
    pub schur: DMatrix<f64>,
    pub retried: bool,
}

impl ComponentBlocks {
    pub fn new(
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
        part: &IndexPartition,
        ridge: f64,
    ) -> Result<Self> {
        let view = extract_blocks(sigma, part)?;
        let (factor, ridged) = factor_with_retry(&view.oo, ridge)?;
        let mu_o = part.observed.iter().map(|&j| mu[j]).collect();
        let mu_m = DVector::from_iterator(part.d_mis(), part.missing.iter().map(|&j| mu[j]));
        let (regression, schur) = if part.has_missing() {
            let x = factor.solve(&view.om);
            let schur = symmetrized(&(&view.mm - &view.mo * &x));
            (x.transpose(), schur)
        } else {
            (DMatrix::zeros(0, part.d_obs()), DMatrix::zeros(0, 0))
        };
        Ok(Self {
            factor,
            mu_o,
            mu_m,
            regression,
            schur,
            retried: ridged.is_some(),
        })
    }

    pub fn d_obs(&self) -> usize {
        self.mu_o.len()
    }

    /// Observed Mahalanobis distance `Q_o`; `diff` receives `x^o − μ^o`.
    pub fn observed_distance(&self, x_obs: &[f64], diff: &mut [f64], buf: &mut DVector<f64>) -> f64 {
        for (d, (x, m)) in diff.iter_mut().zip(x_obs.iter().zip(&self.mu_o)) {
            *d = x - m;
        }
        self.factor.quad_form(diff, buf)
    }

    /// Log of the unnormalized component density (without the weight).
    pub fn log_density(&self, q: f64, family: Family, floor: f64) -> f64 {
        let d = self.d_obs() as f64;
        match family {
            Family::Angular => -0.5 * self.factor.logdet() - 0.5 * d * q.max(floor).ln(),
            Family::Gaussian => {
                -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.factor.logdet() + q)
            }
        }
    }

    /// `μ^m + Σ^{mo}(Σ^{oo})^{-1}(x^o − μ^o)`.
    pub fn conditional_mean(&self, diff: &[f64]) -> DVector<f64> {
        let mut out = self.mu_m.clone();
        for a in 0..out.len() {
            let mut acc = 0.0;
            for (b, d) in diff.iter().enumerate() {
                acc += self.regression[(a, b)] * d;
            }
            out[a] += acc;
        }
        out
    }

    /// Conditional covariance of the missing block.
    pub fn conditional_cov(&self, q: f64, family: Family, floor: f64) -> Result<DMatrix<f64>> {
        match family {
            Family::Gaussian => Ok(self.schur.clone()),
            Family::Angular => {
                let d = self.d_obs();
                if d < MIN_OBSERVED_WITH_MISSING {
                    return Err(Error::InsufficientObserved { rows: Vec::new() });
                }
                Ok(&self.schur * (q.max(floor) / (d as f64 - 2.0)))
            }
        }
    }
}

/// Normalizes log-weights in place into probabilities; returns log-sum-exp.
pub(crate) fn normalize_log(logs: &mut [f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    for l in logs.iter_mut() {
        *l = (*l - max).exp() / sum;
    }
    max + sum.ln()
}

/// Dataset pre-grouped by missingness pattern.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub n: usize,
    pub m: usize,
    pub patterns: Vec<(IndexPartition, Vec<usize>)>,
    pub obs: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(data: &MaskedDataset) -> Self {
        Self {
            n: data.nrows(),
            m: data.ncols(),
            patterns: data.patterns(),
            obs: (0..data.nrows()).map(|i| data.observed_values(i)).collect(),
        }
    }

    pub fn complete(data: &DMatrix<f64>) -> Self {
        let (n, m) = data.shape();
        Self {
            n,
            m,
            patterns: vec![(IndexPartition::full(m), (0..n).collect())],
            obs: (0..n).map(|i| data.row(i).iter().copied().collect()).collect(),
        }
    }
}

/// Sufficient statistics of one E-step.
#[derive(Debug, Clone)]
pub(crate) struct Suff {
    /// `x̃_ik`, one row-major `N × m` buffer per component.
    pub x_tilde: Vec<Vec<f64>>,
    /// Conditional covariance of the missing block, per component and row.
    pub cond_cov: Vec<Vec<Option<DMatrix<f64>>>>,
    /// Missing indices of each row (empty when fully observed).
    pub missing: Vec<Vec<usize>>,
}

impl Suff {
    /// Statistics of fully observed data: `x̃_ik = x_i`, no conditional terms.
    pub fn complete(data: &DMatrix<f64>, k: usize) -> Self {
        let (n, m) = data.shape();
        let mut flat = Vec::with_capacity(n * m);
        for i in 0..n {
            flat.extend(data.row(i).iter());
        }
        Self {
            x_tilde: vec![flat; k],
            cond_cov: vec![vec![None; n]; k],
            missing: vec![Vec::new(); n],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EStep {
    pub resp: Responsibilities,
    pub loglik: f64,
    pub suff: Suff,
    pub retries: usize,
}

/// Runs the E-step over every row.
pub(crate) fn run(
    prep: &Prepared,
    weights: &[f64],
    means: &[DVector<f64>],
    mats: &[DMatrix<f64>],
    family: Family,
    ridge: f64,
    floor: f64,
) -> Result<EStep> {
    let (n, m, k) = (prep.n, prep.m, weights.len());
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut p = DMatrix::zeros(n, k);
    let mut loglik = 0.0;
    let mut retries = 0;
    let mut x_tilde = vec![vec![0.0; n * m]; k];
    let mut cond_cov = vec![vec![None; n]; k];
    let mut missing = vec![Vec::new(); n];
    let mut logs = vec![0.0; k];

    for (part, rows) in &prep.patterns {
        let blocks = (0..k)
            .map(|c| ComponentBlocks::new(&means[c], &mats[c], part, ridge))
            .collect::<Result<Vec<_>>>()?;
        retries += blocks.iter().filter(|b| b.retried).count();
        let mut diff = vec![0.0; part.d_obs()];
        let mut buf = DVector::zeros(part.d_obs());
        for &i in rows {
            let x_obs = &prep.obs[i];
            for c in 0..k {
                let b = &blocks[c];
                let q = b.observed_distance(x_obs, &mut diff, &mut buf);
                logs[c] = log_w[c] + b.log_density(q, family, floor);
                let row = &mut x_tilde[c][i * m..(i + 1) * m];
                for (a, &j) in part.observed.iter().enumerate() {
                    row[j] = x_obs[a];
                }
                if part.has_missing() {
                    let cm = b.conditional_mean(&diff);
                    for (a, &j) in part.missing.iter().enumerate() {
                        row[j] = cm[a];
                    }
                    let cov = b.conditional_cov(q, family, floor).map_err(|e| match e {
                        Error::InsufficientObserved { .. } => {
                            Error::InsufficientObserved { rows: vec![i] }
                        }
                        other => other,
                    })?;
                    cond_cov[c][i] = Some(cov);
                }
            }
            loglik += normalize_log(&mut logs);
            for c in 0..k {
                p[(i, c)] = logs[c];
            }
            if part.has_missing() {
                missing[i] = part.missing.clone();
            }
        }
    }
    Ok(EStep {
        resp: Responsibilities { p },
        loglik,
        suff: Suff {
            x_tilde,
            cond_cov,
            missing,
        },
        retries,
    })
}

/// Responsibility-weighted mixture of conditional means in the missing cells.
pub(crate) fn final_imputation(data: &MaskedDataset, e: &EStep) -> DMatrix<f64> {
    let (n, m) = (data.nrows(), data.ncols());
    let k = e.resp.n_components();
    let mut out = data.values().clone();
    for i in 0..n {
        for &j in &e.suff.missing[i] {
            let mut acc = 0.0;
            for c in 0..k {
                acc += e.resp.p[(i, c)] * e.suff.x_tilde[c][i * m + j];
            }
            out[(i, j)] = acc;
        }
    }
    out
}
