//! Fitted parameter sets, responsibilities, fit configuration and reports.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Mixture of elliptical components: weights, means and trace-normalized
/// scatter matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub scatters: Vec<DMatrix<f64>>,
}

/// Mixture of Gaussians with unconstrained covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
}

fn validate_parts(weights: &[f64], means: &[DVector<f64>], mats: &[DMatrix<f64>]) -> Result<()> {
    let k = weights.len();
    if k == 0 || means.len() != k || mats.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "{} weights, {} means, {} matrices",
            k,
            means.len(),
            mats.len()
        )));
    }
    let m = means[0].len();
    if means.iter().any(|mu| mu.len() != m) || mats.iter().any(|s| s.shape() != (m, m)) {
        return Err(Error::DimensionMismatch(
            "components disagree on the dimension".into(),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("weights sum to {total}")));
    }
    for s in mats {
        SpdFactor::new(s)?;
    }
    Ok(())
}

impl MixtureModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        scatters: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        validate_parts(&weights, &means, &scatters)?;
        Ok(Self {
            weights,
            means,
            scatters,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_parts(&self.weights, &self.means, &self.scatters)
    }

    /// Same model with every scatter multiplied by `c`.
    pub fn with_scaled_scatters(&self, c: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self.means.clone(),
            scatters: self.scatters.iter().map(|s| s * c).collect(),
        }
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson::from_parts("elliptical", &self.weights, &self.means, &self.scatters)
    }

    pub fn from_json(json: &ModelJson) -> Result<Self> {
        let (w, mu, s) = json.to_parts()?;
        Self::new(w, mu, s)
    }
}

impl GaussianMixtureModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        validate_parts(&weights, &means, &covariances)?;
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        validate_parts(&self.weights, &self.means, &self.covariances)
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson::from_parts("gaussian", &self.weights, &self.means, &self.covariances)
    }

    pub fn from_json(json: &ModelJson) -> Result<Self> {
        let (w, mu, s) = json.to_parts()?;
        Self::new(w, mu, s)
    }
}

impl From<GaussianMixtureModel> for MixtureModel {
    /// Scatters are the covariances rescaled to trace `m`.
    fn from(g: GaussianMixtureModel) -> Self {
        let m = g.dim() as f64;
        let scatters = g
            .covariances
            .into_iter()
            .map(|mut c| {
                crate::linalg::normalize_trace(&mut c, m);
                c
            })
            .collect();
        MixtureModel {
            weights: g.weights,
            means: g.means,
            scatters,
        }
    }
}

/// On-disk model format. `matrices` are row-major (`matrices[k][row][col]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub family: String,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl ModelJson {
    fn from_parts(
        family: &str,
        weights: &[f64],
        means: &[DVector<f64>],
        mats: &[DMatrix<f64>],
    ) -> Self {
        Self {
            family: family.to_string(),
            dim: means.first().map_or(0, |m| m.len()),
            weights: weights.to_vec(),
            means: means.iter().map(|m| m.iter().copied().collect()).collect(),
            matrices: mats
                .iter()
                .map(|s| {
                    (0..s.nrows())
                        .map(|r| s.row(r).iter().copied().collect())
                        .collect()
                })
                .collect(),
        }
    }

    #[allow(clippy::type_complexity)]
    fn to_parts(&self) -> Result<(Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>)> {
        let m = self.dim;
        let means = self
            .means
            .iter()
            .map(|v| {
                if v.len() == m {
                    Ok(DVector::from_vec(v.clone()))
                } else {
                    Err(Error::DimensionMismatch(format!(
                        "mean of length {} in a {m}-dimensional model",
                        v.len()
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mats = self
            .matrices
            .iter()
            .map(|rows| {
                if rows.len() != m || rows.iter().any(|r| r.len() != m) {
                    return Err(Error::DimensionMismatch(format!(
                        "matrix is not {m}x{m}"
                    )));
                }
                Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((self.weights.clone(), means, mats))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `N × K` posterior membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub p: DMatrix<f64>,
}

impl Responsibilities {
    pub fn nrows(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.p.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.p.row(i).iter().copied().collect()
    }

    /// Column sums `Σ_i p_ik`.
    pub fn totals(&self) -> Vec<f64> {
        (0..self.p.ncols()).map(|k| self.p.column(k).sum()).collect()
    }

    /// Argmax per row, ties toward the smallest index.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.p.nrows()).map(|i| argmax(&self.row(i))).collect()
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Stopping rules and numerical safeguards shared by both fitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative parameter change below which the outer loop stops.
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    /// Relative change threshold of the inner fixed-point loop.
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    /// Diagonal jitter for the elliptical fitter's factorization retry
    /// (0 means `1e-8 · trace/m`).
    pub ridge: f64,
    /// Floor on Mahalanobis distances used in weights and responsibilities.
    pub distance_floor: f64,
    /// Relative covariance regularization of the Gaussian baseline.
    pub gaussian_reg: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-5,
            max_outer_iters: 200,
            inner_tol: 1e-6,
            max_inner_iters: 20,
            ridge: 0.0,
            distance_floor: 1e-12,
            gaussian_reg: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outer_tol > 0.0
            && self.inner_tol > 0.0
            && self.max_outer_iters >= 1
            && self.max_inner_iters >= 1
            && self.ridge >= 0.0
            && self.distance_floor > 0.0
            && self.gaussian_reg >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid fit config {self:?}")))
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood of the parameters entering each
    /// iteration (unnormalized angular-Gaussian pseudo-likelihood for the
    /// elliptical fitter, Gaussian log-likelihood for the baseline).
    pub pseudo_loglik_trace: Vec<f64>,
    /// Quantity the iteration ascends; differs from the log-likelihood only
    /// by the covariance penalty of the regularized Gaussian baseline.
    pub objective_trace: Vec<f64>,
    /// Log-likelihood of the returned parameters.
    pub final_loglik: f64,
    pub labels: Vec<usize>,
    pub responsibilities: Responsibilities,
    /// Number of factorizations that needed the jitter retry.
    pub ridge_retries: usize,
}

/// Maximum relative change between two parameter sets.
pub(crate) fn relative_change(
    w_old: &[f64],
    w_new: &[f64],
    mu_old: &[DVector<f64>],
    mu_new: &[DVector<f64>],
    s_old: &[DMatrix<f64>],
    s_new: &[DMatrix<f64>],
) -> f64 {
    let rel = |num: f64, den: f64| num / den.max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for k in 0..w_old.len() {
        worst = worst.max(rel((w_new[k] - w_old[k]).abs(), w_old[k].abs()));
        worst = worst.max(rel((&mu_new[k] - &mu_old[k]).norm(), mu_old[k].norm()));
        worst = worst.max(rel((&s_new[k] - &s_old[k]).norm(), s_old[k].norm()));
    }
    worst
}
