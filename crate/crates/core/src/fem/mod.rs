//! Flexible EM for mixtures of elliptical distributions.
//!
//! The per-sample scale nuisance is profiled out analytically, so every
//! component behaves like an angular Gaussian: responsibilities are
//! `∝ π_k det(Σ_k)^{-1/2} Q_ik^{-m/2}` and the M-step is a Tyler-type
//! fixed point with weights `w_ik = 1/Q_ik`. No density generator is
//! needed anywhere in the fit.
//!
//! With missing data the responsibilities use the observed block only, the
//! missing block is conditionally Student-t with `ν = d_obs` degrees of
//! freedom, and the M-step gains a conditional-covariance term.

mod mstep;
mod profile;

use nalgebra::{DMatrix, DVector};

pub use profile::{optimal_tau, profile_argsup};

use crate::data::{IndexPartition, MaskedDataset};
use crate::error::{Error, Result};
use crate::estep::{self, ComponentBlocks, EStep, Family, Prepared, Suff};
use crate::model::{relative_change, FitConfig, FitReport, MixtureModel, Responsibilities};

/// Parameters of the Student-t conditional of the missing block.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentConditional {
    pub nu: usize,
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
}

/// Conditional moments of one row under one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub partition: IndexPartition,
    /// Conditional mean of the missing coordinates.
    pub cond_mean: DVector<f64>,
    /// Conditional covariance of the missing coordinates.
    pub cond_cov: DMatrix<f64>,
    /// Row with observed values in place and conditional means in the
    /// missing slots.
    pub x_tilde: DVector<f64>,
}

impl ConditionalMoments {
    /// `m × m` matrix, zero except for the missing block.
    pub fn sigma_tilde(&self) -> DMatrix<f64> {
        let m = self.x_tilde.len();
        let mis = &self.partition.missing;
        let mut out = DMatrix::zeros(m, m);
        for (a, &ja) in mis.iter().enumerate() {
            for (b, &jb) in mis.iter().enumerate() {
                out[(ja, jb)] = self.cond_cov[(a, b)];
            }
        }
        out
    }
}

/// Result of [`fit_impute`].
#[derive(Debug, Clone)]
pub struct FemFit {
    pub model: MixtureModel,
    pub report: FitReport,
    pub imputed: DMatrix<f64>,
}

fn check_row(row_obs: &[f64], part: &IndexPartition, m: usize) -> Result<()> {
    if part.dim() != m || row_obs.len() != part.d_obs() {
        return Err(Error::DimensionMismatch(format!(
            "row has {} observed values, partition {}+{} columns, model dimension {m}",
            row_obs.len(),
            part.d_obs(),
            part.d_mis()
        )));
    }
    if part.d_obs() == 0 {
        return Err(Error::AllMissing { row: None });
    }
    Ok(())
}

/// Responsibilities of one partially observed row.
pub fn responsibilities_observed(
    row_obs: &[f64],
    part: &IndexPartition,
    model: &MixtureModel,
) -> Result<Vec<f64>> {
    let cfg = FitConfig::default();
    check_row(row_obs, part, model.dim())?;
    let mut logs = Vec::with_capacity(model.n_components());
    let mut diff = vec![0.0; part.d_obs()];
    let mut buf = DVector::zeros(part.d_obs());
    for k in 0..model.n_components() {
        let b = ComponentBlocks::new(&model.means[k], &model.scatters[k], part, cfg.ridge)?;
        let q = b.observed_distance(row_obs, &mut diff, &mut buf);
        logs.push(model.weights[k].ln() + b.log_density(q, Family::Angular, cfg.distance_floor));
    }
    estep::normalize_log(&mut logs);
    Ok(logs)
}

/// Student-t law of the missing block given the observed one.
pub fn conditional_student_params(
    row_obs: &[f64],
    part: &IndexPartition,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<StudentConditional> {
    check_row(row_obs, part, mu.len())?;
    if !part.has_missing() {
        return Err(Error::InvalidArgument(
            "row has no missing coordinate to condition".into(),
        ));
    }
    let b = ComponentBlocks::new(mu, sigma, part, 0.0)?;
    let mut diff = vec![0.0; part.d_obs()];
    let mut buf = DVector::zeros(part.d_obs());
    let q = b.observed_distance(row_obs, &mut diff, &mut buf);
    let d_obs = part.d_obs();
    Ok(StudentConditional {
        nu: d_obs,
        mean: b.conditional_mean(&diff),
        scale: &b.schur * (q / d_obs as f64),
    })
}

/// Conditional mean and covariance of the missing block under component `k`.
pub fn conditional_moments(
    row_obs: &[f64],
    part: &IndexPartition,
    k: usize,
    model: &MixtureModel,
) -> Result<ConditionalMoments> {
    let m = model.dim();
    check_row(row_obs, part, m)?;
    if k >= model.n_components() {
        return Err(Error::InvalidArgument(format!("no component {k}")));
    }
    let mut x_tilde = DVector::zeros(m);
    for (a, &j) in part.observed.iter().enumerate() {
        x_tilde[j] = row_obs[a];
    }
    if !part.has_missing() {
        return Ok(ConditionalMoments {
            partition: part.clone(),
            cond_mean: DVector::zeros(0),
            cond_cov: DMatrix::zeros(0, 0),
            x_tilde,
        });
    }
    let cfg = FitConfig::default();
    let b = ComponentBlocks::new(&model.means[k], &model.scatters[k], part, cfg.ridge)?;
    let mut diff = vec![0.0; part.d_obs()];
    let mut buf = DVector::zeros(part.d_obs());
    let q = b.observed_distance(row_obs, &mut diff, &mut buf);
    let cond_mean = b.conditional_mean(&diff);
    let cond_cov = b.conditional_cov(q, Family::Angular, cfg.distance_floor)?;
    for (a, &j) in part.missing.iter().enumerate() {
        x_tilde[j] = cond_mean[a];
    }
    Ok(ConditionalMoments {
        partition: part.clone(),
        cond_mean,
        cond_cov,
        x_tilde,
    })
}

fn e_step(prep: &Prepared, model: &MixtureModel, cfg: &FitConfig) -> Result<EStep> {
    estep::run(
        prep,
        &model.weights,
        &model.means,
        &model.scatters,
        Family::Angular,
        cfg.ridge,
        cfg.distance_floor,
    )
}

fn check_data_dim(m: usize, model: &MixtureModel) -> Result<()> {
    if m != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {m} columns, model dimension {}",
            model.dim()
        )));
    }
    Ok(())
}

/// Responsibilities of fully observed rows.
pub fn e_step_complete(data: &DMatrix<f64>, model: &MixtureModel) -> Result<Responsibilities> {
    check_data_dim(data.ncols(), model)?;
    let cfg = FitConfig::default();
    Ok(e_step(&Prepared::complete(data), model, &cfg)?.resp)
}

/// One fixed-point M-step on fully observed rows.
pub fn m_step_complete(
    data: &DMatrix<f64>,
    resp: &Responsibilities,
    model_prev: &MixtureModel,
    cfg: &FitConfig,
) -> Result<MixtureModel> {
    check_data_dim(data.ncols(), model_prev)?;
    let suff = Suff::complete(data, model_prev.n_components());
    Ok(mstep::update(&suff, resp, model_prev, cfg)?.0)
}

/// Missing-data E-step: responsibilities and per-(row, component)
/// sufficient statistics.
pub fn e_step_missing(
    data: &MaskedDataset,
    model: &MixtureModel,
    cfg: &FitConfig,
) -> Result<(Responsibilities, Vec<Vec<ConditionalMoments>>)> {
    check_data_dim(data.ncols(), model)?;
    data.validate_for_fit()?;
    let e = e_step(&Prepared::new(data), model, cfg)?;
    let m = data.ncols();
    let k = model.n_components();
    let cond = (0..data.nrows())
        .map(|i| {
            let part = data.partition(i);
            (0..k)
                .map(|c| {
                    let x = &e.suff.x_tilde[c][i * m..(i + 1) * m];
                    ConditionalMoments {
                        cond_mean: DVector::from_iterator(
                            part.d_mis(),
                            part.missing.iter().map(|&j| x[j]),
                        ),
                        cond_cov: e.suff.cond_cov[c][i]
                            .clone()
                            .unwrap_or_else(|| DMatrix::zeros(0, 0)),
                        x_tilde: DVector::from_row_slice(x),
                        partition: part.clone(),
                    }
                })
                .collect()
        })
        .collect();
    Ok((e.resp, cond))
}

/// Missing-data M-step from precomputed conditional moments
/// (`cond[i][k]`).
pub fn m_step_missing(
    data: &MaskedDataset,
    resp: &Responsibilities,
    cond: &[Vec<ConditionalMoments>],
    model_prev: &MixtureModel,
    cfg: &FitConfig,
) -> Result<MixtureModel> {
    check_data_dim(data.ncols(), model_prev)?;
    let (n, m, k) = (data.nrows(), data.ncols(), model_prev.n_components());
    if cond.len() != n || cond.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch(
            "conditional moments must be indexed [row][component]".into(),
        ));
    }
    let mut suff = Suff {
        x_tilde: vec![vec![0.0; n * m]; k],
        cond_cov: vec![vec![None; n]; k],
        missing: vec![Vec::new(); n],
    };
    for (i, row) in cond.iter().enumerate() {
        for (c, cm) in row.iter().enumerate() {
            suff.x_tilde[c][i * m..(i + 1) * m].copy_from_slice(cm.x_tilde.as_slice());
            if cm.partition.has_missing() {
                suff.cond_cov[c][i] = Some(cm.cond_cov.clone());
            }
        }
        suff.missing[i] = row[0].partition.missing.clone();
    }
    Ok(mstep::update(&suff, resp, model_prev, cfg)?.0)
}

/// One outer iteration on complete data (E-step then M-step).
pub fn step_complete(
    data: &DMatrix<f64>,
    model: &MixtureModel,
    cfg: &FitConfig,
) -> Result<MixtureModel> {
    check_data_dim(data.ncols(), model)?;
    let e = e_step(&Prepared::complete(data), model, cfg)?;
    let suff = Suff::complete(data, model.n_components());
    Ok(mstep::update(&suff, &e.resp, model, cfg)?.0)
}

/// One outer iteration on masked data (E-step then M-step).
pub fn step_missing(
    data: &MaskedDataset,
    model: &MixtureModel,
    cfg: &FitConfig,
) -> Result<MixtureModel> {
    check_data_dim(data.ncols(), model)?;
    data.validate_for_fit()?;
    let e = e_step(&Prepared::new(data), model, cfg)?;
    Ok(mstep::update(&e.suff, &e.resp, model, cfg)?.0)
}

fn diverged(iteration: usize, e: Error) -> Error {
    match e {
        Error::FitDiverged { reason, .. } => Error::FitDiverged { iteration, reason },
        other => Error::FitDiverged {
            iteration,
            reason: other.to_string(),
        },
    }
}

fn check_fit_inputs(n: usize, m: usize, init: &MixtureModel, cfg: &FitConfig) -> Result<()> {
    cfg.validate()?;
    init.validate()?;
    check_data_dim(m, init)?;
    if n <= init.n_components() {
        return Err(Error::InvalidArgument(format!(
            "need more rows ({n}) than components ({})",
            init.n_components()
        )));
    }
    Ok(())
}

struct Outer {
    model: MixtureModel,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
    retries: usize,
}

/// Outer EM loop. `fixed` supplies the sufficient statistics of complete
/// data; otherwise those of each E-step are used.
fn outer_loop<E>(
    init: &MixtureModel,
    cfg: &FitConfig,
    mut e_step: E,
    fixed: Option<&Suff>,
) -> Result<Outer>
where
    E: FnMut(&MixtureModel) -> Result<EStep>,
{
    let mut model = init.clone();
    let mut trace = Vec::new();
    let mut retries = 0;
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_outer_iters {
        let e = e_step(&model).map_err(|err| diverged(t, err))?;
        trace.push(e.loglik);
        retries += e.retries;
        let (next, r) =
            mstep::update(fixed.unwrap_or(&e.suff), &e.resp, &model, cfg).map_err(|err| diverged(t, err))?;
        retries += r;
        let change = relative_change(
            &model.weights,
            &next.weights,
            &model.means,
            &next.means,
            &model.scatters,
            &next.scatters,
        );
        model = next;
        iterations = t;
        if change < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    Ok(Outer {
        model,
        iterations,
        converged,
        trace,
        retries,
    })
}

/// Fits the mixture to fully observed data.
pub fn fit_complete(
    data: &DMatrix<f64>,
    init: &MixtureModel,
    cfg: &FitConfig,
) -> Result<(MixtureModel, FitReport)> {
    check_fit_inputs(data.nrows(), data.ncols(), init, cfg)?;
    let prep = Prepared::complete(data);
    let suff = Suff::complete(data, init.n_components());
    let out = outer_loop(init, cfg, |m| e_step(&prep, m, cfg), Some(&suff))?;
    let last = e_step(&prep, &out.model, cfg).map_err(|e| diverged(out.iterations, e))?;
    let report = FitReport {
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace.clone(),
        pseudo_loglik_trace: out.trace,
        final_loglik: last.loglik,
        labels: last.resp.labels(),
        responsibilities: last.resp,
        ridge_retries: out.retries + last.retries,
    };
    Ok((out.model, report))
}

/// Fits the mixture to masked data and imputes every missing cell with the
/// responsibility-weighted conditional mean.
pub fn fit_impute(data: &MaskedDataset, init: &MixtureModel, cfg: &FitConfig) -> Result<FemFit> {
    check_fit_inputs(data.nrows(), data.ncols(), init, cfg)?;
    data.validate_for_fit()?;
    let prep = Prepared::new(data);
    let out = outer_loop(init, cfg, |m| e_step(&prep, m, cfg), None)?;
    let last = e_step(&prep, &out.model, cfg).map_err(|e| diverged(out.iterations, e))?;
    let imputed = estep::final_imputation(data, &last);
    let report = FitReport {
        iterations: out.iterations,
        converged: out.converged,
        objective_trace: out.trace.clone(),
        pseudo_loglik_trace: out.trace,
        final_loglik: last.loglik,
        labels: last.resp.labels(),
        responsibilities: last.resp,
        ridge_retries: out.retries + last.retries,
    };
    Ok(FemFit {
        model: out.model,
        report,
        imputed,
    })
}

/// Imputes with fixed parameters (one E-step, no fitting).
pub fn impute_with_model(
    data: &MaskedDataset,
    model: &MixtureModel,
    cfg: &FitConfig,
) -> Result<(Responsibilities, DMatrix<f64>)> {
    check_data_dim(data.ncols(), model)?;
    data.validate_for_fit()?;
    let e = e_step(&Prepared::new(data), model, cfg)?;
    let imputed = estep::final_imputation(data, &e);
    Ok((e.resp, imputed))
}

/// Unnormalized angular-Gaussian observed log-likelihood.
pub fn pseudo_loglik(data: &MaskedDataset, model: &MixtureModel, cfg: &FitConfig) -> Result<f64> {
    check_data_dim(data.ncols(), model)?;
    Ok(e_step(&Prepared::new(data), model, cfg)?.loglik)
}

