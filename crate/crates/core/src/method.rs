//! Uniform front end over the two fitters: initialization, fit and
//! imputation in one call.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MaskedDataset;
use crate::error::{Error, Result};
use crate::fem;
use crate::gmm;
use crate::init::{kmeans_init, kmeans_init_gaussian, mean_fill, InitPlan};
use crate::model::{FitConfig, FitReport, GaussianMixtureModel, MixtureModel, ModelJson};

/// Imputation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fem,
    Gmm,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Fem => "fem",
            Method::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fem" => Ok(Method::Fem),
            "gmm" => Ok(Method::Gmm),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected fem or gmm)"
            ))),
        }
    }
}

/// Fitted parameters of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Elliptical(MixtureModel),
    Gaussian(GaussianMixtureModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Elliptical(_) => Method::Fem,
            FittedModel::Gaussian(_) => Method::Gmm,
        }
    }

    pub fn n_components(&self) -> usize {
        match self {
            FittedModel::Elliptical(m) => m.n_components(),
            FittedModel::Gaussian(m) => m.n_components(),
        }
    }

    pub fn to_json(&self) -> ModelJson {
        match self {
            FittedModel::Elliptical(m) => m.to_json(),
            FittedModel::Gaussian(m) => m.to_json(),
        }
    }

    /// Parses a model file; the family tag decides the variant.
    pub fn from_json(json: &ModelJson) -> Result<Self> {
        match json.family.as_str() {
            "gaussian" => Ok(FittedModel::Gaussian(GaussianMixtureModel::from_json(json)?)),
            _ => Ok(FittedModel::Elliptical(MixtureModel::from_json(json)?)),
        }
    }
}

/// Result of [`fit_method`].
#[derive(Debug, Clone)]
pub struct MethodFit {
    pub model: FittedModel,
    pub report: FitReport,
    pub imputed: DMatrix<f64>,
    /// Final (pseudo-)log-likelihood used for BIC.
    pub loglik: f64,
}

/// Mean-fill, K-means initialization, fit and impute.
pub fn fit_method(
    method: Method,
    data: &MaskedDataset,
    k: usize,
    cfg: &FitConfig,
    plan: &InitPlan,
) -> Result<MethodFit> {
    cfg.validate()?;
    if method == Method::Fem {
        data.validate_for_fit()?;
    }
    let filled = mean_fill(data)?;
    match method {
        Method::Fem => {
            let init = kmeans_init(&filled, k, plan)?;
            let fit = fem::fit_impute(data, &init, cfg)?;
            Ok(MethodFit {
                loglik: fit.report.final_loglik,
                model: FittedModel::Elliptical(fit.model),
                report: fit.report,
                imputed: fit.imputed,
            })
        }
        Method::Gmm => {
            let init = kmeans_init_gaussian(&filled, k, plan)?;
            let fit = gmm::gmm_fit_impute(data, &init, cfg)?;
            Ok(MethodFit {
                loglik: fit.report.final_loglik,
                model: FittedModel::Gaussian(fit.model),
                report: fit.report,
                imputed: fit.imputed,
            })
        }
    }
}

/// Imputes with previously fitted parameters.
pub fn impute_with(
    model: &FittedModel,
    data: &MaskedDataset,
    cfg: &FitConfig,
) -> Result<DMatrix<f64>> {
    match model {
        FittedModel::Elliptical(m) => Ok(fem::impute_with_model(data, m, cfg)?.1),
        FittedModel::Gaussian(m) => gmm::gmm_impute_with_model(data, m, cfg),
    }
}
