//! Transition models for counts: the probability of moving past category
//! `r`, given the count reached `r`, is a binary regression
//! `F(theta_r + x^T beta)` fitted on the augmented data with a smoothness
//! penalty on the category intercepts.

mod design;
mod fit;
mod predict;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use design::{default_max_category, default_num_basis, Layout, Scope, SparseRows, Term, TermKind};
pub use fit::{
    fit, fit_varying, fit_zero_split, gradient, loglik_binary, loglik_direct, penalized_information,
    FittedTransitionModel, TransitionProblem,
};
pub use predict::{continuation_ratio_effect, predict_pmf, EffectCurve};

use crate::error::{Error, Result};
use crate::link::Link;

/// How the category intercepts are smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Smoother {
    /// Free intercepts with a first-order difference penalty.
    ThetaQuadratic,
    /// B-spline expansion with a difference penalty on the coefficients.
    PSplines {
        /// defaults to `min(20, M + 1)`
        num_basis: Option<usize>,
        degree: usize,
        order: usize,
    },
}

impl Smoother {
    /// Cubic B-splines, first-order penalty, default basis size.
    pub fn psplines() -> Self {
        Smoother::PSplines {
            num_basis: None,
            degree: 3,
            order: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VaryingSet {
    All,
    Only(Vec<String>),
}

/// Covariates whose effect varies smoothly over categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaryingSpec {
    pub covariates: VaryingSet,
    /// Per-covariate smoothing parameters; others share the model's lambda.
    #[serde(default)]
    pub lambda_overrides: BTreeMap<String, f64>,
}

impl VaryingSpec {
    pub fn all() -> Self {
        VaryingSpec {
            covariates: VaryingSet::All,
            lambda_overrides: BTreeMap::new(),
        }
    }

    pub fn only(names: &[&str]) -> Self {
        VaryingSpec {
            covariates: VaryingSet::Only(names.iter().map(|s| s.to_string()).collect()),
            lambda_overrides: BTreeMap::new(),
        }
    }

    pub fn columns(&self, column_names: &[String]) -> Result<Vec<usize>> {
        self.covariates.resolve(column_names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Basic,
    Varying(VaryingSpec),
    /// Separate effects for the first transition (zero vs. positive).
    ZeroSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdErrorKind {
    /// inverse penalized information
    #[default]
    Model,
    Sandwich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub link: Link,
    pub smoother: Smoother,
    pub lambda: f64,
    /// Largest modelled category `M`; defaults to the integer closest to
    /// `1.2 * max(Y)`.
    pub max_category: Option<usize>,
    pub variant: Variant,
    pub max_iter: usize,
    /// relative change of the penalized log-likelihood
    pub tol: f64,
    pub grad_tol: f64,
    pub std_errors: StdErrorKind,
}

impl Default for TransitionSpec {
    fn default() -> Self {
        TransitionSpec {
            link: Link::Logit,
            smoother: Smoother::psplines(),
            lambda: 1.0,
            max_category: None,
            variant: Variant::Basic,
            max_iter: 100,
            tol: 1e-8,
            grad_tol: 1e-6,
            std_errors: StdErrorKind::Model,
        }
    }
}

impl TransitionSpec {
    pub fn psplines(lambda: f64) -> Self {
        TransitionSpec {
            lambda,
            ..Default::default()
        }
    }

    pub fn theta_quadratic(lambda: f64) -> Self {
        TransitionSpec {
            lambda,
            smoother: Smoother::ThetaQuadratic,
            ..Default::default()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_category(mut self, m: usize) -> Self {
        self.max_category = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing parameter must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if let Smoother::PSplines { degree, order, num_basis } = self.smoother {
            if order == 0 || order > 2 {
                return Err(Error::InvalidArgument(format!("difference order must be 1 or 2, got {order}")));
            }
            if let Some(m) = num_basis {
                if m < degree + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "{m} basis functions are too few for degree {degree}"
                    )));
                }
            }
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}
