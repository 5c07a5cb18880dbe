//! Versioned JSON model documents. Reals are written in shortest
//! round-trip form and parsed exactly, so a save/load cycle is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{predict_pmf_baseline, BaselineFit, BaselineFlags, BaselineKind};
use crate::data::Encoding;
use crate::error::{Error, Result};
use crate::pmf::PredictedDistribution;
use crate::summary::CoefficientTable;
use crate::transition::{predict_pmf, FittedTransitionModel, TransitionSpec};

pub const SCHEMA_ID: &str = "transcount.model";
pub const SCHEMA_VERSION: u32 = 1;

/// A fitted model of either family.
#[derive(Debug, Clone)]
pub enum Model {
    Transition(FittedTransitionModel),
    Baseline(BaselineFit),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Document {
    schema: String,
    version: u32,
    model: Stored,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
enum Stored {
    Transition(StoredTransition),
    Baseline(StoredBaseline),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Convergence {
    converged: bool,
    iterations: usize,
    loglik: f64,
    penalized_loglik: Option<f64>,
    gradient_norm: Option<f64>,
    edf: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTransition {
    spec: TransitionSpec,
    encoding: Encoding,
    column_names: Vec<String>,
    max_category: usize,
    labels: Vec<String>,
    params: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    separated: Vec<bool>,
    degenerate_zero_part: bool,
    convergence: Convergence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredBaseline {
    kind: BaselineKind,
    encoding: Encoding,
    column_names: Vec<String>,
    beta: Vec<f64>,
    gamma: Option<Vec<f64>>,
    nu: Option<f64>,
    covariance: Vec<Vec<f64>>,
    flags: BaselineFlags,
    convergence: Convergence,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Persist(format!("covariance must be {dim} x {dim}")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Persist("model contains non-finite values".into()))
    }
}

impl Model {
    pub fn converged(&self) -> bool {
        match self {
            Model::Transition(m) => m.converged,
            Model::Baseline(b) => b.converged,
        }
    }

    /// Diagnostics worth a warning: separation, divergence, degenerate parts.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        match self {
            Model::Transition(m) => {
                for (label, &s) in m.labels.iter().zip(&m.separated) {
                    if s {
                        w.push(format!("{label}: not estimable (diverging or unidentified; no standard error)"));
                    }
                }
                if m.degenerate_zero_part {
                    w.push("zero part: no zero counts in the data".into());
                }
            }
            Model::Baseline(b) => {
                for d in &b.flags.divergent {
                    w.push(format!("{d}: diverging estimate (no standard error)"));
                }
                if b.flags.poisson_limit {
                    w.push("dispersion diverges: Poisson limit".into());
                }
                if b.flags.zero_degenerate {
                    w.push("zero part degenerate".into());
                }
                if b.flags.count_degenerate {
                    w.push("count part degenerate: no positive counts".into());
                }
            }
        }
        if !self.converged() {
            w.push("fit did not converge".into());
        }
        w
    }

    pub fn summarize(&self) -> CoefficientTable {
        match self {
            Model::Transition(m) => m.summarize(),
            Model::Baseline(b) => b.summarize(),
        }
    }

    pub fn encoding(&self) -> &Encoding {
        match self {
            Model::Transition(m) => &m.encoding,
            Model::Baseline(b) => &b.encoding,
        }
    }

    /// Largest category of the predictive pmf: the fitted `M` for transition
    /// models; for baselines `max_category` must be given.
    pub fn predict(&self, covariates: &DMatrix<f64>, max_category: Option<usize>) -> Result<PredictedDistribution> {
        match self {
            Model::Transition(m) => predict_pmf(m, covariates),
            Model::Baseline(b) => {
                let m = max_category
                    .ok_or_else(|| Error::InvalidArgument("baseline predictions need a largest category".into()))?;
                predict_pmf_baseline(b, covariates, m)
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let model = match self {
            Model::Transition(m) => {
                check_finite(m.params.iter().chain(m.covariance.iter()))?;
                Stored::Transition(StoredTransition {
                    spec: m.spec.clone(),
                    encoding: m.encoding.clone(),
                    column_names: m.column_names.clone(),
                    max_category: m.max_category(),
                    labels: m.labels.clone(),
                    params: m.params.clone(),
                    covariance: rows(&m.covariance),
                    separated: m.separated.clone(),
                    degenerate_zero_part: m.degenerate_zero_part,
                    convergence: Convergence {
                        converged: m.converged,
                        iterations: m.iterations,
                        loglik: m.loglik,
                        penalized_loglik: Some(m.penalized_loglik),
                        gradient_norm: Some(m.gradient_norm),
                        edf: Some(m.edf),
                    },
                })
            }
            Model::Baseline(b) => {
                check_finite(b.beta.iter().chain(b.gamma.iter().flatten()).chain(b.nu.iter()).chain(b.covariance.iter()))?;
                Stored::Baseline(StoredBaseline {
                    kind: b.kind,
                    encoding: b.encoding.clone(),
                    column_names: b.column_names.clone(),
                    beta: b.beta.clone(),
                    gamma: b.gamma.clone(),
                    nu: b.nu,
                    covariance: rows(&b.covariance),
                    flags: b.flags.clone(),
                    convergence: Convergence {
                        converged: b.converged,
                        iterations: b.iterations,
                        loglik: b.loglik,
                        penalized_loglik: None,
                        gradient_norm: None,
                        edf: None,
                    },
                })
            }
        };
        let doc = Document {
            schema: SCHEMA_ID.into(),
            version: SCHEMA_VERSION,
            model,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Persist(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Persist(e.to_string()))?;
        if doc.schema != SCHEMA_ID {
            return Err(Error::Persist(format!("unknown schema `{}`", doc.schema)));
        }
        if doc.version != SCHEMA_VERSION {
            return Err(Error::Persist(format!(
                "unsupported version {} (expected {SCHEMA_VERSION})",
                doc.version
            )));
        }
        match doc.model {
            Stored::Transition(s) => {
                let dim = s.params.len();
                let c = &s.convergence;
                let m = FittedTransitionModel::from_parts(
                    s.spec,
                    s.encoding,
                    s.column_names,
                    s.max_category,
                    s.params,
                    matrix(&s.covariance, dim)?,
                    (
                        c.loglik,
                        c.penalized_loglik.unwrap_or(c.loglik),
                        c.converged,
                        c.iterations,
                        c.gradient_norm.unwrap_or(0.0),
                        c.edf.unwrap_or(dim as f64),
                    ),
                    s.separated,
                    s.degenerate_zero_part,
                )?;
                if m.labels != s.labels {
                    return Err(Error::Persist("stored labels do not match the model layout".into()));
                }
                Ok(Model::Transition(m))
            }
            Stored::Baseline(s) => {
                let dim = s.covariance.len();
                let expected = s.beta.len() + s.gamma.as_ref().map_or(0, Vec::len) + usize::from(s.nu.is_some());
                if dim != expected || s.beta.len() != s.column_names.len() + 1 {
                    return Err(Error::Persist("baseline dimensions are inconsistent".into()));
                }
                Ok(Model::Baseline(BaselineFit {
                    kind: s.kind,
                    encoding: s.encoding,
                    column_names: s.column_names,
                    beta: s.beta,
                    gamma: s.gamma,
                    nu: s.nu,
                    covariance: matrix(&s.covariance, dim)?,
                    loglik: s.convergence.loglik,
                    converged: s.convergence.converged,
                    iterations: s.convergence.iterations,
                    flags: s.flags,
                }))
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_json(&text)
    }
}
