//! Proper scoring rules for count forecasts, and the resampling protocol
//! used to pick the smoothing parameter and to compare models.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_baseline, predict_pmf_baseline, BaselineKind};
use crate::data::{subsample_sized, CountDataset, SubsampleSplit};
use crate::error::{Error, Result};
use crate::pmf::{cumulative, PredictedDistribution};
use crate::transition::{self, default_max_category, TransitionSpec, Variant};

pub const DEFAULT_R_MAX: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringRule {
    Brier,
    Log,
    Rps,
}

impl ScoringRule {
    pub fn name(self) -> &'static str {
        match self {
            ScoringRule::Brier => "brier",
            ScoringRule::Log => "log",
            ScoringRule::Rps => "rps",
        }
    }
}

/// Quadratic score `sum_r (pi_r - 1{r = y})^2`.
pub fn brier(y: usize, pmf: &[f64]) -> Result<f64> {
    if y >= pmf.len() {
        return Err(Error::OutsideSupport {
            outcome: y,
            max: pmf.len().saturating_sub(1),
        });
    }
    Ok(brier_padded(y, pmf))
}

/// Brier score treating categories beyond the support as zero mass.
fn brier_padded(y: usize, pmf: &[f64]) -> f64 {
    let sq: f64 = pmf.iter().map(|p| p * p).sum();
    match pmf.get(y) {
        Some(&p) => sq - p * p + (1.0 - p) * (1.0 - p),
        None => sq + 1.0,
    }
}

/// Logarithmic score `-log pi_y`; `+inf` when the outcome has no mass.
pub fn log_score(y: usize, pmf: &[f64]) -> f64 {
    let p = pmf.get(y).copied().unwrap_or(0.0);
    if p <= 0.0 {
        log::warn!("outcome {y} has zero predicted probability; log score is infinite");
        return f64::INFINITY;
    }
    -p.ln()
}

/// Ranked probability score `sum_{r=0}^{r_max} (F(r) - 1{y <= r})^2`.
/// The cdf is 1 beyond the support.
pub fn rps(y: usize, pmf: &[f64], r_max: usize) -> f64 {
    let cdf = cumulative(pmf);
    (0..=r_max)
        .map(|r| {
            let f = cdf.get(r).copied().unwrap_or(1.0).min(1.0);
            let step = if y <= r { 1.0 } else { 0.0 };
            (f - step).powi(2)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rule: ScoringRule,
    pub r_max: usize,
    pub per_observation: Vec<f64>,
    pub mean: f64,
    pub replication_id: Option<usize>,
    pub seed: Option<u64>,
}

/// Score every observation of `outcomes` against its predicted pmf.
/// Brier scores of outcomes beyond the support count the outcome as a
/// zero-mass category.
pub fn score(rule: ScoringRule, outcomes: &[usize], dist: &PredictedDistribution, r_max: usize) -> Result<ScoreReport> {
    if outcomes.len() != dist.len() {
        return Err(Error::Dimension {
            expected: dist.len(),
            got: outcomes.len(),
        });
    }
    let per_observation: Vec<f64> = outcomes
        .iter()
        .zip(&dist.pmf)
        .map(|(&y, p)| match rule {
            ScoringRule::Brier => brier_padded(y, p),
            ScoringRule::Log => log_score(y, p),
            ScoringRule::Rps => rps(y, p, r_max),
        })
        .collect();
    let mean = per_observation.iter().sum::<f64>() / per_observation.len().max(1) as f64;
    Ok(ScoreReport {
        rule,
        r_max,
        per_observation,
        mean,
        replication_id: None,
        seed: None,
    })
}

/// A model to fit in the resampling protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Baseline { kind: BaselineKind },
    Transition { spec: TransitionSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedModel {
    pub name: String,
    pub spec: ModelSpec,
}

impl NamedModel {
    pub fn baseline(kind: BaselineKind) -> Self {
        NamedModel {
            name: kind.name().to_string(),
            spec: ModelSpec::Baseline { kind },
        }
    }

    pub fn transition(name: impl Into<String>, spec: TransitionSpec) -> Self {
        NamedModel {
            name: name.into(),
            spec: ModelSpec::Transition { spec },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainSize {
    Fraction(f64),
    Count(usize),
}

impl TrainSize {
    fn resolve(self, n: usize) -> usize {
        match self {
            TrainSize::Fraction(f) => (f * n as f64 + 0.5).floor() as usize,
            TrainSize::Count(c) => c,
        }
    }
}

/// Repeated train/test subsampling without replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub replications: usize,
    pub train: TrainSize,
    pub seed: u64,
    pub r_max: usize,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            replications: 100,
            train: TrainSize::Fraction(2.0 / 3.0),
            seed: 1,
            r_max: DEFAULT_R_MAX,
        }
    }
}

/// SplitMix64 finalizer: decorrelated per-replication seeds from one master.
pub fn replication_seed(master: u64, replication: usize) -> u64 {
    let mut z = master.wrapping_add((replication as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Protocol {
    pub fn splits(&self, n: usize) -> Result<Vec<SubsampleSplit>> {
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        let train = self.train.resolve(n);
        (0..self.replications)
            .map(|r| subsample_sized(n, train, replication_seed(self.seed, r)))
            .collect()
    }
}

/// Test-set scores of one fitted model on one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub rps: f64,
    pub brier: f64,
    pub log: f64,
}

/// Fit on the training part of `split` and score the test part.
/// Non-converged fits count as failures.
pub fn fit_and_score(model: &ModelSpec, data: &CountDataset, split: &SubsampleSplit, r_max: usize) -> Result<SplitScores> {
    let train = data.subset(&split.train);
    let test = data.subset(&split.test);
    let dist = match model {
        ModelSpec::Transition { spec } => {
            let m = transition::fit(&train, spec)?;
            if !m.converged {
                return Err(Error::NotConverged("transition fit".into()));
            }
            transition::predict_pmf(&m, &test.covariates)?
        }
        ModelSpec::Baseline { kind } => {
            let f = fit_baseline(*kind, &train)?;
            if !f.converged {
                return Err(Error::NotConverged(format!("{} fit", kind.name())));
            }
            let max_train = train.outcomes.iter().copied().max().unwrap_or(0);
            let max_test = test.outcomes.iter().copied().max().unwrap_or(0);
            let m = default_max_category(max_train).max(max_test).max(r_max) + 1;
            predict_pmf_baseline(&f, &test.covariates, m)?
        }
    };
    let y = &test.outcomes;
    let s = SplitScores {
        rps: score(ScoringRule::Rps, y, &dist, r_max)?.mean,
        brier: score(ScoringRule::Brier, y, &dist, r_max)?.mean,
        log: score(ScoringRule::Log, y, &dist, r_max)?.mean,
    };
    if s.rps.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFinite(0))
    }
}

/// Default grid `{2^k : k = -2..12} ∪ {5, 16}`, ascending.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (-2..=12).map(|k| 2f64.powi(k)).collect();
    g.push(5.0);
    g.sort_by(|a, b| a.total_cmp(b));
    g.dedup();
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// Mean test RPS over successful replications; `None` if all failed.
    pub mean_rps: Option<f64>,
    pub failures: usize,
    pub per_replication: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub curve: Vec<LambdaScore>,
}

/// Smoothing parameter minimizing mean test RPS over the protocol's splits.
/// Every lambda sees the same splits.
pub fn select_lambda(data: &CountDataset, spec: &TransitionSpec, grid: &[f64], protocol: &Protocol) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty smoothing-parameter grid".into()));
    }
    let splits = protocol.splits(data.n())?;
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|l| (0..splits.len()).map(move |r| (l, r))).collect();
    let results: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(l, r)| {
            let model = ModelSpec::Transition {
                spec: spec.clone().with_lambda(grid[l]),
            };
            fit_and_score(&model, data, &splits[r], protocol.r_max).ok().map(|s| s.rps)
        })
        .collect();
    let mut curve = Vec::with_capacity(grid.len());
    for (l, &lambda) in grid.iter().enumerate() {
        let per_replication = results[l * splits.len()..(l + 1) * splits.len()].to_vec();
        let ok: Vec<f64> = per_replication.iter().flatten().copied().collect();
        let failures = per_replication.len() - ok.len();
        let mean_rps = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        if mean_rps.is_none() {
            log::warn!("all fits failed at lambda = {lambda}; dropped");
        } else if failures > 0 {
            log::warn!("{failures} fits failed at lambda = {lambda}");
        }
        curve.push(LambdaScore {
            lambda,
            mean_rps,
            failures,
            per_replication,
        });
    }
    let best = curve
        .iter()
        .filter_map(|c| c.mean_rps.map(|m| (c.lambda, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::AllFailed("every smoothing parameter failed".into()))?;
    Ok(LambdaSelection { lambda: best.0, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicSelection {
    /// Input spec with the selected intercept and per-covariate smoothing parameters.
    pub spec: TransitionSpec,
    pub aic: f64,
    pub edf: f64,
    pub sweeps: usize,
}

/// Separate smoothing parameters for the intercept smooth and each
/// varying-coefficient smooth, chosen by coordinate-wise minimization of
/// `AIC = -2 loglik + 2 edf` over `grid` on the full data.
pub fn select_lambda_aic(data: &CountDataset, spec: &TransitionSpec, grid: &[f64]) -> Result<AicSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty smoothing-parameter grid".into()));
    }
    let varying: Vec<String> = match &spec.variant {
        Variant::Varying(v) => v.columns(&data.column_names)?.into_iter().map(|j| data.column_names[j].clone()).collect(),
        _ => Vec::new(),
    };
    let with = |base: &TransitionSpec, term: Option<&str>, lambda: f64| {
        let mut s = base.clone();
        match (term, &mut s.variant) {
            (Some(name), Variant::Varying(v)) => {
                v.lambda_overrides.insert(name.to_string(), lambda);
            }
            _ => s.lambda = lambda,
        }
        s
    };
    let score = |s: &TransitionSpec| -> Option<(f64, f64)> {
        let m = transition::fit(data, s).ok()?;
        (m.converged && m.aic().is_finite()).then(|| (m.aic(), m.edf))
    };
    // every varying term starts from the shared lambda
    let mut current = spec.clone();
    for name in &varying {
        current = with(&current, Some(name), spec.lambda);
    }
    let (mut aic, mut edf) = score(&current).ok_or_else(|| Error::AllFailed("starting fit failed".into()))?;
    let terms: Vec<Option<&str>> = std::iter::once(None).chain(varying.iter().map(|n| Some(n.as_str()))).collect();
    let mut sweeps = 0;
    while sweeps < 20 {
        sweeps += 1;
        let mut changed = false;
        for &term in &terms {
            let candidates: Vec<Option<(f64, f64)>> = grid.par_iter().map(|&l| score(&with(&current, term, l))).collect();
            let best = candidates
                .iter()
                .zip(grid)
                .filter_map(|(c, &l)| c.map(|(a, e)| (a, e, l)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((a, e, l)) = best {
                if a < aic - 1e-8 * (1.0 + aic.abs()) {
                    current = with(&current, term, l);
                    aic = a;
                    edf = e;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(AicSelection {
        spec: current,
        aic,
        edf,
        sweeps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub model: String,
    pub replication: usize,
    pub seed: u64,
    /// `None` when the fit failed on this split.
    pub scores: Option<SplitScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mean_rps: f64,
    pub mean_brier: f64,
    pub mean_log: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub records: Vec<ReplicationRecord>,
    /// Means over replications where every model succeeded.
    pub summary: Vec<ModelSummary>,
    /// Replications dropped because at least one model failed.
    pub excluded: usize,
}

impl Comparison {
    pub fn mean_rps(&self, model: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.model == model).map(|s| s.mean_rps)
    }

    /// Per-replication table: `model,replication,seed,rps,brier,log`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["model", "replication", "seed", "rps", "brier", "log"])?;
        for r in &self.records {
            let f = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
            let s = r.scores;
            w.write_record([
                r.model.clone(),
                r.replication.to_string(),
                r.seed.to_string(),
                f(s.map(|s| s.rps)),
                f(s.map(|s| s.brier)),
                f(s.map(|s| s.log)),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<score csv>", e))?;
        Ok(())
    }
}

/// Fit every model on every split and score the held-out part.
pub fn compare_models(data: &CountDataset, models: &[NamedModel], protocol: &Protocol) -> Result<Comparison> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models to compare".into()));
    }
    let splits = protocol.splits(data.n())?;
    let jobs: Vec<(usize, usize)> = (0..splits.len()).flat_map(|r| (0..models.len()).map(move |m| (r, m))).collect();
    let records: Vec<ReplicationRecord> = jobs
        .par_iter()
        .map(|&(r, m)| {
            let scores = match fit_and_score(&models[m].spec, data, &splits[r], protocol.r_max) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("{} failed on replication {r}: {e}", models[m].name);
                    None
                }
            };
            ReplicationRecord {
                model: models[m].name.clone(),
                replication: r,
                seed: splits[r].seed,
                scores,
            }
        })
        .collect();
    let complete: Vec<bool> = (0..splits.len())
        .map(|r| records[r * models.len()..(r + 1) * models.len()].iter().all(|x| x.scores.is_some()))
        .collect();
    let used = complete.iter().filter(|&&c| c).count();
    if used == 0 {
        return Err(Error::AllFailed("no replication succeeded for every model".into()));
    }
    let summary = models
        .iter()
        .enumerate()
        .map(|(m, model)| {
            let mut acc = [0.0; 3];
            let mut failures = 0;
            for r in 0..splits.len() {
                let rec = &records[r * models.len() + m];
                match rec.scores {
                    None => failures += 1,
                    Some(s) if complete[r] => {
                        acc[0] += s.rps;
                        acc[1] += s.brier;
                        acc[2] += s.log;
                    }
                    Some(_) => {}
                }
            }
            let k = used as f64;
            ModelSummary {
                model: model.name.clone(),
                mean_rps: acc[0] / k,
                mean_brier: acc[1] / k,
                mean_log: acc[2] / k,
                failures,
            }
        })
        .collect();
    Ok(Comparison {
        records,
        summary,
        excluded: splits.len() - used,
    })
}
