//! Count simulators and the flexibility study: how closely an averaged
//! transition-model fit tracks the true pmf of a fixed count distribution.

use std::io::Write;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_negbin, fit_poisson, negbin_pmf, poisson_pmf, predict_pmf_baseline};
use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::scoring::{default_lambda_grid, replication_seed, select_lambda, select_lambda_aic, Protocol, TrainSize};
use crate::transition::{self, TransitionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum SimFamily {
    Poisson { mu: f64 },
    /// Mean `mu`, variance `mu + mu^2 / nu`.
    NegBin { nu: f64, mu: f64 },
}

impl SimFamily {
    pub fn pmf(&self, r: usize) -> f64 {
        match *self {
            SimFamily::Poisson { mu } => poisson_pmf(r, mu),
            SimFamily::NegBin { nu, mu } => negbin_pmf(r, mu, nu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub family: SimFamily,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.family {
            SimFamily::Poisson { mu } => mu > 0.0 && mu.is_finite(),
            SimFamily::NegBin { nu, mu } => mu > 0.0 && nu > 0.0 && mu.is_finite() && nu.is_finite(),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid family parameters {:?}", self.family)));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("at least one replication is required".into()));
        }
        Ok(())
    }
}

/// I.i.d. draws (intercept-only dataset) for replication `replication`.
/// Negative binomial counts are drawn as a gamma-Poisson mixture.
pub fn simulate_counts(config: &SimConfig, replication: usize) -> Result<CountDataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.seed, replication));
    let draw_poisson = |rng: &mut ChaCha8Rng, rate: f64| -> usize {
        if rate <= 0.0 {
            return 0;
        }
        Poisson::new(rate).map(|d| d.sample(rng) as usize).unwrap_or(0)
    };
    let outcomes = match config.family {
        SimFamily::Poisson { mu } => (0..config.n).map(|_| draw_poisson(&mut rng, mu)).collect(),
        SimFamily::NegBin { nu, mu } => {
            let gamma = Gamma::new(nu, mu / nu).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            (0..config.n)
                .map(|_| {
                    let rate = gamma.sample(&mut rng);
                    draw_poisson(&mut rng, rate)
                })
                .collect()
        }
    };
    Ok(CountDataset::intercept_only(outcomes))
}

/// How the smoothing parameter of each replication's transition fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LambdaChoice {
    Fixed { lambda: f64 },
    /// AIC over the default grid on the replication's sample.
    Aic,
    /// Mean test RPS over `replications` 2/3 subsamples of the replication's sample.
    Resampling { replications: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityResult {
    /// Evaluation grid is `0..=max_category`.
    pub max_category: usize,
    pub true_pmf: Vec<f64>,
    pub avg_transition: Vec<f64>,
    pub avg_family: Vec<f64>,
    pub transition_pmfs: Vec<Vec<f64>>,
    pub family_pmfs: Vec<Vec<f64>>,
    pub lambdas: Vec<f64>,
    pub failures: usize,
}

impl FlexibilityResult {
    pub fn max_gap_transition(&self) -> f64 {
        max_gap(&self.avg_transition, &self.true_pmf)
    }

    pub fn max_gap_family(&self) -> f64 {
        max_gap(&self.avg_family, &self.true_pmf)
    }

    /// Columns `r,true,avg_transition,avg_family`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["r", "true", "avg_transition", "avg_family"])?;
        for r in 0..=self.max_category {
            w.write_record([
                r.to_string(),
                self.true_pmf[r].to_string(),
                self.avg_transition[r].to_string(),
                self.avg_family[r].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<pmf csv>", e))?;
        Ok(())
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn pad(mut pmf: Vec<f64>, len: usize) -> Vec<f64> {
    pmf.resize(len, 0.0);
    pmf
}

fn average(rows: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut avg = vec![0.0; len];
    for row in rows {
        for (a, v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= rows.len() as f64);
    avg
}

struct Replication {
    transition: Vec<f64>,
    family: Vec<f64>,
    lambda: f64,
}

fn run_replication(config: &SimConfig, spec: &TransitionSpec, choice: LambdaChoice, rep: usize) -> Result<Replication> {
    let data = simulate_counts(config, rep)?;
    let lambda = match choice {
        LambdaChoice::Fixed { lambda } => lambda,
        LambdaChoice::Aic => select_lambda_aic(&data, spec, &default_lambda_grid())?.spec.lambda,
        LambdaChoice::Resampling { replications } => {
            let protocol = Protocol {
                replications,
                train: TrainSize::Fraction(2.0 / 3.0),
                seed: replication_seed(config.seed ^ 0x5EED, rep),
                ..Default::default()
            };
            select_lambda(&data, spec, &default_lambda_grid(), &protocol)?.lambda
        }
    };
    let model = transition::fit(&data, &spec.clone().with_lambda(lambda))?;
    if !model.converged {
        return Err(Error::NotConverged("transition fit".into()));
    }
    let x = DMatrix::zeros(1, 0);
    let transition = transition::predict_pmf(&model, &x)?.pmf.remove(0);
    let family_fit = match config.family {
        SimFamily::Poisson { .. } => fit_poisson(&data)?,
        SimFamily::NegBin { .. } => fit_negbin(&data)?,
    };
    let family = predict_pmf_baseline(&family_fit, &x, transition.len() - 1)?.pmf.remove(0);
    Ok(Replication {
        transition,
        family,
        lambda,
    })
}

/// Fit the transition model and the true-family model to each simulated
/// sample and average the fitted pmfs. Failed replications are excluded.
pub fn flexibility_study(config: &SimConfig, spec: &TransitionSpec, choice: LambdaChoice) -> Result<FlexibilityResult> {
    config.validate()?;
    let results: Vec<Result<Replication>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, spec, choice, rep))
        .collect();
    let mut ok = Vec::new();
    let mut failures = 0;
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => ok.push(r),
            Err(e) => {
                log::warn!("replication {rep} failed: {e}");
                failures += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::AllFailed("every replication failed".into()));
    }
    let len = ok.iter().map(|r| r.transition.len().max(r.family.len())).max().unwrap_or(1);
    let transition_pmfs: Vec<Vec<f64>> = ok.iter().map(|r| pad(r.transition.clone(), len)).collect();
    let family_pmfs: Vec<Vec<f64>> = ok.iter().map(|r| pad(r.family.clone(), len)).collect();
    Ok(FlexibilityResult {
        max_category: len - 1,
        true_pmf: (0..len).map(|r| config.family.pmf(r)).collect(),
        avg_transition: average(&transition_pmfs, len),
        avg_family: average(&family_pmfs, len),
        transition_pmfs,
        family_pmfs,
        lambdas: ok.iter().map(|r| r.lambda).collect(),
        failures,
    })
}
