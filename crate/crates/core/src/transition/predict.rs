use nalgebra::DMatrix;

use super::{FittedTransitionModel, Variant};
use crate::error::{Error, Result};
use crate::link::Link;
use crate::pmf::PredictedDistribution;

/// Count probabilities on `{0, ..., M}` from the product of transition
/// probabilities; the survival mass left after `M - 1` goes to `M`.
pub fn predict_pmf(model: &FittedTransitionModel, covariates: &DMatrix<f64>) -> Result<PredictedDistribution> {
    let p = model.column_names.len();
    if covariates.ncols() != p {
        return Err(Error::Dimension {
            expected: p,
            got: covariates.ncols(),
        });
    }
    let upper = model.max_category();
    let link = model.layout.link;
    let mut pmf = Vec::with_capacity(covariates.nrows());
    for i in 0..covariates.nrows() {
        let x: Vec<f64> = covariates.row(i).iter().copied().collect();
        let mut probs = Vec::with_capacity(upper + 1);
        let mut survival = 1.0;
        for r in 0..upper {
            let eta = model.layout.eta(&model.params, r, &x);
            if eta.is_nan() {
                return Err(Error::NonFinite(i));
            }
            let delta = link.cdf(eta);
            probs.push(survival * link.log_sf(eta).exp());
            survival *= delta;
        }
        probs.push(survival);
        pmf.push(probs);
    }
    Ok(PredictedDistribution { pmf })
}

/// Ratio of continuation ratios between two covariate vectors, per category.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurve {
    /// categories `0..M`
    pub values: Vec<f64>,
    /// true when the model forces the same ratio in every category
    pub constant: bool,
}

pub fn continuation_ratio_effect(model: &FittedTransitionModel, x: &[f64], x_ref: &[f64]) -> Result<EffectCurve> {
    let p = model.column_names.len();
    for v in [x, x_ref] {
        if v.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: v.len(),
            });
        }
    }
    let link = model.layout.link;
    let values = (0..model.max_category())
        .map(|r| {
            let a = model.layout.eta(&model.params, r, x);
            let b = model.layout.eta(&model.params, r, x_ref);
            match link {
                Link::Logit => (a - b).exp(),
                Link::Cloglog => {
                    let log_odds = |eta: f64| link.log_cdf(eta) - link.log_sf(eta);
                    (log_odds(a) - log_odds(b)).exp()
                }
            }
        })
        .collect();
    Ok(EffectCurve {
        values,
        constant: matches!(model.spec.variant, Variant::Basic) && link == Link::Logit,
    })
}
