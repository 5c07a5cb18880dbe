use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictive distributions over `{0, ..., M}`, one per observation. All
/// probability mass beyond `M` is carried by category `M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDistribution {
    pub pmf: Vec<Vec<f64>>,
}

impl PredictedDistribution {
    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    pub fn max_category(&self) -> usize {
        self.pmf.first().map_or(0, |p| p.len().saturating_sub(1))
    }

    pub fn cdf(&self, i: usize) -> Vec<f64> {
        cumulative(&self.pmf[i])
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.pmf[i].iter().enumerate().map(|(r, p)| r as f64 * p).sum()
    }

    /// Pointwise average over observations.
    pub fn average(&self) -> Result<Vec<f64>> {
        average_pmfs(&self.pmf)
    }
}

pub fn cumulative(pmf: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

pub fn average_pmfs(pmfs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = pmfs.first().ok_or(Error::EmptyData)?;
    let len = first.len();
    let mut avg = vec![0.0; len];
    for p in pmfs {
        if p.len() != len {
            return Err(Error::Dimension {
                expected: len,
                got: p.len(),
            });
        }
        for (a, v) in avg.iter_mut().zip(p) {
            *a += v;
        }
    }
    let n = pmfs.len() as f64;
    avg.iter_mut().for_each(|a| *a /= n);
    Ok(avg)
}

/// Truncate an untruncated pmf evaluator to `{0..=M}`, putting the
/// remaining mass `1 - sum_{r<M} p(r)` on `M`.
pub fn truncate_with_tail(max_category: usize, mut prob: impl FnMut(usize) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_category + 1);
    let mut acc = 0.0;
    for r in 0..max_category {
        let p = prob(r).max(0.0);
        acc += p;
        out.push(p);
    }
    out.push((1.0 - acc).max(0.0));
    out
}
