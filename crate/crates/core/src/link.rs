//! Binary response functions for the transition probabilities.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
    Cloglog,
}

/// Per-record pieces of a Fisher scoring step.
#[derive(Debug, Clone, Copy)]
pub struct ScoreTerms {
    /// d loglik / d eta
    pub score: f64,
    /// expected information in eta
    pub weight: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Link {
    pub fn cdf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            Link::Cloglog => -(-eta.exp()).exp_m1(),
        }
    }

    /// `log F(eta)`
    pub fn log_cdf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => -softplus(-eta),
            Link::Cloglog => {
                let e = eta.exp();
                if e < 1e-300 {
                    eta
                } else {
                    (-(-e).exp_m1()).ln()
                }
            }
        }
    }

    /// `log(1 - F(eta))`
    pub fn log_sf(self, eta: f64) -> f64 {
        match self {
            Link::Logit => -softplus(eta),
            Link::Cloglog => -eta.exp(),
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        match self {
            Link::Logit => (p / (1.0 - p)).ln(),
            Link::Cloglog => (-(-p).ln_1p()).ln(),
        }
    }

    /// Log-likelihood contribution of a binary outcome.
    pub fn loglik(self, y: bool, eta: f64) -> f64 {
        if y {
            self.log_cdf(eta)
        } else {
            self.log_sf(eta)
        }
    }

    pub fn score_terms(self, y: bool, eta: f64) -> ScoreTerms {
        let yv = if y { 1.0 } else { 0.0 };
        match self {
            Link::Logit => {
                let f = self.cdf(eta);
                ScoreTerms {
                    score: yv - f,
                    weight: f * (1.0 - f),
                }
            }
            Link::Cloglog => {
                let e = eta.exp();
                let f = self.cdf(eta);
                if f <= 0.0 {
                    return ScoreTerms { score: yv, weight: 0.0 };
                }
                // f'(eta) / (F (1 - F)) = e / F
                let ratio = e / f;
                ScoreTerms {
                    score: (yv - f) * ratio,
                    weight: e * (-e).exp() * ratio,
                }
            }
        }
    }
}
