//! Fixed-distribution count regressions: Poisson, negative binomial,
//! zero-inflated Poisson and the logit/Poisson hurdle model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CountDataset, Encoding};
use crate::error::{Error, Result};
use crate::newton::{divergent_coefficients, inverse_spd, maximize, Controls, Derivatives, Objective, Outcome};
use crate::pmf::{truncate_with_tail, PredictedDistribution};
use crate::special::{digamma, ln_factorial, ln_rising, trigamma};
use crate::summary::{CoefRow, CoefficientTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Poisson,
    NegBin,
    Zip,
    Hurdle,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Poisson => "poisson",
            BaselineKind::NegBin => "negbin",
            BaselineKind::Zip => "zip",
            BaselineKind::Hurdle => "hurdle",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineFlags {
    /// Coefficients diverging to +-infinity (labels as in the summary).
    pub divergent: Vec<String>,
    /// Negative binomial dispersion ran off to infinity: the Poisson limit.
    pub poisson_limit: bool,
    /// Zero part has no information (no zeros, or no zero excess left).
    pub zero_degenerate: bool,
    /// Hurdle count part has no positive counts to fit.
    pub count_degenerate: bool,
}

/// A fitted baseline. `beta` is the log-link count part (intercept first),
/// `gamma` the logit zero part: the probability of a structural zero for
/// ZIP, of crossing the hurdle (`Y > 0`) for the hurdle model.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineFit {
    pub kind: BaselineKind,
    pub encoding: Encoding,
    pub column_names: Vec<String>,
    pub beta: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub nu: Option<f64>,
    /// Joint covariance over `beta`, then `gamma`, then `log(nu)`.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flags: BaselineFlags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Poisson,
    NegBin(f64),
    Logistic,
    TruncatedPoisson,
}

impl Family {
    /// (loglik, score in eta, information weight in eta)
    fn terms(self, y: f64, eta: f64) -> (f64, f64, f64) {
        match self {
            Family::Poisson => {
                let mu = eta.exp();
                (y * eta - mu - ln_factorial(y as usize), y - mu, mu)
            }
            Family::NegBin(nu) => {
                let mu = eta.exp();
                let yi = y as usize;
                let ll = ln_rising(nu, yi) - ln_factorial(yi) + y * (eta - (mu + nu).ln()) + nu * (nu.ln() - (mu + nu).ln());
                (ll, (y - mu) * nu / (mu + nu), mu * nu / (mu + nu))
            }
            Family::Logistic => {
                let p = crate::link::Link::Logit.cdf(eta);
                let ll = y * crate::link::Link::Logit.log_cdf(eta) + (1.0 - y) * crate::link::Link::Logit.log_sf(eta);
                (ll, y - p, p * (1.0 - p))
            }
            Family::TruncatedPoisson => {
                let mu = eta.exp();
                let not_zero = -(-mu).exp_m1();
                let ll = y * eta - mu - ln_factorial(y as usize) - not_zero.ln();
                let mean = mu / not_zero;
                let w = (mean * (1.0 + mu) - mean * mean).max(0.0);
                (ll, y - mean, w)
            }
        }
    }
}

/// Weighted single-predictor likelihood over a dense design.
struct GlmObjective<'a> {
    design: &'a DMatrix<f64>,
    y: &'a [f64],
    weights: Option<&'a [f64]>,
    family: Family,
}

impl GlmObjective<'_> {
    fn eval(&self, beta: &DVector<f64>, with_info: bool) -> Result<Derivatives> {
        let eta = self.design * beta;
        let k = beta.len();
        let mut value = 0.0;
        let mut score = DVector::zeros(self.y.len());
        let mut w = DVector::zeros(self.y.len());
        for i in 0..self.y.len() {
            if !eta[i].is_finite() {
                return Err(Error::NonFinite(i));
            }
            let pw = self.weights.map_or(1.0, |ws| ws[i]);
            let (ll, u, wi) = self.family.terms(self.y[i], eta[i]);
            value += pw * ll;
            score[i] = pw * u;
            w[i] = pw * wi;
        }
        let gradient = self.design.transpose() * score;
        let information = if with_info {
            let mut wx = self.design.clone();
            for (i, mut row) in wx.row_iter_mut().enumerate() {
                row *= w[i];
            }
            self.design.transpose() * wx
        } else {
            DMatrix::zeros(k, k)
        };
        Ok(Derivatives {
            value,
            gradient,
            information,
        })
    }
}

impl Objective for GlmObjective<'_> {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn value(&self, params: &DVector<f64>) -> Result<f64> {
        let v = self.eval(params, false)?.value;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(0))
        }
    }

    fn derivatives(&self, params: &DVector<f64>) -> Result<Derivatives> {
        self.eval(params, true)
    }
}

fn design_with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut z = DMatrix::from_element(n, x.ncols() + 1, 1.0);
    z.view_mut((0, 1), (n, x.ncols())).copy_from(x);
    z
}

fn glm_fit(
    design: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    family: Family,
    start: DVector<f64>,
    controls: &Controls,
) -> Result<Outcome> {
    let obj = GlmObjective {
        design,
        y,
        weights,
        family,
    };
    maximize(&obj, start, controls)
}

/// Covariance from information with `drop` rows/columns removed (they get 0).
fn covariance_excluding(info: &DMatrix<f64>, drop: &[usize]) -> Result<DMatrix<f64>> {
    let k = info.nrows();
    let keep: Vec<usize> = (0..k).filter(|i| !drop.contains(i)).collect();
    let sub = inverse_spd(&info.select_rows(&keep).select_columns(&keep))?;
    let mut cov = DMatrix::zeros(k, k);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            cov[(i, j)] = sub[(a, b)];
        }
    }
    Ok(cov)
}

fn labels(prefix: &str, names: &[String]) -> Vec<String> {
    std::iter::once(format!("{prefix}(Intercept)"))
        .chain(names.iter().map(|n| format!("{prefix}{n}")))
        .collect()
}

fn outcomes_f64(data: &CountDataset) -> Vec<f64> {
    data.outcomes.iter().map(|&y| y as f64).collect()
}

fn check(data: &CountDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(name) = data.constant_columns().into_iter().next() {
        return Err(Error::ZeroVariance(name));
    }
    Ok(())
}

fn poisson_start(y: &[f64], k: usize) -> DVector<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut s = DVector::zeros(k);
    s[0] = (mean + 0.1).ln();
    s
}

fn tight() -> Controls {
    Controls {
        max_iter: 200,
        rel_tol: 1e-10,
        grad_tol: 1e-6,
        max_halvings: 30,
    }
}

/// Poisson regression with log link.
pub fn fit_poisson(data: &CountDataset) -> Result<BaselineFit> {
    check(data)?;
    let z = design_with_intercept(&data.covariates);
    let y = outcomes_f64(data);
    let out = glm_fit(&z, &y, None, Family::Poisson, poisson_start(&y, z.ncols()), &tight())?;
    let div = divergent_coefficients(&out);
    let names = labels("", &data.column_names);
    let covariance = covariance_excluding(&out.information, &div)?;
    Ok(BaselineFit {
        kind: BaselineKind::Poisson,
        encoding: data.encoding.clone(),
        column_names: data.column_names.clone(),
        beta: out.params.iter().copied().collect(),
        gamma: None,
        nu: None,
        covariance,
        loglik: out.value,
        converged: out.converged,
        iterations: out.iterations,
        flags: BaselineFlags {
            divergent: div.iter().map(|&i| names[i].clone()).collect(),
            ..Default::default()
        },
    })
}

const LOG_NU_MAX: f64 = 23.0;

fn negbin_nu_loglik(y: &[f64], mu: &[f64], nu: f64) -> (f64, f64, f64) {
    let mut ll = 0.0;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for (&yi, &m) in y.iter().zip(mu) {
        let yu = yi as usize;
        ll += ln_rising(nu, yu) - ln_factorial(yu) + yi * (m.ln() - (m + nu).ln()) + nu * (nu.ln() - (m + nu).ln());
        d1 += digamma(yi + nu) - digamma(nu) + nu.ln() + 1.0 - (m + nu).ln() - (yi + nu) / (m + nu);
        d2 += trigamma(yi + nu) - trigamma(nu) + 1.0 / nu - 2.0 / (m + nu) + (yi + nu) / ((m + nu) * (m + nu));
    }
    (ll, d1, d2)
}

/// Maximize the NB log-likelihood over `t = log(nu)` for fixed means.
fn optimize_log_nu(y: &[f64], mu: &[f64], start: f64) -> (f64, f64) {
    let f = |t: f64| negbin_nu_loglik(y, mu, t.exp());
    let mut t = start.clamp(-10.0, LOG_NU_MAX);
    let (mut ll, _, _) = f(t);
    for _ in 0..200 {
        let nu = t.exp();
        let (_, d1, d2) = f(t);
        let g = nu * d1;
        let h = nu * nu * d2 + nu * d1;
        let step = if h < 0.0 { -g / h } else { g.signum() * 1.0 };
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand = (t + scale * step).clamp(-10.0, LOG_NU_MAX);
            let (lc, _, _) = f(cand);
            if lc >= ll {
                moved = (cand - t).abs() > 1e-12;
                t = cand;
                ll = lc;
                break;
            }
            scale *= 0.5;
        }
        if !moved || (scale * step).abs() < 1e-10 || g.abs() < 1e-9 {
            break;
        }
    }
    (t, ll)
}

/// Negative binomial regression: Fisher scoring for the coefficients at
/// fixed dispersion, alternated with a Newton search over `log(nu)`.
pub fn fit_negbin(data: &CountDataset) -> Result<BaselineFit> {
    check(data)?;
    let z = design_with_intercept(&data.covariates);
    let y = outcomes_f64(data);
    let n = y.len() as f64;
    let pois = glm_fit(&z, &y, None, Family::Poisson, poisson_start(&y, z.ncols()), &tight())?;
    let mut beta = pois.params.clone();
    let mu: Vec<f64> = (&z * &beta).iter().map(|e| e.exp()).collect();
    let moment: f64 = y.iter().zip(&mu).map(|(yi, m)| (yi / m - 1.0).powi(2)).sum();
    let mut t = if moment > 0.0 { (n / moment).ln() } else { LOG_NU_MAX };
    let mut ll_old = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..100 {
        iterations += 1;
        let last = glm_fit(&z, &y, None, Family::NegBin(t.exp()), beta.clone(), &tight())?;
        beta = last.params.clone();
        let mu: Vec<f64> = (&z * &beta).iter().map(|e| e.exp()).collect();
        let (t_new, ll) = optimize_log_nu(&y, &mu, t);
        let dt = (t_new - t).abs();
        t = t_new;
        if (ll - ll_old).abs() < 1e-10 * (1.0 + ll.abs()) && dt < 1e-6 {
            converged = last.converged;
            ll_old = ll;
            break;
        }
        ll_old = ll;
    }
    let nu = t.exp();
    let final_fit = glm_fit(&z, &y, None, Family::NegBin(nu), beta.clone(), &tight())?;
    let div = divergent_coefficients(&final_fit);
    let k = z.ncols();
    let beta_cov = covariance_excluding(&final_fit.information, &div)?;
    let mu: Vec<f64> = (&z * &final_fit.params).iter().map(|e| e.exp()).collect();
    let (ll, d1, d2) = negbin_nu_loglik(&y, &mu, nu);
    let info_t = -(nu * nu * d2 + nu * d1);
    let poisson_limit = t >= LOG_NU_MAX - 1e-6 || nu > 1e6;
    let mut covariance = DMatrix::zeros(k + 1, k + 1);
    covariance.view_mut((0, 0), (k, k)).copy_from(&beta_cov);
    covariance[(k, k)] = if info_t > 0.0 && !poisson_limit { 1.0 / info_t } else { 0.0 };
    let names = labels("", &data.column_names);
    Ok(BaselineFit {
        kind: BaselineKind::NegBin,
        encoding: data.encoding.clone(),
        column_names: data.column_names.clone(),
        beta: final_fit.params.iter().copied().collect(),
        gamma: None,
        nu: Some(nu),
        covariance,
        loglik: if ll_old.is_finite() { ll } else { ll_old },
        converged,
        iterations,
        flags: BaselineFlags {
            divergent: div.iter().map(|&i| names[i].clone()).collect(),
            poisson_limit,
            ..Default::default()
        },
    })
}

fn logistic(eta: f64) -> f64 {
    crate::link::Link::Logit.cdf(eta)
}

/// Joint ZIP log-likelihood and score in `(beta, gamma)`.
fn zip_loglik_score(z: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, gamma: &DVector<f64>) -> (f64, DVector<f64>) {
    let k = z.ncols();
    let eb = z * beta;
    let eg = z * gamma;
    let mut ll = 0.0;
    let mut ub = DVector::zeros(y.len());
    let mut ug = DVector::zeros(y.len());
    for i in 0..y.len() {
        let mu = eb[i].exp();
        let pi = logistic(eg[i]);
        if y[i] == 0.0 {
            let e = (-mu).exp();
            let p0 = pi + (1.0 - pi) * e;
            ll += p0.ln();
            ug[i] = pi * (1.0 - pi) * (1.0 - e) / p0;
            ub[i] = -(1.0 - pi) * mu * e / p0;
        } else {
            ll += crate::link::Link::Logit.log_sf(eg[i]) + y[i] * eb[i] - mu - ln_factorial(y[i] as usize);
            ug[i] = -pi;
            ub[i] = y[i] - mu;
        }
    }
    let mut score = DVector::zeros(2 * k);
    score.rows_mut(0, k).copy_from(&(z.transpose() * ub));
    score.rows_mut(k, k).copy_from(&(z.transpose() * ug));
    (ll, score)
}

/// Zero-inflated Poisson by EM: logit model for structural zeros, Poisson
/// for the at-risk part, both on the full covariate vector.
pub fn fit_zip(data: &CountDataset) -> Result<BaselineFit> {
    check(data)?;
    let z = design_with_intercept(&data.covariates);
    let y = outcomes_f64(data);
    let k = z.ncols();
    let n = y.len();
    let count_names = labels("", &data.column_names);
    let zero_names = labels("zero:", &data.column_names);

    let pois = glm_fit(&z, &y, None, Family::Poisson, poisson_start(&y, k), &tight())?;
    let mut beta = pois.params.clone();
    let zeros = y.iter().filter(|&&v| v == 0.0).count();
    if zeros == 0 {
        let cov_b = covariance_excluding(&pois.information, &[])?;
        let mut covariance = DMatrix::zeros(2 * k, 2 * k);
        covariance.view_mut((0, 0), (k, k)).copy_from(&cov_b);
        return Ok(BaselineFit {
            kind: BaselineKind::Zip,
            encoding: data.encoding.clone(),
            column_names: data.column_names.clone(),
            beta: beta.iter().copied().collect(),
            gamma: Some(vec![0.0; k]),
            nu: None,
            covariance,
            loglik: pois.value,
            converged: pois.converged,
            iterations: pois.iterations,
            flags: BaselineFlags {
                zero_degenerate: true,
                ..Default::default()
            },
        });
    }

    let mean_p0: f64 = (&z * &beta).iter().map(|e| (-e.exp()).exp()).sum::<f64>() / n as f64;
    let excess = ((zeros as f64 / n as f64 - mean_p0) / (1.0 - mean_p0)).clamp(0.01, 0.9);
    let mut gamma = DVector::zeros(k);
    gamma[0] = (excess / (1.0 - excess)).ln();

    let inner = Controls {
        max_iter: 50,
        rel_tol: 1e-12,
        grad_tol: 1e-8,
        max_halvings: 30,
    };
    let mut ll_old = zip_loglik_score(&z, &y, &beta, &gamma).0;
    let mut converged = false;
    let mut iterations = 0;
    let mut post = vec![0.0; n];
    let mut at_risk = vec![0.0; n];
    while iterations < 10_000 {
        iterations += 1;
        let eb = &z * &beta;
        let eg = &z * &gamma;
        for i in 0..n {
            post[i] = if y[i] == 0.0 {
                let pi = logistic(eg[i]);
                let e = (-eb[i].exp()).exp();
                pi / (pi + (1.0 - pi) * e)
            } else {
                0.0
            };
            at_risk[i] = 1.0 - post[i];
        }
        gamma = glm_fit(&z, &post, None, Family::Logistic, gamma.clone(), &inner)?.params;
        beta = glm_fit(&z, &y, Some(&at_risk), Family::Poisson, beta.clone(), &inner)?.params;
        let ll = zip_loglik_score(&z, &y, &beta, &gamma).0;
        if (ll - ll_old).abs() < 1e-8 {
            ll_old = ll;
            converged = true;
            break;
        }
        ll_old = ll;
    }

    // observed information by central differences of the analytic score
    let mut theta = DVector::zeros(2 * k);
    theta.rows_mut(0, k).copy_from(&beta);
    theta.rows_mut(k, k).copy_from(&gamma);
    let score_at = |t: &DVector<f64>| {
        let b = t.rows(0, k).into_owned();
        let g = t.rows(k, k).into_owned();
        zip_loglik_score(&z, &y, &b, &g).1
    };
    let mut info = DMatrix::zeros(2 * k, 2 * k);
    for j in 0..2 * k {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[j] += h;
        dn[j] -= h;
        let col = (score_at(&dn) - score_at(&up)) / (2.0 * h);
        info.set_column(j, &col);
    }
    let info = (&info + info.transpose()) * 0.5;

    let max_pi = (&z * &gamma).iter().map(|&e| logistic(e)).fold(0.0f64, f64::max);
    let zero_degenerate = max_pi < 1e-4;
    let mut drop: Vec<usize> = Vec::new();
    let mut divergent = Vec::new();
    for j in 0..k {
        if beta[j].abs() > 10.0 && j > 0 {
            drop.push(j);
            divergent.push(count_names[j].clone());
        }
        if zero_degenerate || gamma[j].abs() > 10.0 {
            drop.push(k + j);
            if !zero_degenerate {
                divergent.push(zero_names[j].clone());
            }
        }
    }
    let covariance = covariance_excluding(&info, &drop)?;
    Ok(BaselineFit {
        kind: BaselineKind::Zip,
        encoding: data.encoding.clone(),
        column_names: data.column_names.clone(),
        beta: beta.iter().copied().collect(),
        gamma: Some(gamma.iter().copied().collect()),
        nu: None,
        covariance,
        loglik: ll_old,
        converged,
        iterations,
        flags: BaselineFlags {
            divergent,
            zero_degenerate,
            ..Default::default()
        },
    })
}

/// Hurdle model: logit for `Y > 0`, zero-truncated Poisson for positives.
/// The two parts are fitted independently.
pub fn fit_hurdle(data: &CountDataset) -> Result<BaselineFit> {
    check(data)?;
    let z = design_with_intercept(&data.covariates);
    let y = outcomes_f64(data);
    let k = z.ncols();
    let count_names = labels("", &data.column_names);
    let zero_names = labels("zero:", &data.column_names);
    let positive: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let mut flags = BaselineFlags::default();
    let mut covariance = DMatrix::zeros(2 * k, 2 * k);
    let mut loglik = 0.0;
    let mut converged = true;
    let mut iterations = 0;

    let crossed: Vec<f64> = y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let gamma = if positive.len() == y.len() || positive.is_empty() {
        flags.zero_degenerate = positive.len() == y.len();
        vec![0.0; k]
    } else {
        let out = glm_fit(&z, &crossed, None, Family::Logistic, DVector::zeros(k), &tight())?;
        let div = divergent_coefficients(&out);
        flags.divergent.extend(div.iter().map(|&i| zero_names[i].clone()));
        let cov = covariance_excluding(&out.information, &div)?;
        covariance.view_mut((k, k), (k, k)).copy_from(&cov);
        loglik += out.value;
        converged &= out.converged;
        iterations += out.iterations;
        out.params.iter().copied().collect()
    };

    let beta = if positive.is_empty() {
        flags.count_degenerate = true;
        vec![0.0; k]
    } else {
        let zp = z.select_rows(&positive);
        let yp: Vec<f64> = positive.iter().map(|&i| y[i]).collect();
        let out = glm_fit(&zp, &yp, None, Family::TruncatedPoisson, poisson_start(&yp, k), &tight())?;
        let div = divergent_coefficients(&out);
        flags.divergent.extend(div.iter().map(|&i| count_names[i].clone()));
        let cov = covariance_excluding(&out.information, &div)?;
        covariance.view_mut((0, 0), (k, k)).copy_from(&cov);
        loglik += out.value;
        converged &= out.converged;
        iterations += out.iterations;
        out.params.iter().copied().collect()
    };

    Ok(BaselineFit {
        kind: BaselineKind::Hurdle,
        encoding: data.encoding.clone(),
        column_names: data.column_names.clone(),
        beta,
        gamma: Some(gamma),
        nu: None,
        covariance,
        loglik,
        converged,
        iterations,
        flags,
    })
}

pub fn fit_baseline(kind: BaselineKind, data: &CountDataset) -> Result<BaselineFit> {
    match kind {
        BaselineKind::Poisson => fit_poisson(data),
        BaselineKind::NegBin => fit_negbin(data),
        BaselineKind::Zip => fit_zip(data),
        BaselineKind::Hurdle => fit_hurdle(data),
    }
}

pub fn poisson_pmf(r: usize, mu: f64) -> f64 {
    if mu == 0.0 {
        return if r == 0 { 1.0 } else { 0.0 };
    }
    (r as f64 * mu.ln() - mu - ln_factorial(r)).exp()
}

/// NB pmf with mean `mu` and dispersion `nu` (variance `mu + mu^2 / nu`).
pub fn negbin_pmf(r: usize, mu: f64, nu: f64) -> f64 {
    let lp = ln_rising(nu, r) - ln_factorial(r) + r as f64 * (mu / (mu + nu)).ln() + nu * (nu / (mu + nu)).ln();
    lp.exp()
}

/// ZIP pmf with structural-zero probability `pi`.
pub fn zip_pmf(r: usize, pi: f64, mu: f64) -> f64 {
    let base = (1.0 - pi) * poisson_pmf(r, mu);
    if r == 0 {
        pi + base
    } else {
        base
    }
}

/// Hurdle pmf with `P(Y > 0) = p_positive` and a zero-truncated Poisson(`mu`)
/// above the hurdle.
pub fn hurdle_pmf(r: usize, p_positive: f64, mu: f64) -> f64 {
    if r == 0 {
        1.0 - p_positive
    } else {
        p_positive * poisson_pmf(r, mu) / -(-mu).exp_m1()
    }
}

impl BaselineFit {
    fn count_labels(&self) -> Vec<String> {
        labels("", &self.column_names)
    }

    fn zero_labels(&self) -> Vec<String> {
        labels("zero:", &self.column_names)
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        if let Some(i) = self.count_labels().iter().position(|l| l == label) {
            return Some(self.beta[i]);
        }
        let g = self.gamma.as_ref()?;
        self.zero_labels().iter().position(|l| l == label).map(|i| g[i])
    }

    fn param_index(&self, label: &str) -> Option<usize> {
        let k = self.beta.len();
        if let Some(i) = self.count_labels().iter().position(|l| l == label) {
            return Some(i);
        }
        self.gamma.as_ref()?;
        self.zero_labels().iter().position(|l| l == label).map(|i| k + i)
    }

    pub fn std_error(&self, label: &str) -> Option<f64> {
        let i = self.param_index(label)?;
        if self.flags.divergent.iter().any(|d| d == label) {
            return None;
        }
        if self.gamma.is_some() && i >= self.beta.len() && self.flags.zero_degenerate {
            return None;
        }
        let v = self.covariance[(i, i)];
        (v > 0.0).then(|| v.sqrt())
    }

    pub fn summarize(&self) -> CoefficientTable {
        let mut rows: Vec<CoefRow> = self
            .count_labels()
            .into_iter()
            .zip(&self.beta)
            .map(|(l, &b)| {
                let se = self.std_error(&l);
                CoefRow::new(l, b, se)
            })
            .collect();
        if let Some(g) = &self.gamma {
            for (l, &v) in self.zero_labels().into_iter().zip(g) {
                let se = self.std_error(&l);
                rows.push(CoefRow::new(l, v, se));
            }
        }
        if let Some(nu) = self.nu {
            let k = self.beta.len();
            let v = self.covariance[(k, k)];
            rows.push(CoefRow::new("log(nu)", nu.ln(), (v > 0.0).then(|| v.sqrt())));
        }
        CoefficientTable { rows }
    }

    /// Count-part means and zero-part linear predictors for covariate rows.
    fn linear_parts(&self, covariates: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if covariates.ncols() != self.column_names.len() {
            return Err(Error::Dimension {
                expected: self.column_names.len(),
                got: covariates.ncols(),
            });
        }
        let z = design_with_intercept(covariates);
        let mu: Vec<f64> = (&z * DVector::from_column_slice(&self.beta)).iter().map(|e| e.exp()).collect();
        let zero = match &self.gamma {
            Some(g) => (&z * DVector::from_column_slice(g)).iter().copied().collect(),
            None => vec![f64::NEG_INFINITY; z.nrows()],
        };
        Ok((mu, zero))
    }

    /// Probability of count `r` given the count mean and zero-part predictor.
    fn pmf_at(&self, r: usize, mu: f64, zero_eta: f64) -> f64 {
        match self.kind {
            BaselineKind::Poisson => poisson_pmf(r, mu),
            BaselineKind::NegBin => negbin_pmf(r, mu, self.nu.unwrap_or(f64::INFINITY)),
            BaselineKind::Zip => {
                let pi = if self.flags.zero_degenerate { 0.0 } else { logistic(zero_eta) };
                zip_pmf(r, pi, mu)
            }
            BaselineKind::Hurdle => {
                if self.flags.count_degenerate {
                    return if r == 0 { 1.0 } else { 0.0 };
                }
                if self.flags.zero_degenerate {
                    return hurdle_pmf(r, 1.0, mu);
                }
                // P(Y = 0) from the complementary predictor keeps precision near 1
                if r == 0 {
                    logistic(-zero_eta)
                } else {
                    hurdle_pmf(r, logistic(zero_eta), mu)
                }
            }
        }
    }
}

/// Predictive pmfs on `{0, ..., M}` with the tail mass at `M`.
pub fn predict_pmf_baseline(fit: &BaselineFit, covariates: &DMatrix<f64>, max_category: usize) -> Result<PredictedDistribution> {
    let (mu, zero) = fit.linear_parts(covariates)?;
    let pmf = mu
        .iter()
        .zip(&zero)
        .map(|(&m, &z)| truncate_with_tail(max_category, |r| fit.pmf_at(r, m, z)))
        .collect();
    Ok(PredictedDistribution { pmf })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poisson_intercept_is_log_mean() {
        let d = CountDataset::intercept_only(vec![3, 5, 7, 4, 6]);
        let f = fit_poisson(&d).unwrap();
        assert_abs_diff_eq!(f.beta[0], 5f64.ln(), epsilon = 1e-8);
        assert!(f.converged);
    }

    #[test]
    fn all_zero_counts_flag_divergence() {
        let d = CountDataset::intercept_only(vec![0; 6]);
        let f = fit_poisson(&d).unwrap();
        assert!(f.beta[0] < -10.0);
        assert_eq!(f.flags.divergent, vec!["(Intercept)".to_string()]);
    }

    #[test]
    fn closed_form_pmfs() {
        assert_abs_diff_eq!(poisson_pmf(0, 1.0), (-1f64).exp(), epsilon = 1e-15);
        let s: f64 = (1..200).map(|r| hurdle_pmf(r, 1.0, 3.3)).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        for r in 0..30 {
            let parent = poisson_pmf(r, 2.2);
            let p_pos = 1.0 - poisson_pmf(0, 2.2);
            assert_abs_diff_eq!(hurdle_pmf(r, p_pos, 2.2), parent, epsilon = 1e-14);
            assert_abs_diff_eq!(negbin_pmf(r, 2.2, 1e9), parent, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(zip_pmf(0, 0.3, 4.0), 0.3 + 0.7 * (-4f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn zip_without_zeros_is_degenerate() {
        let d = CountDataset::intercept_only(vec![1, 2, 3, 2, 1]);
        assert!(fit_zip(&d).unwrap().flags.zero_degenerate);
    }

    #[test]
    fn hurdle_degenerate_parts() {
        assert!(fit_hurdle(&CountDataset::intercept_only(vec![1, 2, 3])).unwrap().flags.zero_degenerate);
        let f = fit_hurdle(&CountDataset::intercept_only(vec![0, 0, 0])).unwrap();
        assert!(f.flags.count_degenerate);
        let p = predict_pmf_baseline(&f, &DMatrix::zeros(1, 0), 5).unwrap();
        assert_eq!(p.pmf[0][0], 1.0);
    }

    #[test]
    fn pmfs_normalized() {
        let x = DMatrix::from_fn(40, 1, |i, _| (i as f64 * 0.3).sin());
        let y: Vec<usize> = (0..40).map(|i| [0, 0, 1, 3, 2, 5, 0, 8][i % 8]).collect();
        let d = CountDataset::new(y, x.clone(), vec!["x".into()]).unwrap();
        for kind in [BaselineKind::Poisson, BaselineKind::NegBin, BaselineKind::Zip, BaselineKind::Hurdle] {
            let f = fit_baseline(kind, &d).unwrap();
            let p = predict_pmf_baseline(&f, &x, 12).unwrap();
            for row in &p.pmf {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }
}
