use nalgebra::{DMatrix, DVector};

use super::design::{default_max_category, Layout, SparseRows, TermKind};
use super::{StdErrorKind, TransitionSpec, Variant, VaryingSpec};
use crate::data::{augment, max_observed, AugmentedDataset, CountDataset, Encoding};
use crate::error::{Error, Result};
use crate::newton::{divergent_coefficients, inverse_spd, maximize, Controls, Derivatives, Objective};
use crate::summary::{CoefRow, CoefficientTable};

/// A transition model bound to its augmented data: evaluates the binary
/// log-likelihood, its derivatives and the penalty.
#[derive(Debug, Clone)]
pub struct TransitionProblem<'a> {
    pub layout: Layout,
    pub data: &'a CountDataset,
    rows: SparseRows,
    transitions: Vec<bool>,
    obs: Vec<usize>,
    penalty: DMatrix<f64>,
}

fn resolve_max_category(data: &CountDataset, spec: &TransitionSpec) -> Result<usize> {
    let observed = max_observed(data)?;
    match spec.max_category {
        Some(m) if m < observed => Err(Error::InvalidArgument(format!(
            "largest category M = {m} is below the largest observed count {observed}"
        ))),
        Some(m) if m == 0 => Err(Error::InvalidArgument("M must be at least 1".into())),
        Some(m) => Ok(m),
        None => Ok(default_max_category(observed)),
    }
}

impl<'a> TransitionProblem<'a> {
    pub fn new(data: &'a CountDataset, spec: &TransitionSpec) -> Result<Self> {
        Self::from_augmented(&augment(data, true), spec)
    }

    pub fn from_augmented(augmented: &AugmentedDataset<'a>, spec: &TransitionSpec) -> Result<Self> {
        spec.validate()?;
        let data = augmented.data;
        let max_category = resolve_max_category(data, spec)?;
        let names: &[String] = if augmented.include_covariates {
            &data.column_names
        } else {
            &[]
        };
        let layout = Layout::new(spec, names, max_category)?;
        let rows = SparseRows::build(&layout, data, &augmented.records);
        let penalty = layout.penalty();
        Ok(TransitionProblem {
            layout,
            data,
            rows,
            transitions: augmented.records.iter().map(|r| r.transition).collect(),
            obs: augmented.records.iter().map(|r| r.obs).collect(),
            penalty,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    fn check(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Sum of binary log-likelihood terms over the augmented records.
    pub fn loglik_binary(&self, params: &[f64]) -> Result<f64> {
        self.check(params)?;
        let link = self.layout.link;
        let mut ll = 0.0;
        for (r, &y) in self.transitions.iter().enumerate() {
            let eta = self.rows.dot(r, params);
            if !eta.is_finite() {
                return Err(Error::NonFinite(r));
            }
            ll += link.loglik(y, eta);
        }
        Ok(ll)
    }

    /// `sum_i log pi_{i, Y_i}` with `pi` from the product of transition
    /// probabilities.
    pub fn loglik_direct(&self, params: &[f64]) -> Result<f64> {
        self.check(params)?;
        let link = self.layout.link;
        let mut ll = 0.0;
        for i in 0..self.data.n() {
            let x = self.data.row(i);
            let y = self.data.outcomes[i];
            let mut prob = 1.0;
            let mut log_fallback = 0.0;
            for s in 0..=y {
                let eta = self.layout.eta(params, s, &x);
                if !eta.is_finite() {
                    return Err(Error::NonFinite(i));
                }
                let factor = if s < y { link.cdf(eta) } else { link.log_sf(eta).exp() };
                prob *= factor;
                log_fallback += link.loglik(s < y, eta);
            }
            ll += if prob > 1e-300 { prob.ln() } else { log_fallback };
        }
        Ok(ll)
    }

    pub fn penalty_value(&self, params: &[f64]) -> f64 {
        let a = DVector::from_column_slice(params);
        (a.transpose() * &self.penalty * &a)[(0, 0)]
    }

    pub fn penalized_loglik(&self, params: &[f64]) -> Result<f64> {
        Ok(self.loglik_binary(params)? - self.penalty_value(params))
    }

    fn accumulate(&self, params: &[f64], with_info: bool) -> Result<Derivatives> {
        self.check(params)?;
        let q = self.dim();
        let link = self.layout.link;
        let mut ll = 0.0;
        let mut grad = vec![0.0; q];
        let mut info = if with_info { vec![0.0; q * q] } else { Vec::new() };
        for (r, &y) in self.transitions.iter().enumerate() {
            let (idx, val) = self.rows.row(r);
            let eta: f64 = idx.iter().zip(val).map(|(&c, &v)| params[c] * v).sum();
            if !eta.is_finite() {
                return Err(Error::NonFinite(r));
            }
            ll += link.loglik(y, eta);
            let st = link.score_terms(y, eta);
            for (&c, &v) in idx.iter().zip(val) {
                grad[c] += st.score * v;
            }
            if with_info && st.weight > 0.0 {
                for (a, (&ca, &va)) in idx.iter().zip(val).enumerate() {
                    let wa = st.weight * va;
                    for (&cb, &vb) in idx[a..].iter().zip(&val[a..]) {
                        info[ca * q + cb] += wa * vb;
                    }
                }
            }
        }
        let a = DVector::from_column_slice(params);
        let pa = &self.penalty * &a;
        let value = ll - a.dot(&pa);
        let gradient = DVector::from_vec(grad) - pa * 2.0;
        let information = if with_info {
            let mut m = DMatrix::from_row_slice(q, q, &info);
            // only one triangle was filled, per sparse column order
            for i in 0..q {
                for j in (i + 1)..q {
                    let s = m[(i, j)] + m[(j, i)];
                    m[(i, j)] = s;
                    m[(j, i)] = s;
                }
            }
            m + &self.penalty * 2.0
        } else {
            DMatrix::zeros(0, 0)
        };
        Ok(Derivatives {
            value,
            gradient,
            information,
        })
    }

    /// Gradient of the penalized log-likelihood.
    pub fn gradient(&self, params: &[f64]) -> Result<DVector<f64>> {
        Ok(self.accumulate(params, false)?.gradient)
    }

    /// Expected information of the penalized log-likelihood.
    pub fn penalized_information(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.accumulate(params, true)?.information)
    }

    /// Outer product of per-observation (unpenalized) scores.
    fn score_outer_product(&self, params: &[f64]) -> DMatrix<f64> {
        let q = self.dim();
        let link = self.layout.link;
        let mut meat = DMatrix::zeros(q, q);
        let mut g = DVector::zeros(q);
        let mut current = usize::MAX;
        let flush = |g: &mut DVector<f64>, meat: &mut DMatrix<f64>| {
            meat.ger(1.0, g, g, 1.0);
            g.fill(0.0);
        };
        for (r, &y) in self.transitions.iter().enumerate() {
            if self.obs[r] != current {
                if current != usize::MAX {
                    flush(&mut g, &mut meat);
                }
                current = self.obs[r];
            }
            let (idx, val) = self.rows.row(r);
            let eta: f64 = idx.iter().zip(val).map(|(&c, &v)| params[c] * v).sum();
            let u = link.score_terms(y, eta).score;
            for (&c, &v) in idx.iter().zip(val) {
                g[c] += u * v;
            }
        }
        if current != usize::MAX {
            flush(&mut g, &mut meat);
        }
        meat
    }
}

impl Objective for TransitionProblem<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn value(&self, params: &DVector<f64>) -> Result<f64> {
        self.penalized_loglik(params.as_slice())
    }

    fn derivatives(&self, params: &DVector<f64>) -> Result<Derivatives> {
        self.accumulate(params.as_slice(), true)
    }
}

/// Binary-model log-likelihood of the augmented data.
pub fn loglik_binary(params: &[f64], augmented: &AugmentedDataset<'_>, spec: &TransitionSpec) -> Result<f64> {
    TransitionProblem::from_augmented(augmented, spec)?.loglik_binary(params)
}

/// Log-likelihood through the product form of the count probabilities.
pub fn loglik_direct(params: &[f64], data: &CountDataset, spec: &TransitionSpec) -> Result<f64> {
    TransitionProblem::new(data, spec)?.loglik_direct(params)
}

pub fn gradient(params: &[f64], augmented: &AugmentedDataset<'_>, spec: &TransitionSpec) -> Result<DVector<f64>> {
    TransitionProblem::from_augmented(augmented, spec)?.gradient(params)
}

pub fn penalized_information(
    params: &[f64],
    augmented: &AugmentedDataset<'_>,
    spec: &TransitionSpec,
) -> Result<DMatrix<f64>> {
    TransitionProblem::from_augmented(augmented, spec)?.penalized_information(params)
}

/// Estimated transition model.
#[derive(Debug, Clone)]
pub struct FittedTransitionModel {
    pub spec: TransitionSpec,
    pub encoding: Encoding,
    pub column_names: Vec<String>,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub labels: Vec<String>,
    pub covariance: DMatrix<f64>,
    pub lambda_used: f64,
    pub loglik: f64,
    pub penalized_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Effective degrees of freedom `tr(H^-1 F)` over non-separated parameters.
    pub edf: f64,
    /// Coefficients running off to infinity, or without any information;
    /// their standard errors are suppressed.
    pub separated: Vec<bool>,
    /// Zero-split fit on data without zeros: the first-transition part carries no information.
    pub degenerate_zero_part: bool,
}

fn check_covariates(data: &CountDataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::EmptyData);
    }
    if let Some(name) = data.constant_columns().into_iter().next() {
        return Err(Error::ZeroVariance(name));
    }
    Ok(())
}

/// Penalized maximum-likelihood fit by Fisher scoring on the augmented data.
pub fn fit(data: &CountDataset, spec: &TransitionSpec) -> Result<FittedTransitionModel> {
    check_covariates(data)?;
    let problem = TransitionProblem::new(data, spec)?;
    let start = problem.layout.initial_params(&data.outcomes);
    let controls = Controls {
        max_iter: spec.max_iter,
        rel_tol: spec.tol,
        grad_tol: spec.grad_tol,
        max_halvings: 30,
    };
    let out = maximize(&problem, start, &controls)?;
    let q = problem.dim();
    let mut separated = vec![false; q];
    for i in divergent_coefficients(&out) {
        separated[i] = true;
    }
    let degenerate_zero_part = matches!(spec.variant, Variant::ZeroSplit) && !data.outcomes.contains(&0);
    if degenerate_zero_part {
        for i in problem.layout.zero_part() {
            separated[i] = true;
        }
    }

    // parameters without information (categories no observation reaches, unpenalized)
    let scale = out.information.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..q {
        if out.information[(i, i)] <= 1e-12 * (1.0 + scale) {
            separated[i] = true;
        }
    }
    let keep: Vec<usize> = (0..q).filter(|&i| !separated[i]).collect();
    let sub_info = out.information.select_rows(&keep).select_columns(&keep);
    let sub_inv = inverse_spd(&sub_info)?;
    let sub_pen = (problem.penalty.select_rows(&keep).select_columns(&keep)) * 2.0;
    let edf = keep.len() as f64 - (&sub_inv * sub_pen).trace();
    let sub_cov = match spec.std_errors {
        StdErrorKind::Model => sub_inv,
        StdErrorKind::Sandwich => {
            let meat = problem.score_outer_product(out.params.as_slice());
            let meat = meat.select_rows(&keep).select_columns(&keep);
            &sub_inv * meat * &sub_inv
        }
    };
    let mut covariance = DMatrix::zeros(q, q);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            covariance[(i, j)] = sub_cov[(a, b)];
        }
    }

    let params: Vec<f64> = out.params.iter().copied().collect();
    let loglik = problem.loglik_binary(&params)?;
    Ok(FittedTransitionModel {
        spec: spec.clone(),
        encoding: data.encoding.clone(),
        column_names: data.column_names.clone(),
        labels: problem.layout.labels(),
        layout: problem.layout,
        params,
        covariance,
        lambda_used: spec.lambda,
        loglik,
        penalized_loglik: out.value,
        converged: out.converged,
        iterations: out.iterations,
        gradient_norm: out.gradient_norm(),
        edf,
        separated,
        degenerate_zero_part,
    })
}

/// Fit with a separate coefficient vector for the first transition.
pub fn fit_zero_split(data: &CountDataset, spec: &TransitionSpec) -> Result<FittedTransitionModel> {
    fit(data, &spec.clone().with_variant(Variant::ZeroSplit))
}

/// Fit with category-varying effects for the covariates selected in `varying`.
pub fn fit_varying(data: &CountDataset, spec: &TransitionSpec, varying: VaryingSpec) -> Result<FittedTransitionModel> {
    fit(data, &spec.clone().with_variant(Variant::Varying(varying)))
}

impl FittedTransitionModel {
    /// Rebuild from stored parts (the layout is derived, not stored).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        spec: TransitionSpec,
        encoding: Encoding,
        column_names: Vec<String>,
        max_category: usize,
        params: Vec<f64>,
        covariance: DMatrix<f64>,
        diagnostics: (f64, f64, bool, usize, f64, f64),
        separated: Vec<bool>,
        degenerate_zero_part: bool,
    ) -> Result<Self> {
        let layout = Layout::new(&spec, &column_names, max_category)?;
        if params.len() != layout.dim || separated.len() != layout.dim || covariance.nrows() != layout.dim {
            return Err(Error::Dimension {
                expected: layout.dim,
                got: params.len(),
            });
        }
        let (loglik, penalized_loglik, converged, iterations, gradient_norm, edf) = diagnostics;
        Ok(FittedTransitionModel {
            lambda_used: spec.lambda,
            spec,
            encoding,
            column_names,
            labels: layout.labels(),
            layout,
            params,
            covariance,
            loglik,
            penalized_loglik,
            converged,
            iterations,
            gradient_norm,
            edf,
            separated,
            degenerate_zero_part,
        })
    }

    /// `-2 loglik + 2 edf`.
    pub fn aic(&self) -> f64 {
        -2.0 * self.loglik + 2.0 * self.edf
    }

    pub fn max_category(&self) -> usize {
        self.layout.max_category
    }

    /// Intercepts `theta_0..=theta_M`.
    pub fn theta(&self) -> Vec<f64> {
        self.layout.theta(&self.params)
    }

    fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.index(label).map(|i| self.params[i])
    }

    /// Standard error; `None` for unknown labels and separated coefficients.
    pub fn std_error(&self, label: &str) -> Option<f64> {
        let i = self.index(label)?;
        if self.separated[i] {
            None
        } else {
            Some(self.covariance[(i, i)].max(0.0).sqrt())
        }
    }

    pub fn is_separated(&self, label: &str) -> bool {
        self.index(label).is_some_and(|i| self.separated[i])
    }

    /// Effect of covariate `name` at each category `0..=M`: constant for a
    /// fixed effect, the smooth curve for a varying one. For zero-split fits
    /// category 0 uses the first-transition coefficient.
    pub fn effect_curve(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_names.iter().position(|c| c == name)?;
        let p = self.column_names.len();
        let mut x = vec![0.0; p];
        x[j] = 1.0;
        let zero = vec![0.0; p];
        Some(
            (0..=self.max_category())
                .map(|r| self.layout.eta(&self.params, r, &x) - self.layout.eta(&self.params, r, &zero))
                .collect(),
        )
    }

    /// Coefficient table for the category-constant effects (and the
    /// first-transition intercept of zero-split fits).
    pub fn summarize(&self) -> CoefficientTable {
        let mut rows = Vec::new();
        for term in &self.layout.terms {
            if !matches!(term.kind, TermKind::Linear { .. } | TermKind::ZeroIntercept) {
                continue;
            }
            for (k, label) in term.labels.iter().enumerate() {
                let i = term.offset + k;
                rows.push(CoefRow::new(label.clone(), self.params[i], self.std_error(label)));
            }
        }
        CoefficientTable { rows }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Smoother;
    use super::*;
    use crate::link::Link;
    use approx::assert_abs_diff_eq;

    fn toy() -> CountDataset {
        let y = vec![0, 1, 3, 2, 0, 5, 1, 2, 4, 0, 1, 1];
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { (i % 2) as f64 } else { (i as f64 * 0.37).sin() });
        CountDataset::new(y, x, vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn hand_values() {
        let d = CountDataset::intercept_only(vec![0]);
        let spec = TransitionSpec::theta_quadratic(0.0).with_max_category(1);
        let ll = loglik_binary(&[0.0, 0.0], &augment(&d, true), &spec).unwrap();
        assert_abs_diff_eq!(ll, 0.5f64.ln(), epsilon = 1e-12);

        let d = CountDataset::intercept_only(vec![1]);
        let ll = loglik_direct(&[0.0, 0.0], &d, &spec).unwrap();
        assert_abs_diff_eq!(ll, 0.25f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn dimension_checked() {
        let d = toy();
        let spec = TransitionSpec::psplines(1.0);
        assert!(matches!(
            loglik_binary(&[0.0; 3], &augment(&d, true), &spec),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_eta_reported() {
        let d = CountDataset::intercept_only(vec![1]);
        let spec = TransitionSpec::theta_quadratic(0.0).with_max_category(1);
        assert!(matches!(
            loglik_binary(&[f64::NAN, 0.0], &augment(&d, true), &spec),
            Err(Error::NonFinite(0))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences_all_variants() {
        let d = toy();
        let variants = [
            Variant::Basic,
            Variant::ZeroSplit,
            Variant::Varying(VaryingSpec::only(&["b"])),
        ];
        for link in [Link::Logit, Link::Cloglog] {
            for smoother in [Smoother::ThetaQuadratic, Smoother::psplines()] {
                for variant in variants.iter().cloned() {
                    let spec = TransitionSpec {
                        link,
                        smoother,
                        lambda: 0.7,
                        ..Default::default()
                    }
                    .with_variant(variant);
                    let prob = TransitionProblem::new(&d, &spec).unwrap();
                    let params: Vec<f64> = (0..prob.dim()).map(|k| 0.3 * ((k as f64) * 1.3).cos()).collect();
                    let g = prob.gradient(&params).unwrap();
                    let h = 1e-5;
                    for k in 0..params.len() {
                        let mut up = params.clone();
                        let mut dn = params.clone();
                        up[k] += h;
                        dn[k] -= h;
                        let fd = (prob.penalized_loglik(&up).unwrap() - prob.penalized_loglik(&dn).unwrap()) / (2.0 * h);
                        let scale = g[k].abs().max(1e-3);
                        assert!((fd - g[k]).abs() / scale < 1e-6, "{link:?} {k}: {fd} vs {}", g[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn varying_with_no_flags_equals_basic() {
        let d = toy();
        let spec = TransitionSpec::psplines(2.0);
        let a = fit(&d, &spec).unwrap();
        let b = fit_varying(&d, &spec, VaryingSpec::only(&[])).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn zero_variance_covariate_rejected() {
        let x = DMatrix::from_element(4, 1, 2.0);
        let d = CountDataset::new(vec![0, 1, 2, 1], x, vec!["c".into()]).unwrap();
        assert!(matches!(
            fit(&d, &TransitionSpec::psplines(1.0)),
            Err(Error::ZeroVariance(name)) if name == "c"
        ));
    }

    #[test]
    fn zero_split_without_zeros_is_degenerate() {
        let d = CountDataset::new(
            vec![1, 2, 3, 1, 2, 4, 2, 1],
            DMatrix::from_fn(8, 1, |i, _| (i % 3) as f64),
            vec!["x".into()],
        )
        .unwrap();
        let m = fit_zero_split(&d, &TransitionSpec::psplines(1.0)).unwrap();
        assert!(m.degenerate_zero_part);
        assert!(m.std_error("zero:x").is_none());
        assert!(m.std_error("x").is_some());
    }

    #[test]
    fn covariance_symmetric_psd() {
        let d = toy();
        let m = fit(&d, &TransitionSpec::psplines(1.0)).unwrap();
        assert!(m.converged);
        let c = &m.covariance;
        assert!((c - c.transpose()).abs().max() < 1e-12);
        let eig = c.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-8));
        assert!(m.gradient_norm <= 1e-6);
    }
}
