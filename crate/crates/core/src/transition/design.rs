//! Parameter layout of a transition model and the sparse rows of its
//! augmented-data design.

use nalgebra::{DMatrix, DVector};

use super::{Smoother, TransitionSpec, Variant, VaryingSet};
use crate::basis::{difference_penalty, theta_penalty, BSplineBasis};
use crate::data::CountDataset;
use crate::error::{Error, Result};
use crate::link::Link;

/// Which categories a term contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    /// the first transition only (`s = 0`)
    ZeroOnly,
    /// every transition after the first (`s >= 1`)
    FromOne,
}

impl Scope {
    fn covers(self, s: usize) -> bool {
        match self {
            Scope::All => true,
            Scope::ZeroOnly => s == 0,
            Scope::FromOne => s >= 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TermKind {
    /// One free intercept per category in scope.
    ThetaFree(Scope),
    /// Intercepts as a B-spline expansion over categories.
    ThetaBasis(Scope),
    /// Single intercept of the first transition.
    ZeroIntercept,
    /// Category-constant effects of the listed covariates.
    Linear { columns: Vec<usize>, scope: Scope },
    /// Effect of one covariate expanded in the B-spline basis.
    Varying { column: usize },
}

#[derive(Debug, Clone)]
pub struct Term {
    pub kind: TermKind,
    pub offset: usize,
    pub len: usize,
    pub labels: Vec<String>,
    /// Unscaled penalty and its smoothing parameter.
    pub penalty: Option<(DMatrix<f64>, f64)>,
}

/// Maps a category and covariate row to the sparse design row of one record.
#[derive(Debug, Clone)]
pub struct Layout {
    pub terms: Vec<Term>,
    pub dim: usize,
    pub max_category: usize,
    pub basis: Option<BSplineBasis>,
    pub link: Link,
    /// basis rows for categories 0..=M
    basis_rows: Vec<(usize, Vec<f64>)>,
}

/// Default number of basis functions: `min(20, M + 1)`.
pub fn default_num_basis(max_category: usize) -> usize {
    20.min(max_category + 1)
}

/// Integer closest to `1.2 * M_max` (at least `max(M_max, 1)`).
pub fn default_max_category(max_observed: usize) -> usize {
    let m = (1.2 * max_observed as f64).round() as usize;
    m.max(max_observed).max(1)
}

impl Layout {
    pub fn new(spec: &TransitionSpec, column_names: &[String], max_category: usize) -> Result<Layout> {
        let p = column_names.len();
        let upper = max_category;
        let mut terms: Vec<Term> = Vec::new();
        let mut offset = 0;
        let mut push = |kind: TermKind, labels: Vec<String>, penalty: Option<(DMatrix<f64>, f64)>| {
            let len = labels.len();
            terms.push(Term {
                kind,
                offset,
                len,
                labels,
                penalty,
            });
            offset += len;
        };

        let (num_basis, degree, order) = match spec.smoother {
            Smoother::PSplines {
                num_basis,
                degree,
                order,
            } => (num_basis, degree, order),
            Smoother::ThetaQuadratic => (None, 3, 1),
        };
        let needs_basis = matches!(spec.smoother, Smoother::PSplines { .. })
            || matches!(&spec.variant, Variant::Varying(v) if !v.columns(column_names)?.is_empty());
        let basis = if needs_basis {
            let m = num_basis.unwrap_or_else(|| default_num_basis(upper));
            if m < 2 {
                return Err(Error::InvalidArgument("B-spline smoothing needs at least M = 1".into()));
            }
            let degree = degree.min(m - 1);
            Some(BSplineBasis::new(upper, m, degree)?)
        } else {
            None
        };
        let coef_penalty = |m: usize| -> Result<Option<DMatrix<f64>>> {
            if order >= m {
                Ok(None)
            } else {
                Ok(Some(difference_penalty(m, order)?.matrix))
            }
        };
        let lambda = spec.lambda;

        let zero_split = matches!(spec.variant, Variant::ZeroSplit);
        let theta_scope = if zero_split { Scope::FromOne } else { Scope::All };
        if zero_split {
            push(TermKind::ZeroIntercept, vec!["zero:theta[0]".into()], None);
        }
        match spec.smoother {
            Smoother::ThetaQuadratic => {
                let first = if zero_split { 1 } else { 0 };
                let labels: Vec<String> = (first..=upper).map(|r| format!("theta[{r}]")).collect();
                let n = labels.len();
                let pen = if n >= 2 {
                    Some((theta_penalty(n - 1)?.matrix, lambda))
                } else {
                    None
                };
                push(TermKind::ThetaFree(theta_scope), labels, pen);
            }
            Smoother::PSplines { .. } => {
                let m = basis.as_ref().expect("basis built").num_basis();
                let labels = (1..=m).map(|k| format!("gamma[{k}]")).collect();
                let pen = coef_penalty(m)?.map(|p| (p, lambda));
                push(TermKind::ThetaBasis(theta_scope), labels, pen);
            }
        }

        match &spec.variant {
            Variant::Basic => {
                if p > 0 {
                    push(
                        TermKind::Linear {
                            columns: (0..p).collect(),
                            scope: Scope::All,
                        },
                        column_names.to_vec(),
                        None,
                    );
                }
            }
            Variant::ZeroSplit => {
                if p > 0 {
                    push(
                        TermKind::Linear {
                            columns: (0..p).collect(),
                            scope: Scope::ZeroOnly,
                        },
                        column_names.iter().map(|c| format!("zero:{c}")).collect(),
                        None,
                    );
                    push(
                        TermKind::Linear {
                            columns: (0..p).collect(),
                            scope: Scope::FromOne,
                        },
                        column_names.to_vec(),
                        None,
                    );
                }
            }
            Variant::Varying(v) => {
                let varying = v.columns(column_names)?;
                let fixed: Vec<usize> = (0..p).filter(|j| !varying.contains(j)).collect();
                if !fixed.is_empty() {
                    let labels = fixed.iter().map(|&j| column_names[j].clone()).collect();
                    push(
                        TermKind::Linear {
                            columns: fixed,
                            scope: Scope::All,
                        },
                        labels,
                        None,
                    );
                }
                for &j in &varying {
                    let m = basis.as_ref().expect("basis built").num_basis();
                    let name = &column_names[j];
                    let lam = v.lambda_overrides.get(name).copied().unwrap_or(lambda);
                    if lam < 0.0 || !lam.is_finite() {
                        return Err(Error::InvalidArgument(format!("invalid smoothing parameter {lam} for {name}")));
                    }
                    let labels = (1..=m).map(|k| format!("{name}[{k}]")).collect();
                    let pen = coef_penalty(m)?.map(|p| (p, lam));
                    push(TermKind::Varying { column: j }, labels, pen);
                }
            }
        }

        let basis_rows = match &basis {
            Some(b) => (0..=upper)
                .map(|r| b.eval_nonzero(r as f64))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Layout {
            terms,
            dim: offset,
            max_category: upper,
            basis,
            link: spec.link,
            basis_rows,
        })
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().flat_map(|t| t.labels.iter().cloned()).collect()
    }

    /// Append the nonzero entries of the design row for category `s` and
    /// covariates `x`.
    pub fn row(&self, s: usize, x: &[f64], out: &mut Vec<(usize, f64)>) {
        debug_assert!(s <= self.max_category);
        for term in &self.terms {
            match &term.kind {
                TermKind::ThetaFree(scope) => {
                    if scope.covers(s) {
                        let idx = if *scope == Scope::FromOne { s - 1 } else { s };
                        out.push((term.offset + idx, 1.0));
                    }
                }
                TermKind::ThetaBasis(scope) => {
                    if scope.covers(s) {
                        let (first, vals) = &self.basis_rows[s];
                        for (k, &v) in vals.iter().enumerate() {
                            if v != 0.0 {
                                out.push((term.offset + first + k, v));
                            }
                        }
                    }
                }
                TermKind::ZeroIntercept => {
                    if s == 0 {
                        out.push((term.offset, 1.0));
                    }
                }
                TermKind::Linear { columns, scope } => {
                    if scope.covers(s) {
                        for (k, &j) in columns.iter().enumerate() {
                            out.push((term.offset + k, x[j]));
                        }
                    }
                }
                TermKind::Varying { column } => {
                    let xv = x[*column];
                    let (first, vals) = &self.basis_rows[s];
                    for (k, &v) in vals.iter().enumerate() {
                        if v != 0.0 {
                            out.push((term.offset + first + k, xv * v));
                        }
                    }
                }
            }
        }
    }

    /// Linear predictor for category `s`.
    pub fn eta(&self, params: &[f64], s: usize, x: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(32);
        self.row(s, x, &mut row);
        row.iter().map(|&(c, v)| params[c] * v).sum()
    }

    /// Block-diagonal penalty with smoothing parameters applied.
    pub fn penalty(&self) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.dim, self.dim);
        for term in &self.terms {
            if let Some((mat, lam)) = &term.penalty {
                if *lam != 0.0 {
                    p.view_mut((term.offset, term.offset), (term.len, term.len))
                        .copy_from(&(mat * *lam));
                }
            }
        }
        p
    }

    /// Unpenalized intercept values `theta_0..=theta_M` implied by `params`.
    pub fn theta(&self, params: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.max_category + 1];
        for term in &self.terms {
            match &term.kind {
                TermKind::ThetaFree(scope) => {
                    for (k, v) in params[term.offset..term.offset + term.len].iter().enumerate() {
                        let r = if *scope == Scope::FromOne { k + 1 } else { k };
                        theta[r] = *v;
                    }
                }
                TermKind::ThetaBasis(scope) => {
                    for (r, th) in theta.iter_mut().enumerate() {
                        if scope.covers(r) {
                            let (first, vals) = &self.basis_rows[r];
                            *th = vals
                                .iter()
                                .enumerate()
                                .map(|(k, v)| v * params[term.offset + first + k])
                                .sum();
                        }
                    }
                }
                TermKind::ZeroIntercept => theta[0] = params[term.offset],
                _ => {}
            }
        }
        theta
    }

    /// Starting values: intercepts from clamped empirical hazards, effects 0.
    pub fn initial_params(&self, outcomes: &[usize]) -> DVector<f64> {
        let upper = self.max_category;
        let mut at_risk = vec![0usize; upper + 2];
        let mut stopped = vec![0usize; upper + 2];
        for &y in outcomes {
            let y = y.min(upper);
            stopped[y] += 1;
            for r in at_risk.iter_mut().take(y + 1) {
                *r += 1;
            }
        }
        let mut theta = Vec::with_capacity(upper + 1);
        let mut last = 0.5;
        for r in 0..=upper {
            if at_risk[r] > 0 {
                last = (1.0 - stopped[r] as f64 / at_risk[r] as f64).clamp(0.01, 0.99);
            }
            theta.push(self.link.quantile(last));
        }
        let mut start = DVector::zeros(self.dim);
        for term in &self.terms {
            match &term.kind {
                TermKind::ThetaFree(scope) => {
                    for k in 0..term.len {
                        let r = if *scope == Scope::FromOne { k + 1 } else { k };
                        start[term.offset + k] = theta[r];
                    }
                }
                TermKind::ZeroIntercept => start[term.offset] = theta[0],
                TermKind::ThetaBasis(scope) => {
                    // ridge-stabilized least squares of the basis onto theta
                    let m = term.len;
                    let mut btb = DMatrix::<f64>::identity(m, m) * 1e-6;
                    let mut bty = DVector::<f64>::zeros(m);
                    for (r, th) in theta.iter().enumerate() {
                        if !scope.covers(r) {
                            continue;
                        }
                        let (first, vals) = &self.basis_rows[r];
                        for (a, va) in vals.iter().enumerate() {
                            bty[first + a] += va * th;
                            for (b, vb) in vals.iter().enumerate() {
                                btb[(first + a, first + b)] += va * vb;
                            }
                        }
                    }
                    let g = crate::newton::solve_psd(&btb, &bty);
                    start.rows_mut(term.offset, m).copy_from(&g);
                }
                _ => {}
            }
        }
        start
    }

    /// Parameter indices belonging to the first-transition part.
    pub fn zero_part(&self) -> Vec<usize> {
        self.terms
            .iter()
            .filter(|t| {
                matches!(
                    t.kind,
                    TermKind::ZeroIntercept
                        | TermKind::Linear {
                            scope: Scope::ZeroOnly,
                            ..
                        }
                )
            })
            .flat_map(|t| t.offset..t.offset + t.len)
            .collect()
    }
}

impl VaryingSet {
    pub(crate) fn resolve(&self, column_names: &[String]) -> Result<Vec<usize>> {
        match self {
            VaryingSet::All => Ok((0..column_names.len()).collect()),
            VaryingSet::Only(names) => names
                .iter()
                .map(|n| {
                    column_names
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::MissingColumn(n.clone()))
                })
                .collect(),
        }
    }
}

/// Compressed sparse rows of the augmented design.
#[derive(Debug, Clone, Default)]
pub struct SparseRows {
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRows {
    pub fn nrows(&self) -> usize {
        self.ptr.len().saturating_sub(1)
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.ptr[r], self.ptr[r + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }

    pub fn dot(&self, r: usize, params: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&c, &v)| params[c] * v).sum()
    }

    pub(crate) fn build(layout: &Layout, data: &CountDataset, records: &[crate::data::TransitionRecord]) -> SparseRows {
        let mut rows = SparseRows {
            ptr: Vec::with_capacity(records.len() + 1),
            ..Default::default()
        };
        rows.ptr.push(0);
        let mut buf = Vec::with_capacity(64);
        let p = data.p();
        let mut x = vec![0.0; p];
        let mut current = usize::MAX;
        for rec in records {
            if rec.obs != current {
                current = rec.obs;
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj = data.covariates[(rec.obs, j)];
                }
            }
            buf.clear();
            layout.row(rec.category, &x, &mut buf);
            for &(c, v) in &buf {
                rows.idx.push(c);
                rows.val.push(v);
            }
            rows.ptr.push(rows.idx.len());
        }
        rows
    }
}
