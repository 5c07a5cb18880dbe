//! Fisher scoring with step halving for concave (penalized) log-likelihoods.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative size of objective changes treated as floating-point noise.
pub const NOISE_FLOOR: f64 = 1e-11;

/// Objective to maximize. `information` is the (expected) negative Hessian.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, params: &DVector<f64>) -> Result<f64>;

    fn derivatives(&self, params: &DVector<f64>) -> Result<Derivatives>;
}

#[derive(Debug, Clone)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub max_iter: usize,
    /// relative change of the objective between accepted steps
    pub rel_tol: f64,
    /// Euclidean norm of the gradient
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            max_iter: 100,
            rel_tol: 1e-8,
            grad_tol: 1e-6,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub params: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub information: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last accepted step.
    pub last_step: DVector<f64>,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl Outcome {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.norm()
    }
}

/// Solve `a x = b` for symmetric PSD `a`, adding a growing ridge when the
/// Cholesky factorization fails.
pub fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut ridge = 1e-10 * scale;
    loop {
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return ch.solve(b);
        }
        ridge *= 10.0;
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let ch = sym.cholesky().ok_or(Error::SingularInformation)?;
    let inv = ch.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Ok((&inv + inv.transpose()) * 0.5)
    } else {
        Err(Error::SingularInformation)
    }
}

pub fn maximize<O: Objective + ?Sized>(obj: &O, start: DVector<f64>, controls: &Controls) -> Result<Outcome> {
    if start.len() != obj.dim() {
        return Err(Error::Dimension {
            expected: obj.dim(),
            got: start.len(),
        });
    }
    let mut params = start;
    let mut d = obj.derivatives(&params)?;
    let mut history = vec![d.value];
    let mut last_step = DVector::zeros(params.len());
    let mut rel_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < controls.max_iter {
        if d.gradient.norm() <= controls.grad_tol && rel_change <= controls.rel_tol {
            converged = true;
            break;
        }
        let step = solve_psd(&d.information, &d.gradient);
        let mut scale = 1.0;
        let mut accepted = None;
        // Below this predicted gain, objective differences are rounding noise
        // and the full scoring step is taken without the ascent test.
        let predicted_gain = 0.5 * d.gradient.dot(&step);
        if predicted_gain < NOISE_FLOOR * (1.0 + d.value.abs()) {
            let trial = &params + &step;
            if let Ok(v) = obj.value(&trial) {
                if v.is_finite() {
                    accepted = Some((trial, v));
                }
            }
        }
        for _ in 0..=controls.max_halvings {
            if accepted.is_some() {
                break;
            }
            let trial = &params + &step * scale;
            if let Ok(v) = obj.value(&trial) {
                if v.is_finite() && v >= d.value {
                    accepted = Some((trial, v));
                    break;
                }
            }
            scale *= 0.5;
        }
        iterations += 1;
        let Some((trial, v)) = accepted else {
            // no ascent along the scoring direction: at the optimum up to rounding
            converged = d.gradient.norm() <= controls.grad_tol;
            break;
        };
        rel_change = (v - d.value).abs() / (d.value.abs() + 1.0);
        last_step = &step * scale;
        params = trial;
        d = obj.derivatives(&params)?;
        history.push(d.value);
    }
    if !converged && iterations >= controls.max_iter {
        converged = d.gradient.norm() <= controls.grad_tol && rel_change <= controls.rel_tol;
    }
    Ok(Outcome {
        params,
        value: d.value,
        gradient: d.gradient,
        information: d.information,
        iterations,
        converged,
        last_step,
        history,
    })
}

/// Coefficients that are running off to infinity: large in magnitude and
/// still moving by more than 0.5 per iteration.
pub fn divergent_coefficients(outcome: &Outcome) -> Vec<usize> {
    outcome
        .params
        .iter()
        .zip(outcome.last_step.iter())
        .enumerate()
        .filter(|(_, (p, s))| p.abs() > 10.0 && s.abs() > 0.5 && p.signum() == s.signum())
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// concave quadratic with a known maximizer
    struct Quad {
        a: DMatrix<f64>,
        b: DVector<f64>,
    }

    impl Objective for Quad {
        fn dim(&self) -> usize {
            self.b.len()
        }
        fn value(&self, x: &DVector<f64>) -> Result<f64> {
            Ok(self.b.dot(x) - 0.5 * (x.transpose() * &self.a * x)[(0, 0)])
        }
        fn derivatives(&self, x: &DVector<f64>) -> Result<Derivatives> {
            Ok(Derivatives {
                value: self.value(x)?,
                gradient: &self.b - &self.a * x,
                information: self.a.clone(),
            })
        }
    }

    #[test]
    fn quadratic_in_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let q = Quad { a: a.clone(), b: b.clone() };
        let out = maximize(&q, DVector::zeros(2), &Controls::default()).unwrap();
        assert!(out.converged);
        let exact = a.cholesky().unwrap().solve(&b);
        assert!((out.params - exact).norm() < 1e-12);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0] - NOISE_FLOOR * (1.0 + w[0].abs())));
    }

    #[test]
    fn ridge_fallback_solves_singular_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_psd(&a, &DVector::from_vec(vec![2.0, 2.0]));
        assert!(x.iter().all(|v| v.is_finite()));
        assert!(inverse_spd(&a).is_err());
    }
}
