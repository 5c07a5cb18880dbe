//! B-spline bases over count categories and difference penalties.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamped B-spline basis on `[0, upper]` with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    degree: usize,
    num_basis: usize,
    upper: f64,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(upper: usize, num_basis: usize, degree: usize) -> Result<Self> {
        if num_basis < degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "{num_basis} basis functions are too few for degree {degree} (need at least {})",
                degree + 1
            )));
        }
        if upper == 0 {
            return Err(Error::InvalidArgument("basis range [0, 0] is empty".into()));
        }
        let upper_f = upper as f64;
        let segments = num_basis - degree;
        let mut knots = Vec::with_capacity(num_basis + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for j in 1..segments {
            knots.push(upper_f * j as f64 / segments as f64);
        }
        knots.extend(std::iter::repeat_n(upper_f, degree + 1));
        Ok(BSplineBasis {
            degree,
            num_basis,
            upper: upper_f,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.num_basis
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span(&self, x: f64) -> usize {
        let k = self.degree;
        let last = self.num_basis - 1;
        if x >= self.upper {
            return last;
        }
        // largest mu in [k, last] with knots[mu] <= x
        let mut lo = k;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Nonzero basis values at `x`: returns the index of the first nonzero
    /// function and the `degree + 1` values starting there.
    pub fn eval_nonzero(&self, x: f64) -> Result<(usize, Vec<f64>)> {
        if !(0.0..=self.upper).contains(&x) {
            return Err(Error::InvalidArgument(format!(
                "{x} lies outside the basis range [0, {}]",
                self.upper
            )));
        }
        let k = self.degree;
        let mu = self.span(x);
        let t = &self.knots;
        let mut n = vec![0.0; k + 1];
        let mut left = vec![0.0; k + 1];
        let mut right = vec![0.0; k + 1];
        n[0] = 1.0;
        for j in 1..=k {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((mu - k, n))
    }

    /// Full basis vector at `x`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        let (first, vals) = self.eval_nonzero(x)?;
        let mut out = vec![0.0; self.num_basis];
        out[first..first + vals.len()].copy_from_slice(&vals);
        Ok(out)
    }
}

/// Basis matrix with one row per point.
pub fn bspline_matrix(upper: usize, num_basis: usize, degree: usize, points: &[usize]) -> Result<DMatrix<f64>> {
    let basis = BSplineBasis::new(upper, num_basis, degree)?;
    let mut out = DMatrix::zeros(points.len(), num_basis);
    for (row, &r) in points.iter().enumerate() {
        if r > upper {
            return Err(Error::InvalidArgument(format!("point {r} exceeds upper bound {upper}")));
        }
        let (first, vals) = basis.eval_nonzero(r as f64)?;
        for (k, v) in vals.into_iter().enumerate() {
            out[(row, first + k)] = v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    ThetaDifference,
    CoefDifference,
}

/// Symmetric PSD penalty `D^T D` for a difference operator `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub matrix: DMatrix<f64>,
    pub order: usize,
    pub kind: PenaltyKind,
}

impl PenaltyMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }
}

/// `d`-th order difference operator as a `(q - d) x q` matrix.
pub fn difference_operator(q: usize, d: usize) -> DMatrix<f64> {
    let mut op = DMatrix::<f64>::identity(q, q);
    for _ in 0..d {
        let rows = op.nrows() - 1;
        op = DMatrix::from_fn(rows, q, |i, j| op[(i + 1, j)] - op[(i, j)]);
    }
    op
}

pub fn difference_penalty(q: usize, d: usize) -> Result<PenaltyMatrix> {
    if d == 0 || d >= q {
        return Err(Error::InvalidArgument(format!(
            "difference order {d} needs 1 <= d < q = {q}"
        )));
    }
    let op = difference_operator(q, d);
    Ok(PenaltyMatrix {
        matrix: op.transpose() * op,
        order: d,
        kind: PenaltyKind::CoefDifference,
    })
}

/// First-order difference penalty on the intercepts `theta_0..=theta_M`,
/// summed over adjacent pairs `s = 1..=M`.
pub fn theta_penalty(upper: usize) -> Result<PenaltyMatrix> {
    if upper == 0 {
        return Err(Error::InvalidArgument("theta penalty needs M >= 1".into()));
    }
    let op = difference_operator(upper + 1, 1);
    Ok(PenaltyMatrix {
        matrix: op.transpose() * op,
        order: 1,
        kind: PenaltyKind::ThetaDifference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook Cox-de Boor recursion, `0/0 = 0`, right-continuous except at
    /// the final knot.
    fn cox_de_boor(t: &[f64], i: usize, k: usize, x: f64, upper: f64) -> f64 {
        if k == 0 {
            let last_nonempty = t[i] < t[i + 1] && t[i + 1] == upper;
            return if (t[i] <= x && x < t[i + 1]) || (last_nonempty && x == upper) {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = t[i + k] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * cox_de_boor(t, i, k - 1, x, upper);
        }
        let d2 = t[i + k + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + k + 1] - x) / d2 * cox_de_boor(t, i + 1, k - 1, x, upper);
        }
        v
    }

    #[test]
    fn degree_zero_is_indicator() {
        let m = bspline_matrix(5, 6, 0, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(m, DMatrix::identity(6, 6));
    }

    #[test]
    fn cubic_matches_recursive_definition() {
        let basis = BSplineBasis::new(36, 20, 3).unwrap();
        let pts: Vec<usize> = (0..=36).collect();
        let mat = bspline_matrix(36, 20, 3, &pts).unwrap();
        for (row, &r) in pts.iter().enumerate() {
            for k in 0..20 {
                let oracle = cox_de_boor(basis.knots(), k, 3, r as f64, 36.0);
                assert_abs_diff_eq!(mat[(row, k)], oracle, epsilon = 1e-10);
            }
            assert_abs_diff_eq!(mat.row(row).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn too_few_functions_for_degree() {
        assert!(BSplineBasis::new(10, 3, 3).is_err());
        assert!(bspline_matrix(10, 5, 3, &[11]).is_err());
    }

    #[test]
    fn no_extrapolation() {
        let b = BSplineBasis::new(10, 8, 3).unwrap();
        assert!(b.eval(10.5).is_err());
        assert!(b.eval(-0.1).is_err());
    }

    #[test]
    fn difference_penalty_hand_values() {
        let p = difference_penalty(3, 1).unwrap();
        assert_abs_diff_eq!(p.quadratic_form(&[1.0, 2.0, 4.0]), 5.0, epsilon = 1e-12);
        let p = difference_penalty(4, 1).unwrap();
        assert_abs_diff_eq!(p.quadratic_form(&[3.0; 4]), 0.0, epsilon = 1e-12);
        let p = difference_penalty(4, 2).unwrap();
        assert_abs_diff_eq!(p.quadratic_form(&[0.0, 1.0, 2.0, 3.0]), 0.0, epsilon = 1e-12);
        assert!(difference_penalty(3, 3).is_err());
    }

    #[test]
    fn theta_penalty_hand_values() {
        let p = theta_penalty(2).unwrap();
        assert_abs_diff_eq!(p.quadratic_form(&[1.0, 1.0, 1.0]), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.quadratic_form(&[0.0, 1.0, 3.0]), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn null_space_dimension_equals_order() {
        for d in 1..=2 {
            let p = difference_penalty(12, d).unwrap();
            let eig = p.matrix.clone().symmetric_eigen();
            let zeros = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-9).count();
            assert_eq!(zeros, d);
            assert!(eig.eigenvalues.iter().all(|&v| v > -1e-10));
            assert_eq!(p.matrix, p.matrix.transpose());
        }
    }

    #[test]
    fn constant_function_coefficients_are_unpenalized() {
        // partition of unity: gamma = c reproduces the constant c
        let p = difference_penalty(20, 1).unwrap();
        assert_abs_diff_eq!(p.quadratic_form(&[0.7; 20]), 0.0, epsilon = 1e-12);
    }
}
