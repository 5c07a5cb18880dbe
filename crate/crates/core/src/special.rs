//! Gamma-family special functions not covered by `statrs`.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Second derivative of `ln Gamma`.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // asymptotic series in 1/x
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}

/// `ln Gamma(y + nu) - ln Gamma(nu)` for integer `y`, exact for large `nu`.
pub fn ln_rising(nu: f64, y: usize) -> f64 {
    if y <= 200 {
        (0..y).map(|k| (nu + k as f64).ln()).sum()
    } else {
        ln_gamma(nu + y as f64) - ln_gamma(nu)
    }
}

/// `ln(y!)`
pub fn ln_factorial(y: usize) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn trigamma_matches_digamma_derivative() {
        for &x in &[0.3f64, 1.0, 2.5, 7.0, 40.0, 1e4] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(trigamma(x), fd, max_relative = 1e-6);
        }
        assert_relative_eq!(trigamma(1.0), std::f64::consts::PI.powi(2) / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn rising_factorial() {
        assert_relative_eq!(ln_rising(2.5, 3), (2.5f64 * 3.5 * 4.5).ln(), max_relative = 1e-14);
        assert_relative_eq!(ln_rising(0.7, 250), ln_gamma(250.7) - ln_gamma(0.7), max_relative = 1e-10);
    }
}
