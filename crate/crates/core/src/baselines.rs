//! Closed-form DIGing stepsize and rate for jointly connected networks.
//!
//! ```text
//! J     = 3 kappa B^2 (1 + 4 sqrt(n kappa))
//! alpha = 1.5 (sqrt(J^2 - (1 - delta^2) J) - delta J)^2 / (m J (J + 1)^2)
//! rho   = (1 - alpha m / 1.5)^(1 / 2B)
//! ```
//!
//! `delta` is taken to be the joint spectral gap `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DELTA_NOTE: &str = "delta identified with sigma";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub j: f64,
    pub alpha: f64,
    pub rho: f64,
    pub n: usize,
    pub vacuous: bool,
}

fn check(m: f64, l: f64, n: usize, horizon: usize, sigma: f64) -> Result<()> {
    if !(m > 0.0 && l >= m && l.is_finite()) {
        return Err(Error::Domain(format!("need 0 < m <= L, got m = {m}, L = {l}")));
    }
    if n == 0 || horizon == 0 {
        return Err(Error::Domain(format!("need n >= 1 and B >= 1, got n = {n}, B = {horizon}")));
    }
    if !(0.0..1.0).contains(&sigma) {
        return Err(Error::Domain(format!("spectral gap must lie in [0, 1), got {sigma}")));
    }
    Ok(())
}

/// `(1 - alpha m / 1.5)^(1/2B)`, or `None` when the base is outside `(0, 1)`.
pub fn baseline_rate_given_alpha(alpha: f64, m: f64, horizon: usize) -> Option<f64> {
    let base = 1.0 - alpha * m / 1.5;
    if alpha > 0.0 && base > 0.0 && base < 1.0 {
        Some(base.powf(1.0 / (2.0 * horizon as f64)))
    } else {
        None
    }
}

pub fn baseline_stepsize(m: f64, l: f64, n: usize, horizon: usize, sigma: f64) -> Result<BaselineResult> {
    check(m, l, n, horizon, sigma)?;
    let kappa = l / m;
    let b = horizon as f64;
    let j = 3.0 * kappa * b * b * (1.0 + 4.0 * (n as f64 * kappa).sqrt());
    let disc = j * j - (1.0 - sigma * sigma) * j;
    if disc < 0.0 {
        return Ok(BaselineResult { j, alpha: f64::NAN, rho: f64::NAN, n, vacuous: true });
    }
    let root = disc.sqrt() - sigma * j;
    let alpha = 1.5 * root * root / (m * j * (j + 1.0) * (j + 1.0));
    Ok(match baseline_rate_given_alpha(alpha, m, horizon) {
        Some(rho) => BaselineResult { j, alpha, rho, n, vacuous: false },
        None => BaselineResult { j, alpha, rho: f64::NAN, n, vacuous: true },
    })
}

/// The baseline guarantee evaluated at a given stepsize: vacuous when the
/// stepsize exceeds the admissible one or the rate formula breaks down.
pub fn baseline_bound_at(alpha: f64, m: f64, l: f64, n: usize, horizon: usize, sigma: f64) -> Result<BaselineResult> {
    let admissible = baseline_stepsize(m, l, n, horizon, sigma)?;
    let rho = baseline_rate_given_alpha(alpha, m, horizon);
    let vacuous = admissible.vacuous || !(alpha <= admissible.alpha) || rho.is_none();
    Ok(BaselineResult { j: admissible.j, alpha, rho: if vacuous { f64::NAN } else { rho.unwrap() }, n, vacuous })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_point() {
        // High-precision reference values.
        let r = baseline_stepsize(1.0, 10.0, 2, 1, 0.05).unwrap();
        assert!((r.j - 566.656_314_599_949_5).abs() < 1e-10);
        assert!((r.alpha - 0.002_376_193_432_057_508).abs() < 1e-15);
        assert!((r.rho - 0.999_207_621_590_875_8).abs() < 1e-14);
        assert!(!r.vacuous);
    }

    #[test]
    fn rate_given_alpha() {
        assert!((baseline_rate_given_alpha(0.15, 1.0, 1).unwrap() - 0.9f64.sqrt()).abs() < 1e-15);
        assert_eq!(baseline_rate_given_alpha(1.5, 1.0, 1), None);
        assert_eq!(baseline_rate_given_alpha(2.0, 1.0, 3), None);
        assert_eq!(baseline_rate_given_alpha(0.0, 1.0, 1), None);
    }

    #[test]
    fn increasing_in_n_and_b() {
        let mut prev = 0.0;
        for n in [2, 5, 10, 100, 1000] {
            let r = baseline_stepsize(1.0, 10.0, n, 2, 0.4).unwrap();
            assert!(r.rho > prev);
            prev = r.rho;
        }
        let mut prev = 0.0;
        for b in 1..=5 {
            let r = baseline_stepsize(1.0, 10.0, 4, b, 0.4).unwrap();
            assert!(r.rho > prev);
            prev = r.rho;
        }
    }

    #[test]
    fn limits() {
        let near_one = baseline_stepsize(1.0, 10.0, 2, 1, 0.999999).unwrap();
        let mid = baseline_stepsize(1.0, 10.0, 2, 1, 0.5).unwrap();
        assert!(near_one.rho > mid.rho && near_one.rho < 1.0);
        let huge = baseline_stepsize(1.0, 10.0, 1_000_000_000, 1, 0.5).unwrap();
        assert!(huge.alpha < 1e-7 && huge.rho > 1.0 - 1e-7);
    }

    #[test]
    fn large_stepsizes_are_vacuous() {
        assert!(baseline_bound_at(0.02, 1.0, 10.0, 2, 1, 0.05).unwrap().vacuous);
        let admissible = baseline_stepsize(1.0, 10.0, 2, 1, 0.05).unwrap();
        let at = baseline_bound_at(admissible.alpha, 1.0, 10.0, 2, 1, 0.05).unwrap();
        assert!(!at.vacuous);
        assert_eq!(at.rho, admissible.rho);
    }

    #[test]
    fn domain_errors() {
        assert!(baseline_stepsize(0.0, 1.0, 2, 1, 0.1).is_err());
        assert!(baseline_stepsize(1.0, 0.5, 2, 1, 0.1).is_err());
        assert!(baseline_stepsize(1.0, 2.0, 0, 1, 0.1).is_err());
        assert!(baseline_stepsize(1.0, 2.0, 2, 1, 1.0).is_err());
    }
}
