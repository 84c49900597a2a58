//! Gaussian / surrogate-support overlap: the probability mass of a
//! N(mu, sigma^2) distribution inside [-gamma, gamma], with closed-form
//! gradients in mu and sigma.

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Error function.
///
/// Uses the scaled Maclaurin series
/// erf(x) = (2/sqrt(pi)) e^{-x^2} sum_{n>=0} 2^n x^{2n+1} / (2n+1)!!,
/// whose terms are all positive, so the evaluation is numerically stable.
/// For |x| > 6 the result is +-1 to well below f64 resolution. Absolute
/// error is far inside the 1.5e-7 budget; odd by construction.
pub fn erf(x: f64) -> f64 {
    if x.abs() > 6.0 {
        return if x > 0.0 { 1.0 } else { -1.0 };
    }
    let two_over_sqrt_pi = 2.0 / std::f64::consts::PI.sqrt();
    let mut term = x;
    let mut sum = term;
    let mut n = 0u32;
    loop {
        n += 1;
        term *= 2.0 * x * x / (2.0 * n as f64 + 1.0);
        let prev = sum;
        sum += term;
        if sum == prev || n > 400 {
            break;
        }
    }
    two_over_sqrt_pi * (-x * x).exp() * sum
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal PDF.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapResult {
    pub omega: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
}

/// Overlap of N(mu, sigma^2) with [-gamma, gamma] plus its gradients:
///
/// omega   = Phi((mu+gamma)/sigma) - Phi((mu-gamma)/sigma)
/// d_mu    = [p(mu+/sigma) - p(mu-/sigma)] / sigma
/// d_sigma = [-mu+ p(mu+/sigma) + mu- p(mu-/sigma)] / sigma^2
///
/// with mu+ = mu + gamma, mu- = mu - gamma and p the standard normal pdf.
pub fn overlap(mu: f64, sigma: f64, gamma: f64) -> Result<OverlapResult> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArg(format!("overlap: sigma must be > 0, got {}", sigma)));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArg(format!("overlap: gamma must be > 0, got {}", gamma)));
    }
    let mu_p = mu + gamma;
    let mu_m = mu - gamma;
    let omega = normal_cdf(mu_p / sigma) - normal_cdf(mu_m / sigma);
    let p_p = normal_pdf(mu_p / sigma);
    let p_m = normal_pdf(mu_m / sigma);
    let d_mu = (p_p - p_m) / sigma;
    let d_sigma = (-mu_p * p_p + mu_m * p_m) / (sigma * sigma);
    Ok(OverlapResult {
        omega,
        d_mu,
        d_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: the Abramowitz-Stegun 7.1.26 rational
    /// approximation, accurate to 1.5e-7 absolute.
    fn erf_rational(x: f64) -> f64 {
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let x = x.abs();
        let t = 1.0 / (1.0 + 0.327_591_1 * x);
        let poly = t
            * (0.254_829_592
                + t * (-0.284_496_736
                    + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
        sign * (1.0 - poly * (-x * x).exp())
    }

    #[test]
    fn erf_zero_and_limits() {
        assert_eq!(erf(0.0), 0.0);
        assert!((erf(6.0) - 1.0).abs() < 1e-7);
        assert!((erf(-6.0) + 1.0).abs() < 1e-7);
        assert_eq!(erf(100.0), 1.0);
    }

    #[test]
    fn erf_is_odd_exactly() {
        for &x in &[0.1, 0.5, 1.3, 2.7, 4.0] {
            assert_eq!(erf(-x), -erf(x));
        }
    }

    #[test]
    fn erf_reference_values() {
        // frozen high-precision table values
        assert!((erf(0.5) - 0.520_499_877_813_046_5).abs() < 1e-14);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-14);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 1e-14);
        assert!((erf(3.0) - 0.999_977_909_503_001_4).abs() < 1e-14);
    }

    #[test]
    fn erf_agrees_with_rational_oracle() {
        let mut x = -6.0;
        while x <= 6.0 {
            assert!(
                (erf(x) - erf_rational(x)).abs() <= 1.5e-7,
                "x={} err={}",
                x,
                (erf(x) - erf_rational(x)).abs()
            );
            x += 0.01;
        }
    }

    #[test]
    fn overlap_standard_case() {
        // mass of N(0,1) in [-1,1]
        let r = overlap(0.0, 1.0, 1.0).unwrap();
        assert!((r.omega - 0.682_689).abs() < 1e-6);
    }

    #[test]
    fn overlap_symmetric_mu_has_zero_dmu() {
        for &(sigma, gamma) in &[(0.3, 0.5), (1.0, 1.0), (2.5, 2.0)] {
            let r = overlap(0.0, sigma, gamma).unwrap();
            assert_eq!(r.d_mu, 0.0);
        }
    }

    #[test]
    fn overlap_dsigma_closed_form_point() {
        // mu=0, sigma=1, gamma=1: d_sigma = -2 * phi(1)
        let r = overlap(0.0, 1.0, 1.0).unwrap();
        let want = -2.0 * normal_pdf(1.0);
        assert!((r.d_sigma - want).abs() < 1e-12);
        assert!((want + 0.483_941).abs() < 1e-6);
    }

    #[test]
    fn overlap_symmetry_in_mu() {
        for &mu in &[0.25, 0.8, 1.9] {
            let a = overlap(mu, 0.7, 1.0).unwrap();
            let b = overlap(-mu, 0.7, 1.0).unwrap();
            assert!((a.omega - b.omega).abs() < 1e-14);
            assert!((a.d_mu + b.d_mu).abs() < 1e-14);
        }
    }

    #[test]
    fn overlap_decreasing_in_abs_mu() {
        for &sigma in &[0.2, 1.0, 3.0] {
            let mut last = f64::INFINITY;
            let mut mu = 0.0;
            while mu <= 4.0 {
                let r = overlap(mu, sigma, 1.0).unwrap();
                // strictly decreasing until the tails underflow
                assert!(r.omega < last || (r.omega <= last && r.omega < 1e-12));
                last = r.omega;
                mu += 0.25;
            }
        }
    }

    #[test]
    fn overlap_rejects_bad_sigma() {
        assert!(overlap(0.0, 0.0, 1.0).is_err());
        assert!(overlap(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        let mut mu = -2.0;
        while mu <= 2.0 {
            for &sigma in &[0.2, 0.5, 1.0, 2.0, 3.0] {
                for &gamma in &[0.5, 1.0, 2.0] {
                    let r = overlap(mu, sigma, gamma).unwrap();
                    let fd_mu = (overlap(mu + h, sigma, gamma).unwrap().omega
                        - overlap(mu - h, sigma, gamma).unwrap().omega)
                        / (2.0 * h);
                    let fd_sigma = (overlap(mu, sigma + h, gamma).unwrap().omega
                        - overlap(mu, sigma - h, gamma).unwrap().omega)
                        / (2.0 * h);
                    let tol = |fd: f64| 1e-4 * fd.abs().max(1e-6);
                    assert!((r.d_mu - fd_mu).abs() <= tol(fd_mu).max(2e-6));
                    assert!((r.d_sigma - fd_sigma).abs() <= tol(fd_sigma).max(2e-6));
                }
            }
            mu += 0.25;
        }
    }
}
