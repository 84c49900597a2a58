//! Surrogate gradient functions for the spike nonlinearity.
//!
//! All families are parameterized by a width `gamma` and evaluated on the
//! shifted membrane potential `u_bar = u - v_th`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgFamily {
    Triangle,
    Rectangular,
    Sigmoid,
    SuperSpike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub family: SgFamily,
    pub gamma: f64,
}

impl SurrogateSpec {
    pub fn triangle(gamma: f64) -> SurrogateSpec {
        SurrogateSpec {
            family: SgFamily::Triangle,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArg(format!(
                "surrogate gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Surrogate derivative h(u_bar).
    pub fn grad(&self, u_bar: f64) -> f64 {
        let g = self.gamma;
        match self.family {
            SgFamily::Triangle => (g - u_bar.abs()).max(0.0) / (g * g),
            SgFamily::Rectangular => {
                if u_bar.abs() <= g {
                    1.0 / (2.0 * g)
                } else {
                    0.0
                }
            }
            SgFamily::Sigmoid => {
                let s = 1.0 / (1.0 + (-u_bar / g).exp());
                s * (1.0 - s) / g
            }
            SgFamily::SuperSpike => {
                let d = 1.0 + u_bar.abs() / g;
                1.0 / (d * d)
            }
        }
    }

    /// Half-width of the gradient-available interval.
    ///
    /// Triangle and rectangular have compact support [-gamma, gamma]. The
    /// smooth families use the interval where h exceeds 1% of its peak.
    pub fn support_halfwidth(&self) -> f64 {
        match self.family {
            SgFamily::Triangle | SgFamily::Rectangular => self.gamma,
            SgFamily::Sigmoid => {
                // solve s(1-s) = 0.0025, s = 1/(1+e^{-x/g})
                let s = (1.0 - (1.0_f64 - 0.01).sqrt()) / 2.0;
                self.gamma * ((1.0 - s) / s).ln()
            }
            SgFamily::SuperSpike => 9.0 * self.gamma,
        }
    }
}

/// Fraction of `u_bar` values inside the gradient-available interval.
///
/// Values near 0 indicate a degenerate regime (almost no element carries
/// gradient), values near 1 a saturated regime (every element does).
pub fn gradient_available_fraction(spec: &SurrogateSpec, u_bar: &[f64]) -> f64 {
    if u_bar.is_empty() {
        return 0.0;
    }
    let w = spec.support_halfwidth();
    let inside = u_bar.iter().filter(|v| v.abs() <= w).count();
    inside as f64 / u_bar.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MpdRegime {
    Degenerate,
    Saturated,
    Balanced,
}

/// Classify a channel's membrane distribution against the surrogate support.
pub fn classify_regime(fraction: f64, lo: f64, hi: f64) -> MpdRegime {
    if fraction < lo {
        MpdRegime::Degenerate
    } else if fraction > hi {
        MpdRegime::Saturated
    } else {
        MpdRegime::Balanced
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_peak() {
        let s = SurrogateSpec::triangle(1.0);
        assert_eq!(s.grad(0.0), 1.0);
    }

    #[test]
    fn triangle_outside_support() {
        let s = SurrogateSpec::triangle(1.0);
        assert_eq!(s.grad(1.5), 0.0);
        assert_eq!(s.grad(-1.5), 0.0);
    }

    #[test]
    fn triangle_hand_value() {
        // gamma=0.5, u=0.25: (1/0.25) * (0.5 - 0.25) = 1.0
        let s = SurrogateSpec::triangle(0.5);
        assert!((s.grad(0.25) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_integrates_to_one() {
        // trapezoid rule over [-2, 2]
        let s = SurrogateSpec::triangle(1.0);
        let n = 400_000;
        let (a, b) = (-2.0, 2.0);
        let h = (b - a) / n as f64;
        let mut acc = 0.5 * (s.grad(a) + s.grad(b));
        for i in 1..n {
            acc += s.grad(a + i as f64 * h);
        }
        acc *= h;
        assert!((acc - 1.0).abs() < 1e-6, "integral {}", acc);
    }

    #[test]
    fn rectangular_form() {
        let s = SurrogateSpec {
            family: SgFamily::Rectangular,
            gamma: 0.5,
        };
        assert_eq!(s.grad(0.0), 1.0);
        assert_eq!(s.grad(0.5), 1.0);
        assert_eq!(s.grad(0.51), 0.0);
    }

    #[test]
    fn sigmoid_peak_and_symmetry() {
        let s = SurrogateSpec {
            family: SgFamily::Sigmoid,
            gamma: 2.0,
        };
        assert!((s.grad(0.0) - 0.125).abs() < 1e-15);
        assert!((s.grad(0.7) - s.grad(-0.7)).abs() < 1e-15);
    }

    #[test]
    fn superspike_form() {
        let s = SurrogateSpec {
            family: SgFamily::SuperSpike,
            gamma: 1.0,
        };
        assert_eq!(s.grad(0.0), 1.0);
        assert!((s.grad(1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn smooth_support_is_one_percent_cut() {
        for family in [SgFamily::Sigmoid, SgFamily::SuperSpike] {
            let s = SurrogateSpec { family, gamma: 1.3 };
            let w = s.support_halfwidth();
            let peak = s.grad(0.0);
            assert!((s.grad(w) - 0.01 * peak).abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn fraction_in_unit_interval() {
        let s = SurrogateSpec::triangle(1.0);
        let vals = vec![-3.0, -0.5, 0.0, 0.5, 3.0];
        let f = gradient_available_fraction(&s, &vals);
        assert!((0.0..=1.0).contains(&f));
        assert_eq!(f, 0.6);
    }
}
