//! Exponential-family response distributions.
//!
//! Each family carries two inverse links: the canonical one, used to generate
//! data, and a "pivotal" one satisfying `{h'(x)}² = V(h(x))`, under which the
//! zero-thresholding statistic of the GLM lasso is the asymptotically pivotal
//! score `‖Xᵀ(y − ȳ1)‖ / √(N V(ȳ) a(φ))`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl GlmFamily {
    pub const ALL: [GlmFamily; 3] = [GlmFamily::Gaussian, GlmFamily::Bernoulli, GlmFamily::Poisson];

    pub fn name(self) -> &'static str {
        match self {
            GlmFamily::Gaussian => "gaussian",
            GlmFamily::Bernoulli => "bernoulli",
            GlmFamily::Poisson => "poisson",
        }
    }

    /// `V(μ)`.
    pub fn variance_fn(self, mu: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Bernoulli => mu * (1.0 - mu),
            GlmFamily::Poisson => mu,
        }
    }

    /// `a(φ)` for the families with known dispersion. The Gaussian dispersion
    /// `σ²` is a nuisance parameter and is estimated from the data instead.
    pub fn dispersion(self) -> Option<f64> {
        match self {
            GlmFamily::Gaussian => None,
            GlmFamily::Bernoulli | GlmFamily::Poisson => Some(1.0),
        }
    }

    /// Canonical inverse link `g⁻¹(η)`.
    pub fn canonical_inverse_link(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => eta,
            GlmFamily::Bernoulli => 1.0 / (1.0 + (-eta).exp()),
            GlmFamily::Poisson => eta.exp(),
        }
    }

    /// Domain of the pivotal inverse link.
    pub fn pivotal_domain(self) -> (f64, f64) {
        match self {
            GlmFamily::Gaussian => (f64::NEG_INFINITY, f64::INFINITY),
            GlmFamily::Bernoulli => (-FRAC_PI_2, FRAC_PI_2),
            GlmFamily::Poisson => (0.0, f64::INFINITY),
        }
    }

    fn check_pivotal_domain(self, x: f64) -> Result<()> {
        let (lo, hi) = self.pivotal_domain();
        if x.is_nan() || x < lo || x > hi {
            return Err(Error::DomainError(format!(
                "{x} is outside [{lo}, {hi}] for the {} pivotal link",
                self.name()
            )));
        }
        Ok(())
    }

    /// Pivotal inverse link `h(x)`: `x`, `x²/4` or `(sin x + 1)/2`.
    pub fn pivotal_inverse_link(self, x: f64) -> Result<f64> {
        self.check_pivotal_domain(x)?;
        Ok(match self {
            GlmFamily::Gaussian => x,
            GlmFamily::Poisson => x * x / 4.0,
            GlmFamily::Bernoulli => (x.sin() + 1.0) / 2.0,
        })
    }

    /// `h'(x)` of the pivotal inverse link.
    pub fn pivotal_inverse_link_derivative(self, x: f64) -> Result<f64> {
        self.check_pivotal_domain(x)?;
        Ok(match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Poisson => x / 2.0,
            GlmFamily::Bernoulli => x.cos() / 2.0,
        })
    }

    /// `ξ̂`, a null-consistent estimate of `var(Y)` from the response.
    /// Gaussian uses the unbiased sample variance.
    pub fn null_variance_estimator(self, y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        match self {
            GlmFamily::Gaussian => {
                if y.len() < 2 {
                    return 0.0;
                }
                y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
            }
            GlmFamily::Bernoulli | GlmFamily::Poisson => self.variance_fn(mean),
        }
    }

    /// Checks that every response lies in the family's support.
    pub fn check_support(self, y: &[f64]) -> Result<()> {
        let bad = y.iter().find(|&&v| match self {
            GlmFamily::Gaussian => !v.is_finite(),
            GlmFamily::Bernoulli => v != 0.0 && v != 1.0,
            GlmFamily::Poisson => !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()),
        });
        match bad {
            Some(v) => Err(Error::InvalidSpec(format!(
                "response value {v} is outside the {} support",
                self.name()
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GlmFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(GlmFamily::Gaussian),
            "bernoulli" | "binomial" => Ok(GlmFamily::Bernoulli),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(Error::InvalidSpec(format!("unknown family `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_links() {
        let p = GlmFamily::Bernoulli.canonical_inverse_link(-2.0);
        assert!((p - 1.0 / (1.0 + 2f64.exp())).abs() < 1e-15);
        assert!((GlmFamily::Poisson.canonical_inverse_link(-2.0) - (-2f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn pivotal_link_domains() {
        assert!(GlmFamily::Poisson.pivotal_inverse_link(-0.1).is_err());
        assert!(GlmFamily::Bernoulli.pivotal_inverse_link(2.0).is_err());
        assert!(GlmFamily::Gaussian.pivotal_inverse_link(-1e6).is_ok());
        assert_eq!(GlmFamily::Bernoulli.pivotal_inverse_link(FRAC_PI_2).unwrap(), 1.0);
    }

    #[test]
    fn null_variance() {
        let y = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(GlmFamily::Bernoulli.null_variance_estimator(&y), 0.25);
        assert_eq!(GlmFamily::Poisson.null_variance_estimator(&[0.0, 2.0, 4.0]), 2.0);
        let g = GlmFamily::Gaussian.null_variance_estimator(&[1.0, 2.0, 3.0]);
        assert!((g - 1.0).abs() < 1e-15);
    }

    #[test]
    fn support() {
        assert!(GlmFamily::Bernoulli.check_support(&[0.0, 1.0]).is_ok());
        assert!(GlmFamily::Bernoulli.check_support(&[0.5]).is_err());
        assert!(GlmFamily::Poisson.check_support(&[0.0, 3.0]).is_ok());
        assert!(GlmFamily::Poisson.check_support(&[1.5]).is_err());
        assert!(GlmFamily::Poisson.check_support(&[-1.0]).is_err());
    }

    #[test]
    fn parse_round_trip() {
        for f in GlmFamily::ALL {
            assert_eq!(f.name().parse::<GlmFamily>().unwrap(), f);
        }
        assert!("gamma".parse::<GlmFamily>().is_err());
    }
}
