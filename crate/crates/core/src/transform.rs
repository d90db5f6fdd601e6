//! Link functions mapping Kendall's tau in `[-1, 1]` to the real line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformFamily {
    Identity,
    /// `log((1 + τ) / (1 - τ))`
    Fisher,
    /// `log(-log((1 - τ) / 2))`
    Loglog,
}

impl std::str::FromStr for TransformFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(TransformFamily::Identity),
            "fisher" => Ok(TransformFamily::Fisher),
            "loglog" => Ok(TransformFamily::Loglog),
            other => Err(Error::Argument(format!("unknown transform `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub family: TransformFamily,
    pub clamp_eps: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec::new(TransformFamily::Identity)
    }
}

impl TransformSpec {
    pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

    pub fn new(family: TransformFamily) -> Self {
        TransformSpec {
            family,
            clamp_eps: Self::DEFAULT_CLAMP_EPS,
        }
    }

    fn clamp(&self, tau: f64) -> f64 {
        match self.family {
            TransformFamily::Identity => tau.clamp(-1.0, 1.0),
            _ => tau.clamp(-1.0 + self.clamp_eps, 1.0 - self.clamp_eps),
        }
    }

    /// `Λ(τ)`, after clamping `τ` into the admissible range.
    pub fn apply(&self, tau: f64) -> Result<f64> {
        if tau.is_nan() {
            return Err(Error::Argument("tau is NaN".into()));
        }
        let t = self.clamp(tau);
        Ok(match self.family {
            TransformFamily::Identity => t,
            TransformFamily::Fisher => ((1.0 + t) / (1.0 - t)).ln(),
            TransformFamily::Loglog => (-((1.0 - t) / 2.0).ln()).ln(),
        })
    }

    /// `Λ⁻¹(y)`, always inside `[-1, 1]`.
    pub fn inverse(&self, y: f64) -> f64 {
        match self.family {
            TransformFamily::Identity => y.clamp(-1.0, 1.0),
            // tanh(y/2) == (e^y - 1) / (e^y + 1) without overflow
            TransformFamily::Fisher => (0.5 * y).tanh(),
            TransformFamily::Loglog => (1.0 - 2.0 * (-y.exp()).exp()).clamp(-1.0, 1.0),
        }
    }

    /// `Λ'(τ)`.
    pub fn derivative(&self, tau: f64) -> f64 {
        let t = self.clamp(tau);
        match self.family {
            TransformFamily::Identity => 1.0,
            TransformFamily::Fisher => 2.0 / (1.0 - t * t),
            TransformFamily::Loglog => 1.0 / ((1.0 - t) * (-((1.0 - t) / 2.0).ln())),
        }
    }

    /// `(Λ⁻¹)'(y) = 1 / Λ'(Λ⁻¹(y))`.
    pub fn inverse_derivative(&self, y: f64) -> f64 {
        1.0 / self.derivative(self.inverse(y))
    }

    /// `C_Λ'`: maximum of `Λ'` over a 1001-point grid on `[lo, hi]`.
    pub fn derivative_bound(&self, lo: f64, hi: f64) -> f64 {
        let grid = 1000;
        (0..=grid)
            .map(|i| lo + (hi - lo) * i as f64 / grid as f64)
            .map(|t| self.derivative(t))
            .fold(0.0, f64::max)
    }
}
