//! Embedding hyperparameters and their defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The tunable constants of the two embedding schemes and the classical
/// codec. Defaults are alpha = beta = 10, gamma = 10, lambda = 0.01,
/// delta = 1, the settings used throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Steepness of the smooth DM decoder theta.
    pub alpha: f64,
    /// Period control of theta; the decision cells have width pi/beta.
    pub beta: f64,
    /// Slope of the generalized sigmoid.
    pub gamma: f64,
    /// Trade-off between task loss and watermark regularizer; 0 disables
    /// the watermark term.
    pub lambda: f64,
    /// Quantization step of the classical DM codec.
    pub delta: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 10.0,
            beta: 10.0,
            gamma: 10.0,
            lambda: 0.01,
            delta: 1.0,
        }
    }
}

impl Hyperparams {
    /// All fields must be strictly positive except lambda, which may be 0
    /// (watermark-free training).
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be > 0, got {value}"
                )));
            }
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(Hyperparams::default().validate().is_ok());
    }

    #[test]
    fn lambda_zero_is_allowed() {
        let p = Hyperparams {
            lambda: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_ok());
    }

    #[test]
    fn nonpositive_fields_rejected() {
        for field in 0..4 {
            let mut p = Hyperparams::default();
            match field {
                0 => p.alpha = 0.0,
                1 => p.beta = -1.0,
                2 => p.gamma = f64::NAN,
                _ => p.delta = 0.0,
            }
            assert!(p.validate().is_err(), "field {field}");
        }
        let p = Hyperparams { lambda: -0.5, ..Default::default() };
        assert!(p.validate().is_err());
    }
}
