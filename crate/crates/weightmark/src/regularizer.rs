//! Watermark embedding regularizers.
//!
//! Both schemes push the projections rho = X w of the flattened host onto a
//! binary cross-entropy loss against the message bits; they differ only in
//! how a projection is squashed into a soft bit estimate:
//!
//! - spread-spectrum: y_j = sigmoid(gamma * rho_j), decoded by the sign of
//!   rho_j, so each bit constrains a half-space;
//! - spread-transform DM: z_j = sigmoid(alpha * sin(beta * rho_j)), decoded
//!   by the sign of sin(beta * rho_j), so each bit constrains a periodic
//!   union of slabs of width pi/beta.
//!
//! The periodic decision regions are what buys robustness: a projection only
//! has to sit inside the nearest correct slab, not grow without bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ProjectionKey;
use crate::message::WatermarkMessage;
use crate::tensor::{project, FlattenedHost};

/// Soft responses are clamped into [RESPONSE_CLAMP, 1 - RESPONSE_CLAMP]
/// before the log so saturated projections yield a large finite loss instead
/// of infinity. Gradients use the analytic (unclamped) form.
pub const RESPONSE_CLAMP: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Spread-spectrum response sigmoid(gamma * x).
pub fn sigmoid_gamma(x: f64, gamma: f64) -> f64 {
    sigmoid(gamma * x)
}

/// ST-DM response sigmoid(alpha * sin(beta * x)): a smooth periodic wave
/// between ~0 and ~1 with period 2*pi/beta.
pub fn theta(x: f64, alpha: f64, beta: f64) -> f64 {
    sigmoid(alpha * (beta * x).sin())
}

/// Which soft decoder maps projections to bit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecoderKind {
    Ss { gamma: f64 },
    Stdm { alpha: f64, beta: f64 },
}

impl DecoderKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DecoderKind::Ss { gamma } => gamma > 0.0,
            DecoderKind::Stdm { alpha, beta } => alpha > 0.0 && beta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidEmbedSpec(format!(
                "decoder parameters must be positive, got {self:?}"
            )))
        }
    }

    /// Soft bit estimate in (0, 1) for one projection.
    pub fn response(&self, rho: f64) -> f64 {
        match *self {
            DecoderKind::Ss { gamma } => sigmoid_gamma(rho, gamma),
            DecoderKind::Stdm { alpha, beta } => theta(rho, alpha, beta),
        }
    }

    /// Hard decision for one projection; the boundary itself decodes to 1.
    pub fn decision(&self, rho: f64) -> bool {
        match *self {
            DecoderKind::Ss { .. } => rho >= 0.0,
            DecoderKind::Stdm { beta, .. } => (beta * rho).sin() >= 0.0,
        }
    }

    /// d(response)/d(rho), used by the analytic loss gradient.
    fn response_slope(&self, rho: f64) -> f64 {
        match *self {
            // d/drho sigmoid(g*rho) contributes (r - b) * g after the BCE
            // derivative collapses; the sigmoid' factor cancels.
            DecoderKind::Ss { gamma } => gamma,
            DecoderKind::Stdm { alpha, beta } => alpha * beta * (beta * rho).cos(),
        }
    }
}

/// The embedding loss E_R added to the task loss during training: binary
/// cross-entropy between the message bits and the soft responses of the
/// host's projections.
#[derive(Debug, Clone)]
pub struct WatermarkRegularizer {
    key: ProjectionKey,
    message: WatermarkMessage,
    decoder: DecoderKind,
}

impl WatermarkRegularizer {
    pub fn new(key: ProjectionKey, message: WatermarkMessage, decoder: DecoderKind) -> Result<Self> {
        decoder.validate()?;
        if key.rows() != message.len() {
            return Err(Error::DimensionMismatch {
                context: "regularizer message length vs key rows",
                expected: key.rows(),
                actual: message.len(),
            });
        }
        Ok(WatermarkRegularizer {
            key,
            message,
            decoder,
        })
    }

    pub fn key(&self) -> &ProjectionKey {
        &self.key
    }

    pub fn message(&self) -> &WatermarkMessage {
        &self.message
    }

    pub fn decoder(&self) -> DecoderKind {
        self.decoder
    }

    pub fn host_len(&self) -> usize {
        self.key.cols()
    }

    pub fn projections(&self, w: &FlattenedHost) -> Result<Vec<f64>> {
        project(w, &self.key)
    }

    /// Soft bit estimates for the given projections.
    pub fn soft_responses(&self, rho: &[f64]) -> Vec<f64> {
        rho.iter().map(|&r| self.decoder.response(r)).collect()
    }

    pub fn loss(&self, w: &FlattenedHost) -> Result<f64> {
        let rho = self.projections(w)?;
        let mut e = 0.0;
        for (&r, &bit) in rho.iter().zip(self.message.bits()) {
            let resp = self
                .decoder
                .response(r)
                .clamp(RESPONSE_CLAMP, 1.0 - RESPONSE_CLAMP);
            e -= if bit { resp.ln() } else { (1.0 - resp).ln() };
        }
        Ok(e)
    }

    /// Loss and its exact gradient with respect to the flattened host.
    ///
    /// For BCE over r = sigmoid(u(rho)), dE/du = r - b, so
    /// dE/dw_i = sum_j (r_j - b_j) * u'(rho_j) * X[j][i].
    pub fn loss_and_gradient(&self, w: &FlattenedHost) -> Result<(f64, Vec<f64>)> {
        let rho = self.projections(w)?;
        let v = self.host_len();
        let mut e = 0.0;
        let mut grad = vec![0.0; v];
        for (j, (&r, &bit)) in rho.iter().zip(self.message.bits()).enumerate() {
            let resp = self.decoder.response(r);
            let clamped = resp.clamp(RESPONSE_CLAMP, 1.0 - RESPONSE_CLAMP);
            e -= if bit {
                clamped.ln()
            } else {
                (1.0 - clamped).ln()
            };
            let scale = (resp - if bit { 1.0 } else { 0.0 }) * self.decoder.response_slope(r);
            for (g, x) in grad.iter_mut().zip(self.key.row(j)) {
                *g += scale * x;
            }
        }
        Ok((e, grad))
    }

    /// Hard-decision extraction of the message from a host.
    pub fn extract(&self, w: &FlattenedHost) -> Result<WatermarkMessage> {
        let rho = self.projections(w)?;
        Ok(WatermarkMessage::new(
            rho.iter().map(|&r| self.decoder.decision(r)).collect(),
        ))
    }
}
