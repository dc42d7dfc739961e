//! Watermark payloads and bit error rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;

/// The message embedded into a layer's weights: a bit vector of length `l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkMessage {
    bits: Vec<bool>,
}

impl WatermarkMessage {
    pub fn new(bits: Vec<bool>) -> Self {
        WatermarkMessage { bits }
    }

    /// Parse a string of '0'/'1' characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Format(format!(
                    "message bit must be '0' or '1', got {other:?}"
                ))),
            })
            .collect::<Result<Vec<bool>>>()?;
        Ok(WatermarkMessage { bits })
    }

    /// Deterministic fair-coin message of length `l`.
    pub fn random(seed: u64, l: usize) -> Self {
        let mut rng = Prng::seed_from_u64(seed);
        WatermarkMessage {
            bits: (0..l).map(|_| rng.next_u64() & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Bit value as 0.0 or 1.0, the form used in the regularizer losses.
    pub fn bit_f64(&self, j: usize) -> f64 {
        if self.bits[j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }
}

impl std::fmt::Display for WatermarkMessage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_bit_string())
    }
}

/// Fraction of positions where the two messages differ.
pub fn bit_error_rate(b: &WatermarkMessage, b_hat: &WatermarkMessage) -> Result<f64> {
    if b.len() != b_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "bit_error_rate",
            expected: b.len(),
            actual: b_hat.len(),
        });
    }
    let wrong = b
        .bits()
        .iter()
        .zip(b_hat.bits())
        .filter(|(x, y)| x != y)
        .count();
    Ok(wrong as f64 / b.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ber_identical_is_zero() {
        let b = WatermarkMessage::random(7, 32);
        assert_eq!(bit_error_rate(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn ber_complement_is_one() {
        let b = WatermarkMessage::random(7, 32);
        let c = WatermarkMessage::new(b.bits().iter().map(|&x| !x).collect());
        assert_eq!(bit_error_rate(&b, &c).unwrap(), 1.0);
    }

    #[test]
    fn ber_half_differs() {
        let b = WatermarkMessage::parse("0110").unwrap();
        let b_hat = WatermarkMessage::parse("0011").unwrap();
        assert_eq!(bit_error_rate(&b, &b_hat).unwrap(), 0.5);
    }

    #[test]
    fn ber_length_mismatch_is_error() {
        let a = WatermarkMessage::parse("01").unwrap();
        let b = WatermarkMessage::parse("011").unwrap();
        assert!(bit_error_rate(&a, &b).is_err());
    }

    #[test]
    fn parse_rejects_non_bits() {
        assert!(WatermarkMessage::parse("01x0").is_err());
    }

    #[test]
    fn random_message_is_deterministic() {
        assert_eq!(WatermarkMessage::random(3, 64), WatermarkMessage::random(3, 64));
    }
}
