//! Classical dither-modulation and spread-transform DM codec.
//!
//! Embedding quantizes values onto one of two interleaved uniform codebooks
//! with step delta: U0 = {k*delta}, U1 = {k*delta + delta/2}. The multi-bit
//! spread-transform variant quantizes the projections of a host vector onto
//! orthonormal spreading directions, one direction per bit. This module is
//! the analytically checkable reference that the loss-based scheme's
//! decoding geometry is validated against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::message::WatermarkMessage;
use crate::rng::Prng;
use crate::tensor::{dot, FlattenedHost};

/// Midpoint behavior of the quantizers. Exactly one rule exists: a value
/// equidistant from two codewords resolves to the smaller codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieRule {
    #[default]
    TowardNegative,
}

/// Quantization step and tie rule of the interleaved codebooks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub delta: f64,
    pub tie_rule: TieRule,
}

impl QuantizerConfig {
    pub fn new(delta: f64) -> Self {
        assert!(delta > 0.0, "delta must be positive");
        QuantizerConfig {
            delta,
            tie_rule: TieRule::TowardNegative,
        }
    }
}

/// Round to the nearest integer, halves toward negative infinity.
fn round_half_down(t: f64) -> f64 {
    (t - 0.5).ceil()
}

/// Nearest element of codebook U_b: U0 = {k*delta}, U1 = {k*delta + delta/2}.
pub fn quantize_dm(x: f64, bit: bool, cfg: &QuantizerConfig) -> f64 {
    let delta = cfg.delta;
    if bit {
        let k = round_half_down((x - delta / 2.0) / delta);
        k * delta + delta / 2.0
    } else {
        let k = round_half_down(x / delta);
        k * delta
    }
}

/// Nearest-codeword decoding over U0 union U1: the union is a uniform grid
/// of step delta/2, with even grid points in U0 and odd ones in U1.
pub fn decode_dm(x: f64, cfg: &QuantizerConfig) -> bool {
    let half = cfg.delta / 2.0;
    let q = round_half_down(x / half);
    // Odd multiples of delta/2 belong to U1.
    (q.rem_euclid(2.0) - 1.0).abs() < 0.5
}

const UNIT_NORM_TOL: f64 = 1e-9;
const ORTHO_TOL: f64 = 1e-9;

fn check_unit(x: &[f64]) -> Result<()> {
    let norm = dot(x, x).sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::NonUnitDirection { norm });
    }
    Ok(())
}

/// Single-bit ST-DM embedding: replace the projection of `w` onto the
/// unit-norm direction `x` by its quantized value, leaving the orthogonal
/// complement untouched: w_m = w - rho*x + Q_b(rho)*x.
pub fn stdm_embed(
    w: &FlattenedHost,
    x: &[f64],
    bit: bool,
    cfg: &QuantizerConfig,
) -> Result<FlattenedHost> {
    if x.len() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "stdm_embed",
            expected: w.len(),
            actual: x.len(),
        });
    }
    check_unit(x)?;
    let rho = dot(w.as_slice(), x);
    let shift = quantize_dm(rho, bit, cfg) - rho;
    Ok(FlattenedHost::new(
        w.as_slice()
            .iter()
            .zip(x)
            .map(|(wi, xi)| wi + shift * xi)
            .collect(),
    ))
}

fn check_orthonormal(dirs: &[Vec<f64>], v: usize) -> Result<()> {
    for (i, d) in dirs.iter().enumerate() {
        if d.len() != v {
            return Err(Error::DimensionMismatch {
                context: "stdm directions",
                expected: v,
                actual: d.len(),
            });
        }
        check_unit(d)?;
        for (j, e) in dirs.iter().enumerate().take(i) {
            let g = dot(d, e);
            if g.abs() > ORTHO_TOL {
                return Err(Error::NonOrthogonalDirections { i: j, j: i, dot: g });
            }
        }
    }
    Ok(())
}

/// Multi-bit ST-DM embedding over mutually orthonormal directions, applied
/// as the single-bit step once per direction. Orthonormality makes the per
/// direction quantizations independent, so decoding is exact.
pub fn stdm_embed_multi(
    w: &FlattenedHost,
    dirs: &[Vec<f64>],
    message: &WatermarkMessage,
    cfg: &QuantizerConfig,
) -> Result<FlattenedHost> {
    if dirs.len() != message.len() {
        return Err(Error::DimensionMismatch {
            context: "stdm_embed_multi",
            expected: message.len(),
            actual: dirs.len(),
        });
    }
    check_orthonormal(dirs, w.len())?;
    let mut out = w.clone();
    for (x, &bit) in dirs.iter().zip(message.bits()) {
        let rho = dot(out.as_slice(), x);
        let shift = quantize_dm(rho, bit, cfg) - rho;
        for (o, xi) in out.values.iter_mut().zip(x) {
            *o += shift * xi;
        }
    }
    Ok(out)
}

/// DM decoding of every direction's projection.
pub fn stdm_decode(
    w_m: &FlattenedHost,
    dirs: &[Vec<f64>],
    cfg: &QuantizerConfig,
) -> Result<WatermarkMessage> {
    check_orthonormal(dirs, w_m.len())?;
    Ok(WatermarkMessage::new(
        dirs.iter()
            .map(|x| decode_dm(dot(w_m.as_slice(), x), cfg))
            .collect(),
    ))
}

/// `l` orthonormal directions in dimension `v`, built by Gram-Schmidt over
/// seeded Gaussian draws. Requires l <= v.
pub fn random_orthonormal_directions(seed: u64, l: usize, v: usize) -> Result<Vec<Vec<f64>>> {
    if l > v {
        return Err(Error::InvalidConfig(format!(
            "cannot build {l} orthonormal directions in dimension {v}"
        )));
    }
    let mut rng = Prng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(l);
    while dirs.len() < l {
        let mut cand = rng.normal_vec(v);
        // Two rounds of projection removal for numerical orthogonality.
        for _ in 0..2 {
            for d in &dirs {
                let g = dot(&cand, d);
                for (c, di) in cand.iter_mut().zip(d) {
                    *c -= g * di;
                }
            }
        }
        let norm = dot(&cand, &cand).sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw, try again
        }
        for c in cand.iter_mut() {
            *c /= norm;
        }
        dirs.push(cand);
    }
    Ok(dirs)
}
