//! Layer specifications and the forward/backward primitives behind them.
//!
//! Activations are flat `f64` buffers in channels-last row-major order:
//! index (y, x, c) lives at `(y*w + x)*c_total + c`. Convolutions are
//! stride-1 with zero same-padding and an odd kernel, so spatial dims are
//! preserved. Backward primitives overwrite their `din` output completely
//! but *accumulate* into weight/bias gradients, which is what batching
//! wants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::TensorShape;

/// One layer of a sequential network. Trainable layers carry a stable id so
/// embedding targets and reports can name them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        id: String,
        kernel: usize,
        in_channels: usize,
        filters: usize,
    },
    Dense {
        id: String,
        inputs: usize,
        outputs: usize,
    },
    Relu,
    AvgPoolGlobal,
    SoftmaxHead,
}

impl LayerSpec {
    pub fn id(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv2d { id, .. } | LayerSpec::Dense { id, .. } => Some(id),
            _ => None,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Weight tensor shape: (s, s, d, n) for conv, the n=1 dense convention
    /// for dense layers.
    pub fn weight_shape(&self) -> Option<TensorShape> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                filters,
                ..
            } => Some(TensorShape::new(kernel, in_channels, filters)),
            LayerSpec::Dense {
                inputs, outputs, ..
            } => Some(TensorShape::dense(inputs, outputs)),
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d { filters, .. } => Some(filters),
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            _ => None,
        }
    }

    /// Fan-in used for initialization scaling.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d {
                kernel,
                in_channels,
                ..
            } => Some(kernel * kernel * in_channels),
            LayerSpec::Dense { inputs, .. } => Some(inputs),
            _ => None,
        }
    }

    /// Output (h, w, c) given the input shape, validating compatibility.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let (h, w, c) = input;
        match *self {
            LayerSpec::Conv2d {
                ref id,
                kernel,
                in_channels,
                filters,
            } => {
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "conv layer `{id}` kernel must be odd and >= 1, got {kernel}"
                    )));
                }
                if in_channels != c {
                    return Err(Error::DimensionMismatch {
                        context: "conv2d input channels",
                        expected: in_channels,
                        actual: c,
                    });
                }
                if filters == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "conv layer `{id}` needs at least one filter"
                    )));
                }
                Ok((h, w, filters))
            }
            LayerSpec::Dense { inputs, outputs, .. } => {
                if inputs != h * w * c {
                    return Err(Error::DimensionMismatch {
                        context: "dense inputs",
                        expected: inputs,
                        actual: h * w * c,
                    });
                }
                if outputs == 0 {
                    return Err(Error::InvalidConfig(
                        "dense layer needs at least one output".into(),
                    ));
                }
                Ok((1, 1, outputs))
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::AvgPoolGlobal => Ok((1, 1, c)),
            LayerSpec::SoftmaxHead => {
                if h != 1 || w != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "softmax head expects a flat (1,1,C) input, got ({h},{w},{c})"
                    )));
                }
                Ok(input)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Primitives. `weights` carries its own shape; `dims` is the input (h, w, c).

pub(crate) fn conv2d_forward(
    input: &[f64],
    dims: (usize, usize, usize),
    weights: &crate::tensor::WeightTensor,
    bias: &[f64],
    out: &mut [f64],
) {
    let (h, w, d) = dims;
    let shape = weights.shape();
    let (s, n) = (shape.s, shape.n);
    let p = (s - 1) / 2;
    let wv = weights.values();
    for y in 0..h {
        for x in 0..w {
            let ob = (y * w + x) * n;
            out[ob..ob + n].copy_from_slice(bias);
            for i in 0..s {
                let yy = y + i;
                if yy < p || yy >= h + p {
                    continue;
                }
                let yy = yy - p;
                for j in 0..s {
                    let xx = x + j;
                    if xx < p || xx >= w + p {
                        continue;
                    }
                    let xx = xx - p;
                    let ib = (yy * w + xx) * d;
                    let wb = (i * s + j) * d * n;
                    for k in 0..d {
                        let xv = input[ib + k];
                        // Post-relu inputs are about half zeros; skipping
                        // them changes nothing numerically.
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wv[wb + k * n..wb + (k + 1) * n];
                        let orow = &mut out[ob..ob + n];
                        for o in 0..n {
                            orow[o] += xv * wrow[o];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate dE/dweights and dE/dbias for a conv layer.
pub(crate) fn conv2d_backward_params(
    input: &[f64],
    dims: (usize, usize, usize),
    shape: TensorShape,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (h, w, d) = dims;
    let (s, n) = (shape.s, shape.n);
    let p = (s - 1) / 2;
    for y in 0..h {
        for x in 0..w {
            let ob = (y * w + x) * n;
            let dorow = &dout[ob..ob + n];
            for o in 0..n {
                db[o] += dorow[o];
            }
            for i in 0..s {
                let yy = y + i;
                if yy < p || yy >= h + p {
                    continue;
                }
                let yy = yy - p;
                for j in 0..s {
                    let xx = x + j;
                    if xx < p || xx >= w + p {
                        continue;
                    }
                    let xx = xx - p;
                    let ib = (yy * w + xx) * d;
                    let wb = (i * s + j) * d * n;
                    for k in 0..d {
                        let xv = input[ib + k];
                        if xv == 0.0 {
                            continue;
                        }
                        let dwrow = &mut dw[wb + k * n..wb + (k + 1) * n];
                        for o in 0..n {
                            dwrow[o] += xv * dorow[o];
                        }
                    }
                }
            }
        }
    }
}

/// Compute dE/dinput for a conv layer (overwrites `din`).
pub(crate) fn conv2d_backward_input(
    weights: &crate::tensor::WeightTensor,
    dims: (usize, usize, usize),
    dout: &[f64],
    din: &mut [f64],
) {
    let (h, w, d) = dims;
    let shape = weights.shape();
    let (s, n) = (shape.s, shape.n);
    let p = (s - 1) / 2;
    let wv = weights.values();
    din.fill(0.0);
    for y in 0..h {
        for x in 0..w {
            let ob = (y * w + x) * n;
            let dorow = &dout[ob..ob + n];
            for i in 0..s {
                let yy = y + i;
                if yy < p || yy >= h + p {
                    continue;
                }
                let yy = yy - p;
                for j in 0..s {
                    let xx = x + j;
                    if xx < p || xx >= w + p {
                        continue;
                    }
                    let xx = xx - p;
                    let ib = (yy * w + xx) * d;
                    let wb = (i * s + j) * d * n;
                    for k in 0..d {
                        let wrow = &wv[wb + k * n..wb + (k + 1) * n];
                        let mut acc = 0.0;
                        for o in 0..n {
                            acc += wrow[o] * dorow[o];
                        }
                        din[ib + k] += acc;
                    }
                }
            }
        }
    }
}

/// Dense weights use the n=1 convention: w[(i, o)] at index `i*outputs + o`.
pub(crate) fn dense_forward(
    input: &[f64],
    weights: &crate::tensor::WeightTensor,
    bias: &[f64],
    out: &mut [f64],
) {
    let outputs = bias.len();
    out.copy_from_slice(bias);
    let wv = weights.values();
    for (i, &xv) in input.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let wrow = &wv[i * outputs..(i + 1) * outputs];
        for o in 0..outputs {
            out[o] += xv * wrow[o];
        }
    }
}

pub(crate) fn dense_backward(
    input: &[f64],
    weights: &crate::tensor::WeightTensor,
    dout: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    din: Option<&mut [f64]>,
) {
    let outputs = dout.len();
    for o in 0..outputs {
        db[o] += dout[o];
    }
    for (i, &xv) in input.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let dwrow = &mut dw[i * outputs..(i + 1) * outputs];
        for o in 0..outputs {
            dwrow[o] += xv * dout[o];
        }
    }
    if let Some(din) = din {
        let wv = weights.values();
        for (i, di) in din.iter_mut().enumerate() {
            let wrow = &wv[i * outputs..(i + 1) * outputs];
            let mut acc = 0.0;
            for o in 0..outputs {
                acc += wrow[o] * dout[o];
            }
            *di = acc;
        }
    }
}

pub(crate) fn relu_forward(input: &[f64], out: &mut [f64]) {
    for (o, &x) in out.iter_mut().zip(input) {
        *o = if x > 0.0 { x } else { 0.0 };
    }
}

/// Subgradient 0 at exactly 0.
pub(crate) fn relu_backward(input: &[f64], dout: &[f64], din: &mut [f64]) {
    for ((di, &x), &g) in din.iter_mut().zip(input).zip(dout) {
        *di = if x > 0.0 { g } else { 0.0 };
    }
}

pub(crate) fn avgpool_forward(input: &[f64], dims: (usize, usize, usize), out: &mut [f64]) {
    let (h, w, c) = dims;
    let scale = 1.0 / (h * w) as f64;
    out.fill(0.0);
    for yx in 0..h * w {
        let ib = yx * c;
        for ch in 0..c {
            out[ch] += input[ib + ch];
        }
    }
    for o in out.iter_mut() {
        *o *= scale;
    }
}

pub(crate) fn avgpool_backward(dims: (usize, usize, usize), dout: &[f64], din: &mut [f64]) {
    let (h, w, c) = dims;
    let scale = 1.0 / (h * w) as f64;
    for yx in 0..h * w {
        let ib = yx * c;
        for ch in 0..c {
            din[ib + ch] = dout[ch] * scale;
        }
    }
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Cross-entropy loss from logits via log-sum-exp, plus its gradient
/// (softmax minus one-hot), written into `dlogits`.
pub(crate) fn cross_entropy_grad(logits: &[f64], label: usize, dlogits: &mut [f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &l in logits {
        sum += (l - m).exp();
    }
    let lse = m + sum.ln();
    for (dl, &l) in dlogits.iter_mut().zip(logits) {
        *dl = (l - m).exp() / sum;
    }
    dlogits[label] -= 1.0;
    lse - logits[label]
}
