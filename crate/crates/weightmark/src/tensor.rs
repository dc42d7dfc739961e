//! Weight tensors, host flattening and projection.
//!
//! The watermark host is the filter-averaged, flattened weight vector of one
//! layer. Flattening order is fixed as row-major over (i, j, k): flat index
//! `(i*s + j)*d + k`. Embedding and extraction must agree on this order, so
//! it is part of the format contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::key::ProjectionKey;

/// Shape of a convolutional weight block: kernel `s x s`, input depth `d`,
/// `n` filters. Dense layers use the degenerate shape `(1, 1, fan_in*fan_out, 1)`
/// so both layer kinds share one flattening path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub s: usize,
    pub d: usize,
    pub n: usize,
}

impl TensorShape {
    pub fn new(s: usize, d: usize, n: usize) -> Self {
        assert!(s >= 1 && d >= 1 && n >= 1, "tensor dimensions must be >= 1");
        TensorShape { s, d, n }
    }

    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        TensorShape::new(1, fan_in * fan_out, 1)
    }

    /// Number of weights, s*s*d*n.
    pub fn count(&self) -> usize {
        self.s * self.s * self.d * self.n
    }

    /// Host length v = s*s*d.
    pub fn host_len(&self) -> usize {
        self.s * self.s * self.d
    }
}

/// A 4-D weight block stored row-major over (i, j, k, h):
/// index `((i*s + j)*d + k)*n + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTensor {
    shape: TensorShape,
    values: Vec<f64>,
}

impl WeightTensor {
    pub fn new(shape: TensorShape, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape.count(), "value count must match shape");
        WeightTensor { shape, values }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        WeightTensor {
            shape,
            values: vec![0.0; shape.count()],
        }
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, i: usize, j: usize, k: usize, h: usize) -> f64 {
        self.values[((i * self.shape.s + j) * self.shape.d + k) * self.shape.n + h]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, h: usize, value: f64) {
        self.values[((i * self.shape.s + j) * self.shape.d + k) * self.shape.n + h] = value;
    }

    /// Filter-averaged flatten: w[(i*s + j)*d + k] = mean over h of W[i,j,k,h].
    /// The n filter values are summed in ascending numeric order, which makes
    /// the result bit-identical under any permutation of the filter axis.
    pub fn flatten(&self) -> FlattenedHost {
        let n = self.shape.n;
        let v = self.shape.host_len();
        let mut w = Vec::with_capacity(v);
        if n == 1 {
            w.extend_from_slice(&self.values);
        } else {
            let mut filt = vec![0.0; n];
            for idx in 0..v {
                filt.copy_from_slice(&self.values[idx * n..(idx + 1) * n]);
                filt.sort_by(f64::total_cmp);
                let sum: f64 = filt.iter().sum();
                w.push(sum / n as f64);
            }
        }
        FlattenedHost { values: w }
    }
}

/// The flattened host vector w of length v = s*s*d.
#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedHost {
    pub values: Vec<f64>,
}

impl FlattenedHost {
    pub fn new(values: Vec<f64>) -> Self {
        FlattenedHost { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Adjoint of the filter mean: spread a host-space gradient back over the
/// tensor, each of the n filters receiving an equal 1/n share.
pub fn unflatten_gradient(g: &[f64], shape: TensorShape) -> Result<WeightTensor> {
    if g.len() != shape.host_len() {
        return Err(Error::DimensionMismatch {
            context: "unflatten_gradient",
            expected: shape.host_len(),
            actual: g.len(),
        });
    }
    let n = shape.n;
    let inv_n = 1.0 / n as f64;
    let mut values = Vec::with_capacity(shape.count());
    for &gi in g {
        let share = gi * inv_n;
        values.extend(std::iter::repeat_n(share, n));
    }
    Ok(WeightTensor::new(shape, values))
}

/// Projection of the host onto every key row: rho_j = sum_i X[j][i] * w[i].
pub fn project(w: &FlattenedHost, key: &ProjectionKey) -> Result<Vec<f64>> {
    if key.cols() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "project",
            expected: key.cols(),
            actual: w.len(),
        });
    }
    Ok((0..key.rows())
        .map(|j| dot(key.row(j), w.as_slice()))
        .collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
