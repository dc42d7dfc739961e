//! Sequential network: shape-checked construction, seeded initialization,
//! forward inference, and batched backpropagation of the task loss.

use crate::error::{Error, Result};
use crate::nn::layer::{
    avgpool_backward, avgpool_forward, conv2d_backward_input, conv2d_backward_params,
    conv2d_forward, cross_entropy_grad, dense_backward, dense_forward, relu_backward,
    relu_forward, softmax, LayerSpec,
};
use crate::rng::Prng;
use crate::tensor::{FlattenedHost, WeightTensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: WeightTensor,
    pub bias: Vec<f64>,
}

/// A classifier network: a shape-validated layer stack ending in a softmax
/// head. Parameters initialize to zero-mean uniform values scaled by
/// 1/sqrt(fan-in), drawn from one seeded stream in layer order.
#[derive(Debug, Clone)]
pub struct Network {
    input: (usize, usize, usize),
    specs: Vec<LayerSpec>,
    params: Vec<Option<LayerParams>>,
    /// Output (h, w, c) of each layer.
    shapes: Vec<(usize, usize, usize)>,
    init_seed: u64,
}

fn validate_stack(
    input: (usize, usize, usize),
    specs: &[LayerSpec],
) -> Result<Vec<(usize, usize, usize)>> {
    let (h, w, c) = input;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::InvalidConfig("input dimensions must be >= 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::InvalidConfig("network needs at least one layer".into()));
    }
    let mut ids: Vec<&str> = Vec::new();
    let mut shapes = Vec::with_capacity(specs.len());
    let mut cur = input;
    for (i, spec) in specs.iter().enumerate() {
        if let Some(id) = spec.id() {
            if ids.contains(&id) {
                return Err(Error::InvalidConfig(format!("duplicate layer id `{id}`")));
            }
            ids.push(id);
        }
        let is_head = matches!(spec, LayerSpec::SoftmaxHead);
        if is_head && i + 1 != specs.len() {
            return Err(Error::InvalidConfig(
                "softmax head must be the final layer".into(),
            ));
        }
        cur = spec.output_shape(cur)?;
        shapes.push(cur);
    }
    if !matches!(specs.last(), Some(LayerSpec::SoftmaxHead)) {
        return Err(Error::InvalidConfig(
            "network must end in a softmax head".into(),
        ));
    }
    Ok(shapes)
}

impl Network {
    pub fn new(
        input: (usize, usize, usize),
        specs: Vec<LayerSpec>,
        init_seed: u64,
    ) -> Result<Self> {
        let shapes = validate_stack(input, &specs)?;
        let mut rng = Prng::seed_from_u64(init_seed);
        let params = specs
            .iter()
            .map(|spec| {
                spec.weight_shape().map(|shape| {
                    let bound = 1.0 / (spec.fan_in().unwrap() as f64).sqrt();
                    let values = (0..shape.count())
                        .map(|_| rng.uniform_in(-bound, bound))
                        .collect();
                    LayerParams {
                        weights: WeightTensor::new(shape, values),
                        bias: vec![0.0; spec.bias_len().unwrap()],
                    }
                })
            })
            .collect();
        Ok(Network {
            input,
            specs,
            params,
            shapes,
            init_seed,
        })
    }

    /// Rebuild a network from stored parameters (checkpoint load).
    pub fn from_parts(
        input: (usize, usize, usize),
        specs: Vec<LayerSpec>,
        parts: Vec<LayerParams>,
        init_seed: u64,
    ) -> Result<Self> {
        let shapes = validate_stack(input, &specs)?;
        let mut supplied = parts.into_iter();
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            match spec.weight_shape() {
                Some(shape) => {
                    let p = supplied.next().ok_or_else(|| {
                        Error::Format("missing parameters for a trainable layer".into())
                    })?;
                    if p.weights.shape() != shape || p.bias.len() != spec.bias_len().unwrap() {
                        return Err(Error::Format(format!(
                            "parameter block does not match layer spec {spec:?}"
                        )));
                    }
                    params.push(Some(p));
                }
                None => params.push(None),
            }
        }
        if supplied.next().is_some() {
            return Err(Error::Format("extra parameter blocks".into()));
        }
        Ok(Network {
            input,
            specs,
            params,
            shapes,
            init_seed,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap().2
    }

    pub fn layer_index(&self, id: &str) -> Result<usize> {
        self.specs
            .iter()
            .position(|s| s.id() == Some(id))
            .ok_or_else(|| Error::LayerNotFound { id: id.to_string() })
    }

    pub fn layer_params(&self, idx: usize) -> Option<&LayerParams> {
        self.params.get(idx).and_then(|p| p.as_ref())
    }

    pub fn layer_params_mut(&mut self, idx: usize) -> Option<&mut LayerParams> {
        self.params.get_mut(idx).and_then(|p| p.as_mut())
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        self.specs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_trainable().then_some(i))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weights.values().len() + p.bias.len())
            .sum()
    }

    /// Flattened host vector of a trainable layer (watermark carrier).
    pub fn host_flatten(&self, idx: usize) -> Result<FlattenedHost> {
        self.layer_params(idx)
            .map(|p| p.weights.flatten())
            .ok_or_else(|| Error::InvalidEmbedSpec(format!("layer {idx} has no weights")))
    }

    pub fn workspace(&self) -> Workspace {
        let mut sizes = Vec::with_capacity(self.specs.len() + 1);
        sizes.push(self.input_len());
        for &(h, w, c) in &self.shapes {
            sizes.push(h * w * c);
        }
        Workspace {
            acts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            dacts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn zero_grads(&self) -> GradBuffers {
        GradBuffers {
            layers: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref()
                        .map(|p| (vec![0.0; p.weights.values().len()], vec![0.0; p.bias.len()]))
                })
                .collect(),
        }
    }

    fn layer_input_dims(&self, idx: usize) -> (usize, usize, usize) {
        if idx == 0 {
            self.input
        } else {
            self.shapes[idx - 1]
        }
    }

    /// Run the full stack (softmax included); returns the class
    /// probabilities, which live in the workspace's last buffer.
    pub fn forward_into<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> Result<&'w [f64]> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_len(),
                actual: x.len(),
            });
        }
        ws.acts[0].copy_from_slice(x);
        for (i, spec) in self.specs.iter().enumerate() {
            let dims = self.layer_input_dims(i);
            let (prev, rest) = ws.acts.split_at_mut(i + 1);
            let (input, out) = (prev[i].as_slice(), rest[0].as_mut_slice());
            match spec {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    conv2d_forward(input, dims, &p.weights, &p.bias, out);
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    dense_forward(input, &p.weights, &p.bias, out);
                }
                LayerSpec::Relu => relu_forward(input, out),
                LayerSpec::AvgPoolGlobal => avgpool_forward(input, dims, out),
                LayerSpec::SoftmaxHead => softmax(input, out),
            }
        }
        Ok(ws.acts.last().unwrap().as_slice())
    }

    pub fn predict(&self, x: &[f64], ws: &mut Workspace) -> Result<usize> {
        let probs = self.forward_into(x, ws)?;
        Ok(argmax(probs))
    }

    /// Forward + backward for one labeled sample; task-loss gradients are
    /// accumulated into `grads`. Returns (cross-entropy loss, correct?).
    pub fn step_sample(
        &self,
        x: &[f64],
        label: usize,
        ws: &mut Workspace,
        grads: &mut GradBuffers,
    ) -> Result<(f64, bool)> {
        if label >= self.num_classes() {
            return Err(Error::InvalidConfig(format!(
                "label {label} out of range for {} classes",
                self.num_classes()
            )));
        }
        let head = self.specs.len() - 1;
        // Forward up to the logits; the head itself is folded into the
        // cross-entropy gradient.
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_len(),
                actual: x.len(),
            });
        }
        ws.acts[0].copy_from_slice(x);
        for (i, spec) in self.specs.iter().enumerate().take(head) {
            let dims = self.layer_input_dims(i);
            let (prev, rest) = ws.acts.split_at_mut(i + 1);
            let (input, out) = (prev[i].as_slice(), rest[0].as_mut_slice());
            match spec {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    conv2d_forward(input, dims, &p.weights, &p.bias, out);
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    dense_forward(input, &p.weights, &p.bias, out);
                }
                LayerSpec::Relu => relu_forward(input, out),
                LayerSpec::AvgPoolGlobal => avgpool_forward(input, dims, out),
                LayerSpec::SoftmaxHead => unreachable!("head is last"),
            }
        }
        let logits = ws.acts[head].as_slice();
        let correct = argmax(logits) == label;
        let loss = cross_entropy_grad(logits, label, ws.dacts[head].as_mut_slice());

        for i in (0..head).rev() {
            let dims = self.layer_input_dims(i);
            let (dprev, drest) = ws.dacts.split_at_mut(i + 1);
            let (din, dout) = (dprev[i].as_mut_slice(), drest[0].as_slice());
            let input = ws.acts[i].as_slice();
            match self.specs[i] {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    let (dw, db) = grads.layers[i].as_mut().unwrap();
                    conv2d_backward_params(input, dims, p.weights.shape(), dout, dw, db);
                    if i > 0 {
                        conv2d_backward_input(&p.weights, dims, dout, din);
                    }
                }
                LayerSpec::Dense { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    let (dw, db) = grads.layers[i].as_mut().unwrap();
                    let din = (i > 0).then_some(din);
                    dense_backward(input, &p.weights, dout, dw, db, din);
                }
                LayerSpec::Relu => relu_backward(input, dout, din),
                LayerSpec::AvgPoolGlobal => avgpool_backward(dims, dout, din),
                LayerSpec::SoftmaxHead => unreachable!("head is last"),
            }
        }
        Ok((loss, correct))
    }

    /// Mean task loss and gradient over a batch of dataset rows. Zeroes
    /// `grads` first; on return they hold the batch-mean gradient of E_0.
    pub fn batch_gradient(
        &self,
        xs: &[f64],
        labels: &[usize],
        batch: &[usize],
        ws: &mut Workspace,
        grads: &mut GradBuffers,
    ) -> Result<(f64, usize)> {
        assert!(!batch.is_empty(), "batch must be non-empty");
        let dim = self.input_len();
        grads.zero();
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &row in batch {
            let x = &xs[row * dim..(row + 1) * dim];
            let (loss, ok) = self.step_sample(x, labels[row], ws, grads)?;
            loss_sum += loss;
            correct += ok as usize;
        }
        grads.scale(1.0 / batch.len() as f64);
        Ok((loss_sum / batch.len() as f64, correct))
    }

    /// Classification error rate over a labeled split.
    pub fn evaluate(&self, xs: &[f64], labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::EmptyTestSplit);
        }
        let dim = self.input_len();
        let mut ws = self.workspace();
        let mut wrong = 0usize;
        for (row, &label) in labels.iter().enumerate() {
            let x = &xs[row * dim..(row + 1) * dim];
            if self.predict(x, &mut ws)? != label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / labels.len() as f64)
    }
}

/// Reusable activation buffers for one network. Confined to one thread;
/// cheap to create per thread when parallelizing across runs.
#[derive(Debug)]
pub struct Workspace {
    /// acts[0] is the input; acts[i+1] the output of layer i.
    acts: Vec<Vec<f64>>,
    dacts: Vec<Vec<f64>>,
}

/// Per-layer gradient accumulators, parallel to the network's layers.
#[derive(Debug, Clone)]
pub struct GradBuffers {
    /// (d_weights, d_bias) for trainable layers, None elsewhere.
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl GradBuffers {
    pub fn zero(&mut self) {
        for layer in self.layers.iter_mut().flatten() {
            layer.0.fill(0.0);
            layer.1.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for layer in self.layers.iter_mut().flatten() {
            for g in layer.0.iter_mut() {
                *g *= s;
            }
            for g in layer.1.iter_mut() {
                *g *= s;
            }
        }
    }
}

/// First index of the maximum (ties resolve to the lowest index).
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
