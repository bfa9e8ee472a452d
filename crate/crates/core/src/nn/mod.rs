//! Dense multilayer perceptron with exact backpropagation of the mean
//! cross-entropy loss.

pub mod hessian;

pub use hessian::{
    hessian_vector_product, hvp, top_hessian_eigenvalue, top_hessian_eigenvalue_of, Differentiable,
    HessianEigen, LayerBlock, NetworkObjective, Quadratic, DEFAULT_HVP_EPS,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::DenseMatrix;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
    /// Final layer only: the layer output is the logit vector and the loss
    /// applies softmax to it.
    SoftmaxOutput,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity | Activation::SoftmaxOutput => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity | Activation::SoftmaxOutput => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `d_out × d_in`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }
}

/// A labelled mini-batch: one example per row of `inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "batch has {} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The batch with every example repeated `times` times (in blocks).
    pub fn repeated(&self, times: usize) -> Batch {
        let (n, d) = self.inputs.shape();
        let mut data = Vec::with_capacity(n * d * times);
        let mut labels = Vec::with_capacity(n * times);
        for _ in 0..times {
            data.extend_from_slice(self.inputs.as_slice());
            labels.extend_from_slice(&self.labels);
        }
        Batch {
            inputs: DenseMatrix::from_vec(n * times, d, data).expect("shape"),
            labels,
        }
    }

    fn fingerprint(&self) -> u64 {
        // FNV-1a over labels and raw input bits
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        eat(self.inputs.rows() as u64);
        eat(self.inputs.cols() as u64);
        for &l in &self.labels {
            eat(l as u64);
        }
        for x in self.inputs.as_slice() {
            eat(x.to_bits());
        }
        h
    }
}

/// Per-layer weight and bias gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

pub type Gradients = Vec<LayerGradient>;

/// Result of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: DenseMatrix,
    pub probabilities: DenseMatrix,
    pub loss: f64,
    /// Per-example cross-entropy.
    pub sample_losses: Vec<f64>,
}

impl ForwardOutput {
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let correct = (0..self.logits.rows())
            .filter(|&i| argmax(self.logits.row(i)) == labels[i])
            .count();
        correct as f64 / labels.len() as f64
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    fingerprint: u64,
    input: DenseMatrix,
    pre_activations: Vec<DenseMatrix>,
    activations: Vec<DenseMatrix>,
    probabilities: DenseMatrix,
}

/// Ordered dense layers plus the activations of the last cached forward pass.
///
/// Any mutable access to the layers drops the cache, so [`Network::backward`]
/// can only run against activations computed with the current weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<DenseLayer>,
    #[serde(skip)]
    cache: Option<ForwardCache>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Network {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::invalid(format!(
                    "layer {l}: bias length {} vs {} outputs",
                    layer.bias.len(),
                    layer.output_dim()
                )));
            }
            if layer.activation == Activation::SoftmaxOutput && l + 1 != layers.len() {
                return Err(Error::invalid(format!(
                    "layer {l}: softmax output is only allowed on the final layer"
                )));
            }
            if l > 0 && layers[l - 1].output_dim() != layer.input_dim() {
                return Err(Error::invalid(format!(
                    "layer {l}: expects {} inputs but layer {} produces {}",
                    layer.input_dim(),
                    l - 1,
                    layers[l - 1].output_dim()
                )));
            }
            if !layer.weight.all_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!("layer {l}: non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    /// MLP with the given widths (`[d0, d1, ..., dL]`), `hidden` activations
    /// and a softmax output layer. Weights are uniform on `[−s, s]` with
    /// `s = √(2 / d_in)`, biases zero.
    pub fn mlp(widths: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
        }
        if hidden == Activation::SoftmaxOutput {
            return Err(Error::invalid("softmax is not a hidden activation"));
        }
        let mut rng = rng::seeded(seed, rng::stream::INIT);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (d_in, d_out) = (w[0], w[1]);
                let s = (2.0 / d_in as f64).sqrt();
                let weight = DenseMatrix::from_fn(d_out, d_in, |_, _| rng.random_range(-s..=s));
                let activation = if l + 2 == widths.len() {
                    Activation::SoftmaxOutput
                } else {
                    hidden
                };
                DenseLayer {
                    weight,
                    bias: vec![0.0; d_out],
                    activation,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to one layer; invalidates cached activations.
    pub fn layer_mut(&mut self, l: usize) -> &mut DenseLayer {
        self.cache = None;
        &mut self.layers[l]
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        self.cache = None;
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::output_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Offset of each layer's parameters in the flattened vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for layer in &self.layers {
            offsets.push(acc);
            acc += layer.param_count();
        }
        offsets
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        self.cache = None;
        let mut at = 0;
        for layer in &mut self.layers {
            let nw = layer.weight.rows() * layer.weight.cols();
            layer
                .weight
                .as_mut_slice()
                .copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn weight_norm(&self) -> f64 {
        crate::linalg::norm(&self.flatten())
    }

    /// Activations of every layer from the last cached forward pass
    /// (`n × d_l`; the final entry is the logit matrix).
    pub fn cached_activations(&self) -> Option<&[DenseMatrix]> {
        self.cache.as_ref().map(|c| c.activations.as_slice())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.inputs.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "batch width {} does not match network input {}",
                batch.inputs.cols(),
                self.input_dim()
            )));
        }
        if batch.labels.len() != batch.inputs.rows() {
            return Err(Error::invalid("batch labels/inputs length mismatch"));
        }
        let classes = self.output_dim();
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(())
    }

    fn run(&self, batch: &Batch) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>, ForwardOutput)> {
        self.check_batch(batch)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().unwrap_or(&batch.inputs);
            let mut z = input.matmul_t(&layer.weight)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let a = if matches!(layer.activation, Activation::Relu) {
                let mut a = z.clone();
                a.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
                a
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        let logits = post.last().expect("non-empty").clone();
        let (probabilities, sample_losses) = softmax_cross_entropy(&logits, &batch.labels);
        let loss = if sample_losses.is_empty() {
            0.0
        } else {
            sample_losses.iter().sum::<f64>() / sample_losses.len() as f64
        };
        Ok((
            pre,
            post,
            ForwardOutput {
                logits,
                probabilities,
                loss,
                sample_losses,
            },
        ))
    }

    /// Forward pass that caches per-layer activations for covariance
    /// computation and [`Network::backward`].
    pub fn forward(&mut self, batch: &Batch) -> Result<ForwardOutput> {
        let (pre, post, out) = self.run(batch)?;
        self.cache = Some(ForwardCache {
            fingerprint: batch.fingerprint(),
            input: batch.inputs.clone(),
            pre_activations: pre,
            activations: post,
            probabilities: out.probabilities.clone(),
        });
        Ok(out)
    }

    /// Forward pass without touching the cache.
    pub fn evaluate(&self, batch: &Batch) -> Result<ForwardOutput> {
        self.run(batch).map(|(_, _, out)| out)
    }

    /// Exact gradients of the mean cross-entropy on `batch`, using the
    /// activations cached by the preceding [`Network::forward`] call on the
    /// same batch.
    pub fn backward(&self, batch: &Batch) -> Result<Gradients> {
        let cache = self.cache.as_ref().ok_or_else(|| {
            Error::Precondition("backward called without a cached forward pass".into())
        })?;
        if cache.fingerprint != batch.fingerprint() {
            return Err(Error::Precondition(
                "backward called with a batch different from the cached forward pass".into(),
            ));
        }
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("backward on an empty batch"));
        }
        // dL/dlogits = (softmax − onehot) / n
        let mut delta = cache.probabilities.clone();
        for (i, &y) in batch.labels.iter().enumerate() {
            delta[(i, y)] -= 1.0;
        }
        delta.scale(1.0 / n as f64);

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                let z = &cache.pre_activations[l];
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= layer.activation.derivative(zv);
                }
            }
            let input = if l == 0 {
                &cache.input
            } else {
                &cache.activations[l - 1]
            };
            let weight = delta.t_matmul(input)?;
            let mut bias = vec![0.0; layer.output_dim()];
            for i in 0..delta.rows() {
                for (b, d) in bias.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            if l > 0 {
                delta = delta.matmul(&layer.weight)?;
            }
            grads.push(LayerGradient { weight, bias });
        }
        grads.reverse();
        Ok(grads)
    }

    /// Which ReLU units are active on `batch`, per layer (empty for layers
    /// without ReLU).
    pub fn activation_pattern(&self, batch: &Batch) -> Result<Vec<Vec<bool>>> {
        let (pre, _, _) = self.run(batch)?;
        Ok(self
            .layers
            .iter()
            .zip(&pre)
            .map(|(layer, z)| match layer.activation {
                Activation::Relu => z.as_slice().iter().map(|&v| v > 0.0).collect(),
                _ => Vec::new(),
            })
            .collect())
    }

    /// Gradients of the loss with every ReLU gated by `pattern` instead of
    /// by the sign of its own input. This is the smooth piece of the loss
    /// that contains the point where `pattern` was taken.
    pub fn gradients_with_pattern(
        &self,
        batch: &Batch,
        pattern: &[Vec<bool>],
    ) -> Result<Gradients> {
        self.check_batch(batch)?;
        if pattern.len() != self.layers.len() {
            return Err(Error::invalid(
                "activation pattern has the wrong number of layers",
            ));
        }
        let n = batch.len();
        if n == 0 {
            return Err(Error::invalid("gradients on an empty batch"));
        }
        let gate = |l: usize, z: &mut DenseMatrix| -> Result<()> {
            if self.layers[l].activation == Activation::Relu {
                if pattern[l].len() != z.as_slice().len() {
                    return Err(Error::invalid(
                        "activation pattern does not match the batch",
                    ));
                }
                for (v, &on) in z.as_mut_slice().iter_mut().zip(&pattern[l]) {
                    if !on {
                        *v = 0.0;
                    }
                }
            }
            Ok(())
        };
        let mut post: Vec<DenseMatrix> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = post.last().unwrap_or(&batch.inputs);
            let mut z = input.matmul_t(&layer.weight)?;
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            gate(l, &mut z)?;
            post.push(z);
        }
        let logits = post.last().expect("non-empty");
        let (mut delta, _) = softmax_cross_entropy(logits, &batch.labels);
        for (i, &y) in batch.labels.iter().enumerate() {
            delta[(i, y)] -= 1.0;
        }
        delta.scale(1.0 / n as f64);
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            gate(l, &mut delta)?;
            let input = if l == 0 { &batch.inputs } else { &post[l - 1] };
            let weight = delta.t_matmul(input)?;
            let mut bias = vec![0.0; self.layers[l].output_dim()];
            for i in 0..delta.rows() {
                for (b, d) in bias.iter_mut().zip(delta.row(i)) {
                    *b += d;
                }
            }
            if l > 0 {
                delta = delta.matmul(&self.layers[l].weight)?;
            }
            grads.push(LayerGradient { weight, bias });
        }
        grads.reverse();
        Ok(grads)
    }

    /// Forward plus backward; returns the loss and gradients.
    pub fn loss_and_gradients(&mut self, batch: &Batch) -> Result<(ForwardOutput, Gradients)> {
        let out = self.forward(batch)?;
        let grads = self.backward(batch)?;
        Ok((out, grads))
    }
}

pub fn flatten_gradients(grads: &[LayerGradient]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weight.as_slice());
        out.extend_from_slice(&g.bias);
    }
    out
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax and per-row cross-entropy `logsumexp(z) − z_y`.
fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> (DenseMatrix, Vec<f64>) {
    let mut probs = logits.clone();
    let mut losses = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row_mut(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        losses.push(m + sum.ln() - logits[(i, y)]);
    }
    (probs, losses)
}
