//! Fully connected networks trained by single-sample SGD, either on crossbar
//! arrays (stochastic pulse updates) or on exact floating-point matrices.
//!
//! Both backends run the same forward/backward code; they differ only in how
//! a layer reads its weights and applies the `δ xᵀ` update.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::crossbar::{CrossbarArray, KaimingUniform, PulsePlan, UpdateStats};
use crate::data_io::LabeledDataset;
use crate::device_model::DeviceModel;
use crate::error::{Error, Result};
use crate::seeding::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// Softmax, paired with cross-entropy loss; output layer only.
    SoftmaxOutput,
    Identity,
}

impl Activation {
    fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => z.to_vec(),
            Activation::SoftmaxOutput => softmax(z),
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
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// ReLU hidden layers followed by a softmax output.
pub fn mlp(widths: &[usize]) -> Vec<LayerSpec> {
    let last = widths.len().saturating_sub(2);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i == last {
                Activation::SoftmaxOutput
            } else {
                Activation::Relu
            };
            LayerSpec::new(w[0], w[1], act)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Backend {
    Float {
        learning_rate: f64,
    },
    Crossbar {
        device: Arc<DeviceModel>,
        k: f64,
        plan: PulsePlan,
    },
}

/// Plain row-major weight matrix for the floating-point baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    fn backward(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &d) in self.data.chunks_exact(self.cols).zip(delta) {
            if d != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += d * w;
                }
            }
        }
        out
    }

    /// `W ← W - lr δ xᵀ`.
    fn sgd_step(&mut self, x: &[f64], delta: &[f64], lr: f64) {
        for (row, &d) in self.data.chunks_exact_mut(self.cols).zip(delta) {
            if d == 0.0 {
                continue;
            }
            let s = lr * d;
            for (w, v) in row.iter_mut().zip(x) {
                *w -= s * v;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum LayerWeights {
    Float {
        weights: DenseMatrix,
        learning_rate: f64,
    },
    Crossbar {
        array: CrossbarArray,
        plan: PulsePlan,
    },
}

impl LayerWeights {
    fn read_weights(&self) -> Vec<f64> {
        match self {
            LayerWeights::Float { weights, .. } => weights.data.clone(),
            LayerWeights::Crossbar { array, .. } => array.read_weights(),
        }
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            LayerWeights::Float { weights, .. } => Ok(weights.forward(x)),
            LayerWeights::Crossbar { array, .. } => array.forward(x),
        }
    }

    fn backward(&self, delta: &[f64]) -> Result<Vec<f64>> {
        match self {
            LayerWeights::Float { weights, .. } => Ok(weights.backward(delta)),
            LayerWeights::Crossbar { array, .. } => array.backward(delta),
        }
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        delta: &[f64],
        rng: &mut R,
    ) -> Result<UpdateStats> {
        match self {
            LayerWeights::Float {
                weights,
                learning_rate,
            } => {
                weights.sgd_step(x, delta, *learning_rate);
                Ok(UpdateStats::default())
            }
            LayerWeights::Crossbar { array, plan } => array.stochastic_update(x, delta, plan, rng),
        }
    }
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Layer inputs, with the bias entry appended when the network has one.
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn prediction(&self) -> usize {
        argmax(&self.output)
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre_activations[layer]
    }
}

/// What one layer needs for its `δ xᵀ` update.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub delta: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<LayerWeights>,
    bias: bool,
    crossbar: bool,
    generation: u64,
}

impl Network {
    /// Kaiming-uniform initialization; bias weights (an always-on input
    /// appended to every layer) start at zero.
    pub fn new<R: Rng + ?Sized>(
        specs: Vec<LayerSpec>,
        backend: &Backend,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        validate_specs(&specs)?;
        let extra = bias as usize;
        let weights = specs
            .iter()
            .map(|s| {
                let sampler = KaimingUniform::new(s.in_dim);
                let mut w = Vec::with_capacity(s.out_dim * (s.in_dim + extra));
                for _ in 0..s.out_dim {
                    for _ in 0..s.in_dim {
                        w.push(sampler.sample(rng));
                    }
                    if bias {
                        w.push(0.0);
                    }
                }
                w
            })
            .collect();
        Self::from_weights(specs, backend, bias, weights)
    }

    /// Builds a network from explicit row-major weights (bias column last).
    pub fn from_weights(
        specs: Vec<LayerSpec>,
        backend: &Backend,
        bias: bool,
        weights: Vec<Vec<f64>>,
    ) -> Result<Self> {
        validate_specs(&specs)?;
        if weights.len() != specs.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                specs.len()
            )));
        }
        let extra = bias as usize;
        let layers = specs
            .iter()
            .zip(weights)
            .map(|(s, w)| {
                let (rows, cols) = (s.out_dim, s.in_dim + extra);
                Ok(match backend {
                    Backend::Float { learning_rate } => LayerWeights::Float {
                        weights: DenseMatrix::new(rows, cols, w)?,
                        learning_rate: *learning_rate,
                    },
                    Backend::Crossbar { device, k, plan } => LayerWeights::Crossbar {
                        array: CrossbarArray::from_weights(rows, cols, *k, device.clone(), &w)?,
                        plan: *plan,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            specs,
            layers,
            bias,
            crossbar: matches!(backend, Backend::Crossbar { .. }),
            generation: 0,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn has_bias(&self) -> bool {
        self.bias
    }

    pub fn is_crossbar(&self) -> bool {
        self.crossbar
    }

    pub fn input_dim(&self) -> usize {
        self.specs[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim
    }

    /// Effective row-major weights of one layer.
    pub fn read_weights(&self, layer: usize) -> Vec<f64> {
        self.layers[layer].read_weights()
    }

    pub fn crossbar(&self, layer: usize) -> Option<&CrossbarArray> {
        match &self.layers[layer] {
            LayerWeights::Crossbar { array, .. } => Some(array),
            LayerWeights::Float { .. } => None,
        }
    }

    /// Device-weighted fraction of conductances pinned at a window edge.
    pub fn saturation_fraction(&self) -> f64 {
        let (sat, total) = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerWeights::Crossbar { array, .. } => Some(array),
                LayerWeights::Float { .. } => None,
            })
            .fold((0.0, 0usize), |(s, t), a| {
                let n = a.cells().len();
                (s + a.saturation_fraction() * n as f64, t + n)
            });
        if total == 0 {
            0.0
        } else {
            sat / total as f64
        }
    }

    fn with_bias(&self, x: &[f64]) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + 1);
        v.extend_from_slice(x);
        if self.bias {
            v.push(1.0);
        }
        v
    }

    /// `a = φ(W x)` layer by layer, keeping what backpropagation needs.
    pub fn forward_pass(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if self.crossbar {
            if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(Error::NegativeInput { index, value });
            }
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (spec, layer) in self.specs.iter().zip(&self.layers) {
            let input = self.with_bias(&a);
            let z = layer.forward(&input)?;
            a = spec.activation.apply(&z);
            inputs.push(input);
            pre_activations.push(z);
        }
        Ok(ForwardCache {
            generation: self.generation,
            inputs,
            pre_activations,
            output: a,
        })
    }

    /// Propagates `∂L/∂z` of the output layer down the stack:
    /// `δ⁽ⁱ⁻¹⁾ = W⁽ⁱ⁾ᵀ δ⁽ⁱ⁾ ⊙ φ'(z⁽ⁱ⁻¹⁾)`. Returns one `(δ, x)` pair per layer,
    /// ordered from input to output.
    pub fn backward_pass(
        &self,
        output_delta: &[f64],
        cache: &ForwardCache,
    ) -> Result<Vec<LayerGradient>> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        if output_delta.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: output_delta.len(),
            });
        }
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = output_delta.to_vec();
        for i in (0..n).rev() {
            let next = if i > 0 {
                let mut back = self.layers[i].backward(&delta)?;
                back.truncate(self.specs[i].in_dim);
                let act = self.specs[i - 1].activation;
                for (b, &z) in back.iter_mut().zip(&cache.pre_activations[i - 1]) {
                    *b *= act.derivative(z);
                }
                Some(back)
            } else {
                None
            };
            grads.push(LayerGradient {
                delta,
                input: cache.inputs[i].clone(),
            });
            match next {
                Some(d) => delta = d,
                None => break,
            }
        }
        grads.reverse();
        Ok(grads)
    }

    /// Applies every layer's `δ xᵀ` update.
    pub fn apply_gradients<R: Rng + ?Sized>(
        &mut self,
        grads: &[LayerGradient],
        rng: &mut R,
    ) -> Result<UpdateStats> {
        if grads.len() != self.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} gradients for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        let mut stats = UpdateStats::default();
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            stats += layer.update(&g.input, &g.delta, rng)?;
        }
        self.generation += 1;
        Ok(stats)
    }

    /// Update of a single layer; used by the value-function learner.
    pub fn apply_layer_gradient<R: Rng + ?Sized>(
        &mut self,
        layer: usize,
        grad: &LayerGradient,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let stats = self.layers[layer].update(&grad.input, &grad.delta, rng)?;
        self.generation += 1;
        Ok(stats)
    }

    /// One SGD step on softmax cross-entropy; returns whether the pre-update
    /// prediction was correct.
    pub fn train_sample<R: Rng + ?Sized>(
        &mut self,
        x: &[f64],
        label: usize,
        rng: &mut R,
    ) -> Result<(bool, UpdateStats)> {
        if self.specs.last().map(|s| s.activation) != Some(Activation::SoftmaxOutput) {
            return Err(Error::InvalidNetwork(
                "classification training needs a softmax output layer".into(),
            ));
        }
        let cache = self.forward_pass(x)?;
        let correct = cache.prediction() == label;
        let mut delta = cache.output.clone();
        delta[label] -= 1.0;
        let grads = self.backward_pass(&delta, &cache)?;
        let stats = self.apply_gradients(&grads, rng)?;
        Ok((correct, stats))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward_pass(x)?.prediction())
    }

    /// Cross-entropy of the softmax output against `label`.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let cache = self.forward_pass(x)?;
        Ok(cross_entropy(&cache.output, label))
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidNetwork("no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::InvalidNetwork(format!(
                "layer {i} has a zero dimension"
            )));
        }
        if s.activation == Activation::SoftmaxOutput && i + 1 != specs.len() {
            return Err(Error::InvalidNetwork(format!(
                "softmax on hidden layer {i}"
            )));
        }
    }
    if let Some(i) = specs.windows(2).position(|w| w[0].out_dim != w[1].in_dim) {
        return Err(Error::InvalidNetwork(format!(
            "layer {i} outputs {} but layer {} takes {}",
            specs[i].out_dim,
            i + 1,
            specs[i + 1].in_dim
        )));
    }
    Ok(())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn to_f64(features: &[f32], buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend(features.iter().map(|&v| v as f64));
}

/// Classification accuracy through the network's read path.
pub fn evaluate(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut buf = Vec::with_capacity(data.n_features());
    let mut correct = 0usize;
    for i in 0..data.len() {
        to_f64(data.features(i), &mut buf);
        if net.predict(&buf)? == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub images_seen: u64,
    /// Online accuracy over the images since the previous checkpoint.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub saturation_fraction: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    entries: Vec<Checkpoint>,
}

impl TrainingLog {
    pub fn push(&mut self, c: Checkpoint) {
        assert!(
            self.entries
                .last()
                .is_none_or(|l| l.images_seen < c.images_seen),
            "checkpoints must advance"
        );
        self.entries.push(c);
    }

    pub fn entries(&self) -> &[Checkpoint] {
        &self.entries
    }

    pub fn last(&self) -> Option<&Checkpoint> {
        self.entries.last()
    }

    /// CSV rows `run_id, seed, images_seen, train_acc, test_acc,
    /// saturation_fraction, elapsed_s`; header when `header` is set.
    pub fn write_csv<W: Write>(
        &self,
        run_id: usize,
        seed: u64,
        header: bool,
        mut w: W,
    ) -> Result<()> {
        if header {
            writeln!(
                w,
                "run_id,seed,images_seen,train_acc,test_acc,saturation_fraction,elapsed_s"
            )?;
        }
        for c in &self.entries {
            let test = c
                .test_accuracy
                .map(|t| format!("{t:.6}"))
                .unwrap_or_default();
            writeln!(
                w,
                "{run_id},{seed},{},{:.6},{test},{:.6},{:.3}",
                c.images_seen, c.train_accuracy, c.saturation_fraction, c.elapsed_s
            )?;
        }
        Ok(())
    }
}

/// Sequential SGD over a dataset with periodic checkpoints.
///
/// Shuffling and pulse sampling use separate streams of the same seed.
pub struct TrainingSession {
    net: Network,
    order_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    checkpoint_every: u64,
    images_seen: u64,
    window_correct: u64,
    window_seen: u64,
    stats: UpdateStats,
    log: TrainingLog,
    started: Instant,
}

impl TrainingSession {
    pub fn new(net: Network, seed: u64, checkpoint_every: u64) -> Self {
        Self {
            net,
            order_rng: stream(seed, Stream::Order),
            update_rng: stream(seed, Stream::Update),
            checkpoint_every: checkpoint_every.max(1),
            images_seen: 0,
            window_correct: 0,
            window_seen: 0,
            stats: UpdateStats::default(),
            log: TrainingLog::default(),
            started: Instant::now(),
        }
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn stats(&self) -> UpdateStats {
        self.stats
    }

    pub fn images_seen(&self) -> u64 {
        self.images_seen
    }

    /// One shuffled pass over `train`. When `test` is given, every checkpoint
    /// also records accuracy on it.
    pub fn train_epoch(
        &mut self,
        train: &LabeledDataset,
        test: Option<&LabeledDataset>,
    ) -> Result<()> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut buf = Vec::with_capacity(train.n_features());
        for idx in order {
            to_f64(train.features(idx), &mut buf);
            let (correct, stats) =
                self.net
                    .train_sample(&buf, train.label(idx), &mut self.update_rng)?;
            self.stats += stats;
            self.images_seen += 1;
            self.window_seen += 1;
            self.window_correct += correct as u64;
            if self.images_seen.is_multiple_of(self.checkpoint_every) {
                self.checkpoint(test)?;
            }
        }
        if self.window_seen > 0 {
            self.checkpoint(test)?;
        }
        Ok(())
    }

    fn checkpoint(&mut self, test: Option<&LabeledDataset>) -> Result<()> {
        let test_accuracy = test.map(|t| evaluate(&self.net, t)).transpose()?;
        self.log.push(Checkpoint {
            images_seen: self.images_seen,
            train_accuracy: self.window_correct as f64 / self.window_seen.max(1) as f64,
            test_accuracy,
            saturation_fraction: self.net.saturation_fraction(),
            elapsed_s: self.started.elapsed().as_secs_f64(),
        });
        self.window_correct = 0;
        self.window_seen = 0;
        Ok(())
    }
}
