//! Small differentiable classifiers with exact per-example gradients.
//!
//! Parameters are stored flat. The canonical layout walks layers in forward order and,
//! within a layer, stores the `out x in` weight matrix row-major followed by the bias.
//! Tensor names are `layer{i}.weight` and `layer{i}.bias`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{Phase, Purpose, StreamId};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("parameter vector has {got} values, layout expects {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("example {index}: expected {expected} features, got {got}")]
    FeatureDim { index: usize, expected: usize, got: usize },
    #[error("example {index}: label {label} out of range for {classes} classes")]
    Label { index: usize, label: usize, classes: usize },
    #[error("example {index}: non-finite activation")]
    NonFinite { index: usize },
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logistic_regression" | "logreg" => Ok(ModelKind::LogisticRegression),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dims: Vec::new(),
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize, activation: Activation) -> Self {
        Self { kind: ModelKind::Mlp, input_dim, hidden_dims, num_classes, activation }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidSpec("input_dim must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidSpec("num_classes must be at least 2".into()));
        }
        match self.kind {
            ModelKind::LogisticRegression if !self.hidden_dims.is_empty() => {
                Err(ModelError::InvalidSpec("logistic regression takes no hidden layers".into()))
            }
            ModelKind::Mlp if self.hidden_dims.is_empty() => {
                Err(ModelError::InvalidSpec("mlp needs at least one hidden layer".into()))
            }
            _ if self.hidden_dims.contains(&0) => Err(ModelError::InvalidSpec("hidden layer of width 0".into())),
            _ => Ok(()),
        }
    }

    /// `(fan_in, fan_out)` of each affine layer, in forward order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }

    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        for (l, (fan_in, fan_out)) in self.layer_dims().into_iter().enumerate() {
            entries.push(TensorShape { name: format!("layer{l}.weight"), shape: vec![fan_out, fan_in] });
            entries.push(TensorShape { name: format!("layer{l}.bias"), shape: vec![fan_out] });
        }
        Layout { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorShape {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered tensor names and shapes describing a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    pub entries: Vec<TensorShape>,
}

impl Layout {
    pub fn total(&self) -> usize {
        self.entries.iter().map(TensorShape::numel).sum()
    }
}

/// Text form: one `name:d0xd1` line per tensor.
impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            writeln!(f, "{}:{}", e.name, dims.join("x"))?;
        }
        Ok(())
    }
}

impl std::str::FromStr for Layout {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let (name, dims) = line.rsplit_once(':').ok_or_else(|| format!("bad layout line `{line}`"))?;
            let shape = if dims.is_empty() {
                Vec::new()
            } else {
                dims.split('x')
                    .map(|d| d.parse::<usize>().map_err(|e| format!("bad dimension `{d}`: {e}")))
                    .collect::<Result<Vec<_>, _>>()?
            };
            entries.push(TensorShape { name: name.to_string(), shape });
        }
        Ok(Layout { entries })
    }
}

/// One tensor unpacked from a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat parameters (or a flat gradient) with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<Layout>,
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self, ModelError> {
        let expected = layout.total();
        if values.len() != expected {
            return Err(ModelError::ParamCount { expected, got: values.len() });
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.total();
        Self { layout, values: vec![0.0; n] }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits the flat vector into its named tensors.
    pub fn unflatten(&self) -> Vec<Tensor> {
        let mut offset = 0;
        self.layout
            .entries
            .iter()
            .map(|e| {
                let n = e.numel();
                let t = Tensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: self.values[offset..offset + n].to_vec(),
                };
                offset += n;
                t
            })
            .collect()
    }

    /// Inverse of [`ParameterVector::unflatten`].
    pub fn flatten(layout: Arc<Layout>, tensors: &[Tensor]) -> Result<Self, ModelError> {
        let mismatch = tensors.len() != layout.entries.len()
            || tensors.iter().zip(&layout.entries).any(|(t, e)| t.name != e.name || t.shape != e.shape);
        if mismatch {
            return Err(ModelError::InvalidSpec("tensors do not match layout".into()));
        }
        let values: Vec<f64> = tensors.iter().flat_map(|t| t.values.iter().copied()).collect();
        Self::new(layout, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self { features, label }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterVector, ModelError> {
    spec.validate()?;
    let layout = Arc::new(spec.layout());
    let mut rng = StreamId::new(seed, Phase::Init, Purpose::Params, 0).rng();
    let mut values = Vec::with_capacity(layout.total());
    for (fan_in, fan_out) in spec.layer_dims() {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParameterVector::new(layout, values)
}

struct LayerView<'a> {
    fan_in: usize,
    fan_out: usize,
    weight: &'a [f64],
    bias: &'a [f64],
    offset: usize,
}

fn layers<'a>(spec: &ModelSpec, params: &'a [f64]) -> Vec<LayerView<'a>> {
    let mut offset = 0;
    spec.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let w = fan_in * fan_out;
            let view = LayerView {
                fan_in,
                fan_out,
                weight: &params[offset..offset + w],
                bias: &params[offset + w..offset + w + fan_out],
                offset,
            };
            offset += w + fan_out;
            view
        })
        .collect()
}

fn check_params(spec: &ModelSpec, params: &ParameterVector) -> Result<(), ModelError> {
    spec.validate()?;
    let expected = spec.param_count();
    if params.len() != expected {
        return Err(ModelError::ParamCount { expected, got: params.len() });
    }
    Ok(())
}

fn check_example(spec: &ModelSpec, index: usize, ex: &Example) -> Result<(), ModelError> {
    if ex.features.len() != spec.input_dim {
        return Err(ModelError::FeatureDim { index, expected: spec.input_dim, got: ex.features.len() });
    }
    if ex.label >= spec.num_classes {
        return Err(ModelError::Label { index, label: ex.label, classes: spec.num_classes });
    }
    Ok(())
}

/// Forward pass keeping pre-activations and activations of every layer.
/// `acts[0]` is the input, `pre.last()` are the logits.
fn forward(spec: &ModelSpec, layers: &[LayerView<'_>], x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut acts = vec![x.to_vec()];
    let mut pre = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let input = &acts[l];
        let z: Vec<f64> = (0..layer.fan_out)
            .map(|o| {
                let row = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
                layer.bias[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        if l + 1 < layers.len() {
            acts.push(z.iter().map(|&v| spec.activation.apply(v)).collect());
        }
        pre.push(z);
    }
    (pre, acts)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Logits for one example.
pub fn logits(spec: &ModelSpec, params: &ParameterVector, ex: &Example) -> Result<Vec<f64>, ModelError> {
    check_params(spec, params)?;
    check_example(spec, 0, ex)?;
    let views = layers(spec, params.values());
    let (mut pre, _) = forward(spec, &views, &ex.features);
    Ok(pre.pop().unwrap_or_default())
}

/// Cross-entropy loss of one example and its gradient, written into `grad`.
fn example_loss_grad(
    spec: &ModelSpec,
    views: &[LayerView<'_>],
    index: usize,
    ex: &Example,
    grad: &mut [f64],
) -> Result<f64, ModelError> {
    check_example(spec, index, ex)?;
    let (pre, acts) = forward(spec, views, &ex.features);
    let logits = pre.last().expect("at least one layer");
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite { index });
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[ex.label];

    let mut delta: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    delta[ex.label] -= 1.0;

    for l in (0..views.len()).rev() {
        let layer = &views[l];
        let input = &acts[l];
        let (gw, gb) = grad[layer.offset..layer.offset + layer.fan_in * layer.fan_out + layer.fan_out]
            .split_at_mut(layer.fan_in * layer.fan_out);
        for (o, &d) in delta.iter().enumerate() {
            let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
            for (g, &a) in row.iter_mut().zip(input) {
                *g = d * a;
            }
            gb[o] = d;
        }
        if l > 0 {
            let z_prev = &pre[l - 1];
            let a_prev = &acts[l];
            let mut next = vec![0.0; layer.fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for ((n, &z), &a) in next.iter_mut().zip(z_prev).zip(a_prev) {
                *n *= spec.activation.derivative(z, a);
            }
            delta = next;
        }
    }
    if !loss.is_finite() {
        return Err(ModelError::NonFinite { index });
    }
    Ok(loss)
}

/// Per-example losses and flat gradients, in batch order.
pub fn per_example_losses_and_grads(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[&Example],
) -> Result<Vec<(f64, Vec<f64>)>, ModelError> {
    check_params(spec, params)?;
    let views = layers(spec, params.values());
    let d = params.len();
    let results: Vec<Result<(f64, Vec<f64>), ModelError>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut g = vec![0.0; d];
            example_loss_grad(spec, &views, i, ex, &mut g).map(|loss| (loss, g))
        })
        .collect();
    results.into_iter().collect()
}

/// Mean cross-entropy over `batch` and one exact gradient per example.
pub fn loss_and_per_sample_grads(
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[Example],
) -> Result<(f64, Vec<ParameterVector>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let refs: Vec<&Example> = batch.iter().collect();
    let per = per_example_losses_and_grads(spec, params, &refs)?;
    let mean_loss = per.iter().map(|(l, _)| l).sum::<f64>() / batch.len() as f64;
    let grads = per
        .into_iter()
        .map(|(_, g)| ParameterVector { layout: Arc::clone(params.layout()), values: g })
        .collect();
    Ok((mean_loss, grads))
}

/// Mean cross-entropy over `data`.
pub fn mean_loss(spec: &ModelSpec, params: &ParameterVector, data: &[Example]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_params(spec, params)?;
    let views = layers(spec, params.values());
    let losses: Vec<Result<f64, ModelError>> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            check_example(spec, i, ex)?;
            let (pre, _) = forward(spec, &views, &ex.features);
            let z = pre.last().expect("at least one layer");
            Ok(log_sum_exp(z) - z[ex.label])
        })
        .collect();
    let losses: Vec<f64> = losses.into_iter().collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Fraction of examples whose arg-max logit equals the label.
pub fn predict_accuracy(spec: &ModelSpec, params: &ParameterVector, data: &[Example]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    check_params(spec, params)?;
    let views = layers(spec, params.values());
    let hits: Vec<Result<bool, ModelError>> = data
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            check_example(spec, i, ex)?;
            let (pre, _) = forward(spec, &views, &ex.features);
            Ok(argmax(pre.last().expect("at least one layer")) == ex.label)
        })
        .collect();
    let correct = hits.into_iter().collect::<Result<Vec<bool>, _>>()?.into_iter().filter(|&h| h).count();
    Ok(correct as f64 / data.len() as f64)
}
