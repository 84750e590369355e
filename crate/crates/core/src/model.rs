//! Layer specs, ConvNet/MLP presets, analog model construction, training and
//! evaluation.
//!
//! Each linear or convolutional layer may carry two analog pipelines: one on
//! its output (placed before the following activation) and one on its
//! weights and biases. Master weights stay in full precision; the weight
//! pipeline runs on every read.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, ActivationSpec};
use crate::autodiff::{Graph, NodeId, Op};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::quant::QuantNoiseSpec;
use crate::rng::{mix, RngStream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "kebab-case",
    rename_all_fields = "kebab-case",
    deny_unknown_fields
)]
pub enum LayerSpec {
    Linear {
        inputs: usize,
        outputs: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        analog: Option<QuantNoiseSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_analog: Option<QuantNoiseSpec>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        analog: Option<QuantNoiseSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weight_analog: Option<QuantNoiseSpec>,
    },
    Maxpool,
    Flatten,
    Activation {
        activation: ActivationSpec,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Activation { .. } => "activation",
        }
    }

    pub fn linear(inputs: usize, outputs: usize, noise: Option<&QuantNoiseSpec>) -> Self {
        LayerSpec::Linear {
            inputs,
            outputs,
            analog: noise.cloned(),
            weight_analog: noise.cloned(),
        }
    }

    pub fn conv(in_channels: usize, out_channels: usize, noise: Option<&QuantNoiseSpec>) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel: 3,
            padding: 1,
            analog: noise.cloned(),
            weight_analog: noise.cloned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    /// Stacked 3x3 convolutions (pooling after every pair) then linear
    /// layers; six convs and three linears by default.
    ConvnetMini,
    /// `linear-layers` fully connected layers.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Preset {
    pub name: PresetName,
    #[serde(default = "default_conv_layers")]
    pub conv_layers: usize,
    #[serde(default = "default_linear_layers")]
    pub linear_layers: usize,
    /// Channels of the first conv pair; later pairs double it.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Width of the first hidden linear layer.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
}

fn default_conv_layers() -> usize {
    6
}

fn default_linear_layers() -> usize {
    3
}

fn default_width() -> usize {
    8
}

fn default_hidden() -> usize {
    64
}

impl Preset {
    pub fn convnet_mini() -> Self {
        Preset {
            name: PresetName::ConvnetMini,
            conv_layers: default_conv_layers(),
            linear_layers: default_linear_layers(),
            width: default_width(),
            hidden: default_hidden(),
        }
    }

    pub fn mlp(linear_layers: usize) -> Self {
        Preset {
            name: PresetName::Mlp,
            conv_layers: 0,
            linear_layers,
            ..Self::convnet_mini()
        }
    }

    /// Expands into an explicit layer list where every conv/linear layer
    /// carries `noise` on its output and weights.
    pub fn layers(
        &self,
        input_shape: &[usize],
        classes: usize,
        activation: &ActivationSpec,
        noise: Option<&QuantNoiseSpec>,
    ) -> Result<Vec<LayerSpec>> {
        if self.linear_layers == 0 {
            return Err(Error::field("linear-layers", "must be >= 1"));
        }
        if self.width == 0 || self.hidden == 0 {
            return Err(Error::field("width", "width and hidden must be >= 1"));
        }
        let convs = match self.name {
            PresetName::ConvnetMini => self.conv_layers,
            PresetName::Mlp => 0,
        };
        let act = LayerSpec::Activation {
            activation: *activation,
        };
        let mut layers = Vec::new();
        let mut flat = match (convs, input_shape) {
            (0, _) => {
                if input_shape.len() > 1 {
                    layers.push(LayerSpec::Flatten);
                }
                input_shape.iter().product()
            }
            (_, &[c, h, w]) => {
                let (mut ch, mut h, mut w) = (c, h, w);
                for j in 0..convs {
                    let out = self.width << (j / 2);
                    layers.push(LayerSpec::conv(ch, out, noise));
                    layers.push(act.clone());
                    ch = out;
                    if j % 2 == 1 && h >= 4 && w >= 4 {
                        layers.push(LayerSpec::Maxpool);
                        h /= 2;
                        w /= 2;
                    }
                }
                layers.push(LayerSpec::Flatten);
                ch * h * w
            }
            (_, shape) => {
                return Err(Error::field(
                    "input-shape",
                    format!("convolutions need [channels, height, width], got {shape:?}"),
                ))
            }
        };
        let mut hidden = self.hidden;
        for _ in 1..self.linear_layers {
            layers.push(LayerSpec::linear(flat, hidden, noise));
            layers.push(act.clone());
            flat = hidden;
            if self.name == PresetName::ConvnetMini {
                hidden = (hidden / 2).max(classes);
            }
        }
        layers.push(LayerSpec::linear(flat, classes, noise));
        Ok(layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelConfig {
    /// Per-sample shape: `[channels, height, width]` or `[features]`.
    pub input_shape: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    /// Pipeline applied to the raw sensor input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_analog: Option<QuantNoiseSpec>,
    /// Records which preset generated `layers`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Parameters start uniform in `+-init_gain / sqrt(fan_in)`.
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

/// He-uniform bound `sqrt(6 / fan_in)`.
pub const DEFAULT_INIT_GAIN: f64 = 2.449_489_742_783_178;

fn default_init_gain() -> f64 {
    DEFAULT_INIT_GAIN
}

impl ModelConfig {
    /// A fully expanded preset with `noise` at the input and on every
    /// conv/linear layer.
    pub fn from_preset(
        preset: Preset,
        input_shape: &[usize],
        classes: usize,
        activation: &ActivationSpec,
        noise: Option<&QuantNoiseSpec>,
    ) -> Result<Self> {
        Ok(ModelConfig {
            input_shape: input_shape.to_vec(),
            classes,
            layers: preset.layers(input_shape, classes, activation, noise)?,
            input_analog: noise.cloned(),
            preset: Some(preset),
            init_gain: DEFAULT_INIT_GAIN,
        })
    }

    /// Copy with every activation layer replaced by `spec`.
    pub fn with_activation(&self, spec: &ActivationSpec) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            if let LayerSpec::Activation { activation } = layer {
                *activation = *spec;
            }
        }
        out
    }

    /// Output width of the layer chain, checking every link.
    pub fn check(&self) -> Result<usize> {
        if self.classes < 2 {
            return Err(Error::field("classes", "must be >= 2"));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(Error::field("init-gain", format!("{} must be positive", self.init_gain)));
        }
        if self.layers.is_empty() {
            return Err(Error::field("layers", "model has no layers"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::field(
                "input-shape",
                format!("{:?} has an empty extent", self.input_shape),
            ));
        }
        if let Some(spec) = &self.input_analog {
            spec.resolve().map_err(|e| e.within("input-analog"))?;
        }
        let mut shape = self.input_shape.clone();
        for (j, layer) in self.layers.iter().enumerate() {
            shape = next_shape(j, layer, &shape)?;
        }
        match shape.as_slice() {
            &[d] if d == self.classes => Ok(d),
            other => Err(Error::field(
                "layers",
                format!("final output {other:?} does not match {} classes", self.classes),
            )),
        }
    }
}

fn layer_error(j: usize, layer: &LayerSpec, detail: String) -> Error {
    Error::ShapeMismatch {
        node: format!("layers[{j}] ({})", layer.kind()),
        detail,
    }
}

fn next_shape(j: usize, layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>> {
    let resolve = |spec: &Option<QuantNoiseSpec>, what: &str| -> Result<()> {
        match spec {
            Some(s) => s
                .resolve()
                .map(|_| ())
                .map_err(|e| e.within(&format!("layers[{j}].{what}"))),
            None => Ok(()),
        }
    };
    match layer {
        LayerSpec::Linear {
            inputs,
            outputs,
            analog,
            weight_analog,
        } => {
            resolve(analog, "analog")?;
            resolve(weight_analog, "weight-analog")?;
            if *outputs == 0 {
                return Err(layer_error(j, layer, "zero outputs".into()));
            }
            if shape != [*inputs] {
                return Err(layer_error(
                    j,
                    layer,
                    format!("expects [{inputs}] input, chain delivers {shape:?}"),
                ));
            }
            Ok(vec![*outputs])
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            analog,
            weight_analog,
        } => {
            resolve(analog, "analog")?;
            resolve(weight_analog, "weight-analog")?;
            let &[c, h, w] = shape else {
                return Err(layer_error(j, layer, format!("needs an image, chain delivers {shape:?}")));
            };
            if c != *in_channels || *out_channels == 0 || *kernel == 0 {
                return Err(layer_error(
                    j,
                    layer,
                    format!("expects {in_channels} channels, chain delivers {c}"),
                ));
            }
            if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                return Err(layer_error(j, layer, format!("kernel {kernel} exceeds padded {h}x{w}")));
            }
            Ok(vec![*out_channels, h + 2 * padding + 1 - kernel, w + 2 * padding + 1 - kernel])
        }
        LayerSpec::Maxpool => match *shape {
            [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
            _ => Err(layer_error(j, layer, format!("cannot pool {shape:?}"))),
        },
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
        LayerSpec::Activation { activation } => {
            activation
                .validate()
                .map_err(|e| e.within(&format!("layers[{j}].activation")))?;
            if activation.kind.is_glu() {
                return Err(layer_error(
                    j,
                    layer,
                    format!("`{}` is gated; only elementwise activations stack", activation.kind.name()),
                ));
            }
            Ok(shape.to_vec())
        }
    }
}

/// A built network: the graph plus handles to its input, labels, logits,
/// loss and trainable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    graph: Graph,
    config: ModelConfig,
    input: NodeId,
    logits: NodeId,
    loss: NodeId,
    params: Vec<(String, NodeId)>,
}

/// Builds the graph for `config` with parameters drawn uniformly from
/// `+-init_gain/sqrt(fan_in)` using `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.check()?;
    let init = RngStream::new(seed, 0x1417);
    let mut g = Graph::new();
    let mut site = 0u64;
    let mut next_site = || {
        site += 1;
        site
    };
    let input = g.input("x");
    let labels = g.input("y");
    let mut h = input;
    if let Some(spec) = &config.input_analog {
        h = g.analog(h, spec.resolve()?, next_site());
    }
    let mut params = Vec::new();
    for (j, layer) in config.layers.iter().enumerate() {
        match layer {
            LayerSpec::Linear {
                inputs,
                outputs,
                analog,
                weight_analog,
            } => {
                let fan_in = *inputs;
                let (w, b) = init_params(&mut g, &init, config.init_gain, j, vec![*inputs, *outputs], *outputs, fan_in);
                params.push((format!("layers.{j}.weight"), w));
                params.push((format!("layers.{j}.bias"), b));
                let (w, b) = read_weights(&mut g, w, b, weight_analog, &mut next_site)?;
                let z = g.matmul(h, w);
                h = g.add(z, b);
                if let Some(spec) = analog {
                    h = g.analog(h, spec.resolve()?, next_site());
                }
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
                analog,
                weight_analog,
            } => {
                let fan_in = in_channels * kernel * kernel;
                let shape = vec![*out_channels, *in_channels, *kernel, *kernel];
                let (w, b) = init_params(&mut g, &init, config.init_gain, j, shape, *out_channels, fan_in);
                params.push((format!("layers.{j}.weight"), w));
                params.push((format!("layers.{j}.bias"), b));
                let (w, b) = read_weights(&mut g, w, b, weight_analog, &mut next_site)?;
                let z = g.conv2d(h, w, *padding);
                h = g.add(z, b);
                if let Some(spec) = analog {
                    h = g.analog(h, spec.resolve()?, next_site());
                }
            }
            LayerSpec::Maxpool => h = g.max_pool2(h),
            LayerSpec::Flatten => h = g.flatten(h),
            LayerSpec::Activation { activation } => h = g.activation(h, *activation),
        }
    }
    g.name(h, "logits");
    let loss = g.softmax_cross_entropy(h, labels);
    g.name(loss, "loss");
    Ok(Model {
        graph: g,
        config: config.clone(),
        input,
        logits: h,
        loss,
        params,
    })
}

fn init_params(
    g: &mut Graph,
    init: &RngStream,
    gain: f64,
    layer: usize,
    weight_shape: Vec<usize>,
    outputs: usize,
    fan_in: usize,
) -> (NodeId, NodeId) {
    let bound = gain / libm::sqrt(fan_in as f64);
    let mut s = init.child(layer as u64).generator();
    let n: usize = weight_shape.iter().product();
    let w: Vec<f64> = (0..n).map(|_| s.uniform_in(-bound, bound)).collect();
    let b: Vec<f64> = (0..outputs).map(|_| s.uniform_in(-bound, bound)).collect();
    let w = g.param(
        &format!("layers.{layer}.weight"),
        Tensor::new(weight_shape, w).expect("nonzero extents"),
    );
    let b = g.param(&format!("layers.{layer}.bias"), Tensor::vector(&b));
    (w, b)
}

fn read_weights(
    g: &mut Graph,
    w: NodeId,
    b: NodeId,
    spec: &Option<QuantNoiseSpec>,
    next_site: &mut impl FnMut() -> u64,
) -> Result<(NodeId, NodeId)> {
    match spec {
        Some(spec) => {
            let noise = spec.resolve()?;
            let wq = g.analog(w, noise.clone(), next_site());
            let bq = g.analog(b, noise, next_site());
            Ok((wq, bq))
        }
        None => Ok((w, b)),
    }
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn loss_node(&self) -> NodeId {
        self.loss
    }

    /// Number of analog pipelines on activations (input included), not
    /// counting weight and bias pipelines.
    pub fn activation_sites(&self) -> usize {
        self.graph
            .nodes()
            .filter(|n| match n.op {
                Op::Analog { input, .. } => !matches!(self.graph.node(input).op, Op::Leaf { .. })
                    || input == self.input,
                _ => false,
            })
            .count()
    }

    /// Count of nodes with the given op kind (see [`Op::kind`]).
    pub fn count_ops(&self, kind: &str) -> usize {
        self.graph.nodes().filter(|n| n.op.kind() == kind).count()
    }

    /// Parameter names and current master values in layer order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(name, id)| {
            (
                name.as_str(),
                self.graph.value(*id).expect("parameters hold values"),
            )
        })
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.numel()).sum()
    }

    fn bind(&mut self, split: &Split, rows: &[usize]) -> Result<()> {
        let d = split.features.len() / split.len().max(1);
        let mut x = Vec::with_capacity(rows.len() * d);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(split.sample(r));
            y.push(split.labels[r] as f64);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(&self.config.input_shape);
        self.graph.set_leaf("x", Tensor::new(shape, x)?)?;
        self.graph.set_leaf("y", Tensor::new(vec![rows.len()], y)?)?;
        Ok(())
    }

    /// Mean loss of one batch, leaving values in the graph for `backward`.
    fn batch_loss(&mut self, split: &Split, rows: &[usize], noise_key: u64) -> Result<f64> {
        self.bind(split, rows)?;
        self.graph.set_noise_key(noise_key);
        self.graph.evaluate()?;
        Ok(self.graph.value(self.loss).and_then(Tensor::item).unwrap_or(f64::NAN))
    }

    /// Class scores for `rows` of `split` under noise key `noise_key`.
    pub fn logits(&mut self, split: &Split, rows: &[usize], noise_key: u64) -> Result<Tensor> {
        self.batch_loss(split, rows, noise_key)?;
        Ok(self.graph.value(self.logits).expect("evaluated").clone())
    }
}

const EVAL_BATCH: usize = 250;

/// Top-1 accuracy on `split`. Analog noise stays active unless disabled on
/// the graph; batch `k` uses noise key `mix(noise_key, k)`.
pub fn evaluate(model: &mut Model, split: &Split, noise_key: u64) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let classes = model.config.classes;
    let mut correct = 0usize;
    let rows: Vec<usize> = (0..split.len()).collect();
    for (k, chunk) in rows.chunks(EVAL_BATCH).enumerate() {
        let logits = model.logits(split, chunk, mix(noise_key, k as u64))?;
        for (row, &r) in logits.data().chunks(classes).zip(chunk) {
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == split.labels[r]);
        }
    }
    Ok(correct as f64 / split.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    /// Keep analog noise active while measuring test accuracy.
    #[serde(default = "yes")]
    pub noisy_eval: bool,
}

fn default_lr() -> f64 {
    1e-3
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            optimizer: Optimizer::Adam,
            seed,
            noisy_eval: true,
        }
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::field("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 || self.batch_size > train_len {
            return Err(Error::field(
                "batch-size",
                format!("{} must be in [1, {train_len}]", self.batch_size),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::field(
                "learning-rate",
                format!("{} must be positive", self.learning_rate),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_top1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
    pub status: RunStatus,
}

impl TrainHistory {
    /// Test accuracy after the last completed epoch, 0 if none completed.
    pub fn final_top1(&self) -> f64 {
        self.epochs.last().map_or(0.0, |m| m.test_top1)
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch training. Fresh analog noise is drawn for every forward pass;
/// test accuracy is measured after each epoch. A non-finite loss stops
/// training with [`RunStatus::Diverged`] and the epochs completed so far.
pub fn train(model: &mut Model, data: &Dataset, tc: &TrainConfig) -> Result<TrainHistory> {
    data.validate()?;
    tc.validate(data.train.len())?;
    if data.sample_shape != model.config.input_shape || data.classes != model.config.classes {
        return Err(Error::Config(format!(
            "dataset is {:?} x {} classes, model expects {:?} x {}",
            data.sample_shape, data.classes, model.config.input_shape, model.config.classes
        )));
    }
    if data.test.is_empty() {
        return Err(Error::Config("test split is empty".into()));
    }
    let mut state: Vec<AdamState> = model
        .params()
        .map(|(_, t)| AdamState {
            m: vec![0.0; t.numel()],
            v: vec![0.0; t.numel()],
        })
        .collect();
    let shuffle = RngStream::new(tc.seed, 0x5348_5546);
    let train_key = mix(tc.seed, 0x7472_6169_6e);
    let eval_key = mix(tc.seed, 0x6576_616c);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(tc.epochs),
        status: RunStatus::Completed,
    };
    let mut step = 0u64;
    for epoch in 0..tc.epochs {
        shuffle.child(epoch as u64).generator().shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, rows) in order.chunks(tc.batch_size).enumerate() {
            let key = mix(mix(train_key, epoch as u64), b as u64);
            let loss = model.batch_loss(&data.train, rows, key)?;
            if !loss.is_finite() {
                history.status = RunStatus::Diverged;
                return Ok(history);
            }
            total += loss;
            batches += 1;
            let grads = model.graph.backward(model.loss)?;
            step += 1;
            apply_update(model, &grads, &mut state, tc, step);
        }
        model.graph.set_noise_enabled(tc.noisy_eval);
        let top1 = evaluate(model, &data.test, mix(eval_key, epoch as u64));
        model.graph.set_noise_enabled(true);
        let train_loss = total / batches as f64;
        history.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss,
            test_top1: top1?,
        });
        if model.params().any(|(_, t)| !t.all_finite()) {
            history.status = RunStatus::Diverged;
            return Ok(history);
        }
    }
    Ok(history)
}

fn apply_update(
    model: &mut Model,
    grads: &BTreeMap<String, Tensor>,
    state: &mut [AdamState],
    tc: &TrainConfig,
    step: u64,
) {
    let lr = tc.learning_rate;
    let bc1 = 1.0 - libm::pow(BETA1, step as f64);
    let bc2 = 1.0 - libm::pow(BETA2, step as f64);
    for ((name, id), st) in model.params.iter().zip(state.iter_mut()) {
        let Some(g) = grads.get(name) else { continue };
        let w = model
            .graph
            .leaf_value_mut(*id)
            .expect("parameter leaf")
            .data_mut();
        match tc.optimizer {
            Optimizer::Sgd => {
                for (wv, gv) in w.iter_mut().zip(g.data()) {
                    *wv -= lr * gv;
                }
            }
            Optimizer::Adam => {
                for (((wv, gv), m), v) in w
                    .iter_mut()
                    .zip(g.data())
                    .zip(st.m.iter_mut())
                    .zip(st.v.iter_mut())
                {
                    *m = BETA1 * *m + (1.0 - BETA1) * gv;
                    *v = BETA2 * *v + (1.0 - BETA2) * gv * gv;
                    *wv -= lr * (*m / bc1) / (libm::sqrt(*v / bc2) + ADAM_EPS);
                }
            }
        }
    }
}

/// Trains one model per interpolation factor from identical initial
/// weights and seeds, returning `(i, history)` pairs in input order.
pub fn interpolation_sweep_train(
    config: &ModelConfig,
    kind: ActivationKind,
    i_values: &[f64],
    data: &Dataset,
    tc: &TrainConfig,
) -> Result<Vec<(f64, TrainHistory)>> {
    if !kind.is_interp() || kind.is_glu() {
        return Err(Error::field(
            "activation.kind",
            format!("`{}` is not an elementwise interpolation", kind.name()),
        ));
    }
    i_values
        .iter()
        .map(|&i| {
            let spec = ActivationSpec {
                i,
                ..ActivationSpec::new(kind)
            };
            spec.validate().map_err(|e| e.within("activation"))?;
            let mut model = build_model(&config.with_activation(&spec), tc.seed)?;
            Ok((i, train(&mut model, data, tc)?))
        })
        .collect()
}

impl core::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
        })
    }
}
