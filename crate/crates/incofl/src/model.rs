//! StageNet: a depth-parameterized MLP family with explicit stage
//! structure.
//!
//! Every stage holds a run of square layers sharing one (width × width)
//! shape, entered through a rectangular projection layer and followed by
//! the next stage or the classifier. Clients in different groups run the
//! same network truncated to fewer square layers per stage, so a shallow
//! model's parameters are a prefix of a deeper one's. Forward, backward,
//! and the optimizers are written out by hand to keep every gradient
//! checkable against finite differences.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{GroupSpec, LayerKey};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeding::{derive_rng, derive_seed};
use crate::tensor::{matmul, transpose, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "ReLU", alias = "relu")]
    Relu,
    #[serde(alias = "tanh")]
    Tanh,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value, which is
    /// all the backward pass stores.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// How the square intra-stage layers start out. Projections and the
/// classifier always use the plain fan-in draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SquareInit {
    /// Uniform in ±sqrt(3/fan_in), like every other layer. Each square
    /// layer starts as an unrelated random map, so updates to different
    /// depths of a stage are close to orthogonal.
    FanIn,
    /// Identity plus uniform noise at `noise` times the fan-in bound. A
    /// stack of such layers starts as a chain of small refinements of a
    /// shared representation, the way residual blocks behave, and updates
    /// to different depths of a stage share a common direction.
    NearIdentity { noise: f64 },
}

impl Default for SquareInit {
    fn default() -> Self {
        SquareInit::FanIn
    }
}

/// Architecture shared by every group; groups differ only in how many
/// square layers per stage they keep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageNetConfig {
    pub input_dim: usize,
    pub stage_widths: Vec<usize>,
    pub stages: usize,
    pub num_classes: usize,
    pub activation: Activation,
    #[serde(default)]
    pub square_init: SquareInit,
}

impl StageNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidConfig("model needs at least one stage".into()));
        }
        if self.stage_widths.len() != self.stages {
            return Err(Error::InvalidConfig(format!(
                "stage_widths lists {} stages, config says {}",
                self.stage_widths.len(),
                self.stages
            )));
        }
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::InvalidConfig(
                "input_dim and num_classes must be positive".into(),
            ));
        }
        if self.stage_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("stage widths must be positive".into()));
        }
        if let SquareInit::NearIdentity { noise } = self.square_init {
            if !noise.is_finite() || noise < 0.0 {
                return Err(Error::InvalidConfig(
                    "near-identity init noise must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One affine layer. The weight is stored (input × output) so a batch
/// multiplies from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![input, output]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    /// Flattened view, weight values then bias values.
    fn to_vector(&self) -> Tensor {
        let mut values = self.weight.values().to_vec();
        values.extend_from_slice(self.bias.values());
        Tensor::new(vec![values.len()], values).expect("finite parameters stay finite")
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Full parameter set of one client model (or of the server model, which
/// uses the largest group's depths).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    config: StageNetConfig,
    depth_per_stage: Vec<usize>,
    projections: Vec<Layer>,
    stage_layers: Vec<Vec<Layer>>,
    classifier: Layer,
}

/// Gradients (or any parameter-shaped quantity) mirroring [`ModelWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    projections: Vec<Layer>,
    stage_layers: Vec<Vec<Layer>>,
    classifier: Layer,
}

/// A parameter-space difference in the form that crosses the server
/// boundary: square layers keyed for layer-wise aggregation, projections
/// and classifier flattened alongside. Square layers missing from the map
/// mean "no update for that layer".
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDelta {
    pub stage_layers: BTreeMap<LayerKey, Tensor>,
    pub projections: Vec<Tensor>,
    pub classifier: Tensor,
}

impl ModelDelta {
    pub fn scale(&self, factor: f64) -> ModelDelta {
        ModelDelta {
            stage_layers: self
                .stage_layers
                .iter()
                .map(|(k, t)| (*k, t.scale(factor)))
                .collect(),
            projections: self.projections.iter().map(|t| t.scale(factor)).collect(),
            classifier: self.classifier.scale(factor),
        }
    }
}

fn uniform_layer<R: Rng>(input: usize, output: usize, rng: &mut R) -> Layer {
    let bound = (3.0 / input as f64).sqrt();
    let values: Vec<f64> = (0..input * output)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Layer {
        weight: Tensor::new(vec![input, output], values).expect("uniform draws are finite"),
        bias: Tensor::zeros(vec![output]),
    }
}

fn near_identity_layer<R: Rng>(width: usize, noise: f64, rng: &mut R) -> Layer {
    let bound = noise * (3.0 / width as f64).sqrt();
    let mut values = vec![0.0; width * width];
    for r in 0..width {
        for c in 0..width {
            let draw = if bound > 0.0 {
                rng.random_range(-bound..bound)
            } else {
                0.0
            };
            values[r * width + c] = draw + if r == c { 1.0 } else { 0.0 };
        }
    }
    Layer {
        weight: Tensor::new(vec![width, width], values).expect("uniform draws are finite"),
        bias: Tensor::zeros(vec![width]),
    }
}

/// Initializes a model for one group: weights uniform in ±sqrt(3/fan_in)
/// (unit-variance gain, so signals neither explode nor vanish through a
/// stack of square layers), biases zero. Square layers can instead start
/// near the identity when the config asks for it. Each parameter tensor
/// draws from its own seeded stream keyed by position only, so two
/// groups' shared layer prefix starts out identical.
pub fn init_model(cfg: &StageNetConfig, group: &GroupSpec, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    if group.depth_per_stage.len() != cfg.stages {
        return Err(Error::InvalidConfig(format!(
            "group {} lists {} stages, model has {}",
            group.group_id,
            group.depth_per_stage.len(),
            cfg.stages
        )));
    }
    let mut projections = Vec::with_capacity(cfg.stages);
    let mut stage_layers = Vec::with_capacity(cfg.stages);
    let mut previous_width = cfg.input_dim;
    for (stage, &width) in cfg.stage_widths.iter().enumerate() {
        let mut rng = derive_rng(seed, "init-projection", &[stage as u64]);
        projections.push(uniform_layer(previous_width, width, &mut rng));
        let mut layers = Vec::with_capacity(group.depth_per_stage[stage]);
        for index in 0..group.depth_per_stage[stage] {
            let mut rng = derive_rng(seed, "init-layer", &[stage as u64, index as u64]);
            layers.push(match cfg.square_init {
                SquareInit::FanIn => uniform_layer(width, width, &mut rng),
                SquareInit::NearIdentity { noise } => near_identity_layer(width, noise, &mut rng),
            });
        }
        stage_layers.push(layers);
        previous_width = width;
    }
    let mut rng = derive_rng(seed, "init-classifier", &[]);
    let classifier = uniform_layer(previous_width, cfg.num_classes, &mut rng);
    Ok(ModelWeights {
        config: cfg.clone(),
        depth_per_stage: group.depth_per_stage.clone(),
        projections,
        stage_layers,
        classifier,
    })
}

impl ModelWeights {
    pub fn config(&self) -> &StageNetConfig {
        &self.config
    }

    pub fn depth_per_stage(&self) -> &[usize] {
        &self.depth_per_stage
    }

    pub fn layer_keys(&self) -> Vec<LayerKey> {
        let mut keys = Vec::new();
        for (stage, layers) in self.stage_layers.iter().enumerate() {
            for index in 0..layers.len() {
                keys.push(LayerKey::new(stage, index));
            }
        }
        keys
    }

    pub fn square_layer(&self, key: LayerKey) -> Option<&Layer> {
        self.stage_layers.get(key.stage)?.get(key.index_in_stage)
    }

    pub fn classifier(&self) -> &Layer {
        &self.classifier
    }

    pub fn param_count(&self) -> usize {
        let mut count = self.classifier.param_count();
        for layer in self.projections.iter().chain(self.stage_layers.iter().flatten()) {
            count += layer.param_count();
        }
        count
    }

    fn ordered_layers(&self) -> Vec<&Layer> {
        let mut layers = Vec::new();
        for stage in 0..self.config.stages {
            layers.push(&self.projections[stage]);
            for layer in &self.stage_layers[stage] {
                layers.push(layer);
            }
        }
        layers.push(&self.classifier);
        layers
    }

    /// Canonical flattening: stages in order (projection first, then
    /// square layers), classifier last; weight values before bias values
    /// inside each layer. All flat-space operations share this layout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut values = Vec::with_capacity(self.param_count());
        for layer in self.ordered_layers() {
            values.extend_from_slice(layer.weight.values());
            values.extend_from_slice(layer.bias.values());
        }
        values
    }

    /// Rebuilds a structurally identical model from a flat vector in
    /// [`to_flat`](Self::to_flat) order.
    pub fn with_values(&self, flat: &[f64]) -> Result<ModelWeights> {
        if flat.len() != self.param_count() {
            return Err(Error::BadTensorLength {
                shape: vec![self.param_count()],
                len: flat.len(),
            });
        }
        let mut next = self.clone();
        let mut offset = 0;
        for layer in next.ordered_layers_mut() {
            let w_len = layer.weight.len();
            layer.weight = Tensor::new(
                layer.weight.shape().to_vec(),
                flat[offset..offset + w_len].to_vec(),
            )?;
            offset += w_len;
            let b_len = layer.bias.len();
            layer.bias = Tensor::new(
                layer.bias.shape().to_vec(),
                flat[offset..offset + b_len].to_vec(),
            )?;
            offset += b_len;
        }
        Ok(next)
    }

    fn ordered_layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut layers = Vec::new();
        for (projection, stage) in self.projections.iter_mut().zip(self.stage_layers.iter_mut())
        {
            layers.push(projection);
            for layer in stage {
                layers.push(layer);
            }
        }
        layers.push(&mut self.classifier);
        layers
    }

    /// Interprets a flat difference vector (same layout as `to_flat`) as
    /// a structured delta.
    pub fn delta_from_flat(&self, diff: &[f64]) -> Result<ModelDelta> {
        if diff.len() != self.param_count() {
            return Err(Error::BadTensorLength {
                shape: vec![self.param_count()],
                len: diff.len(),
            });
        }
        let mut offset = 0;
        let mut take = |len: usize| {
            let slice = diff[offset..offset + len].to_vec();
            offset += len;
            Tensor::new(vec![len], slice).expect("finite difference vector")
        };
        let mut projections = Vec::with_capacity(self.config.stages);
        let mut stage_layers = BTreeMap::new();
        for stage in 0..self.config.stages {
            projections.push(take(self.projections[stage].param_count()));
            for index in 0..self.stage_layers[stage].len() {
                let tensor = take(self.stage_layers[stage][index].param_count());
                stage_layers.insert(LayerKey::new(stage, index), tensor);
            }
        }
        let classifier = take(self.classifier.param_count());
        Ok(ModelDelta {
            stage_layers,
            projections,
            classifier,
        })
    }

    /// Adds a delta. Square layers absent from the delta map stay as they
    /// are; projection and classifier entries are required.
    pub fn apply_delta(&self, delta: &ModelDelta) -> Result<ModelWeights> {
        if delta.projections.len() != self.projections.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.projections.len()],
                got: vec![delta.projections.len()],
            });
        }
        let mut next = self.clone();
        for (stage, update) in delta.projections.iter().enumerate() {
            next.projections[stage] = add_flat(&self.projections[stage], update)?;
        }
        for (key, update) in &delta.stage_layers {
            let layer = self
                .square_layer(*key)
                .ok_or_else(|| Error::InvalidConfig(format!("delta targets unknown layer {key}")))?;
            next.stage_layers[key.stage][key.index_in_stage] = add_flat(layer, update)?;
        }
        next.classifier = add_flat(&self.classifier, &delta.classifier)?;
        Ok(next)
    }

    /// Copies the prefix of layers a smaller group owns. Projections and
    /// the classifier are shared by every group and copied whole.
    pub fn restrict_to(&self, depth_per_stage: &[usize]) -> Result<ModelWeights> {
        if depth_per_stage.len() != self.config.stages {
            return Err(Error::InvalidConfig(format!(
                "restriction lists {} stages, model has {}",
                depth_per_stage.len(),
                self.config.stages
            )));
        }
        let mut stage_layers = Vec::with_capacity(self.config.stages);
        for (stage, &depth) in depth_per_stage.iter().enumerate() {
            if depth > self.stage_layers[stage].len() {
                return Err(Error::InvalidConfig(format!(
                    "restriction wants {depth} layers in stage {stage}, model has {}",
                    self.stage_layers[stage].len()
                )));
            }
            stage_layers.push(self.stage_layers[stage][..depth].to_vec());
        }
        Ok(ModelWeights {
            config: self.config.clone(),
            depth_per_stage: depth_per_stage.to_vec(),
            projections: self.projections.clone(),
            stage_layers,
            classifier: self.classifier.clone(),
        })
    }

    /// Flattened (weight then bias) copy of one square layer, the shape
    /// the aggregation and surgery paths work on.
    pub fn square_layer_vector(&self, key: LayerKey) -> Option<Tensor> {
        self.square_layer(key).map(Layer::to_vector)
    }
}

fn add_flat(layer: &Layer, update: &Tensor) -> Result<Layer> {
    if update.len() != layer.param_count() {
        return Err(Error::BadTensorLength {
            shape: vec![layer.param_count()],
            len: update.len(),
        });
    }
    let values = update.values();
    let (w_part, b_part) = values.split_at(layer.weight.len());
    let weight_values: Vec<f64> = layer
        .weight
        .values()
        .iter()
        .zip(w_part)
        .map(|(w, d)| w + d)
        .collect();
    let bias_values: Vec<f64> = layer
        .bias
        .values()
        .iter()
        .zip(b_part)
        .map(|(b, d)| b + d)
        .collect();
    Ok(Layer {
        weight: Tensor::new(layer.weight.shape().to_vec(), weight_values)?,
        bias: Tensor::new(layer.bias.shape().to_vec(), bias_values)?,
    })
}

impl ModelGrads {
    fn zeros_like(w: &ModelWeights) -> Self {
        Self {
            projections: w
                .projections
                .iter()
                .map(|l| Layer::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            stage_layers: w
                .stage_layers
                .iter()
                .map(|stage| {
                    stage
                        .iter()
                        .map(|l| Layer::zeros(l.weight.rows(), l.weight.cols()))
                        .collect()
                })
                .collect(),
            classifier: Layer::zeros(w.classifier.weight.rows(), w.classifier.weight.cols()),
        }
    }

    pub fn square_layer(&self, key: LayerKey) -> Option<&Layer> {
        self.stage_layers.get(key.stage)?.get(key.index_in_stage)
    }

    pub fn square_layer_vector(&self, key: LayerKey) -> Option<Tensor> {
        self.square_layer(key).map(Layer::to_vector)
    }

    /// Same canonical layout as [`ModelWeights::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut values = Vec::new();
        for stage in 0..self.projections.len() {
            let layer = &self.projections[stage];
            values.extend_from_slice(layer.weight.values());
            values.extend_from_slice(layer.bias.values());
            for layer in &self.stage_layers[stage] {
                values.extend_from_slice(layer.weight.values());
                values.extend_from_slice(layer.bias.values());
            }
        }
        values.extend_from_slice(self.classifier.weight.values());
        values.extend_from_slice(self.classifier.bias.values());
        values
    }

    /// Flattened copy of every parameterized layer in canonical order:
    /// each stage's projection then its square layers, classifier last.
    pub fn layer_vectors(&self) -> Vec<Vec<f64>> {
        let mut layers = Vec::new();
        let flatten = |layer: &Layer| {
            let mut values = layer.weight.values().to_vec();
            values.extend_from_slice(layer.bias.values());
            values
        };
        for stage in 0..self.projections.len() {
            layers.push(flatten(&self.projections[stage]));
            for layer in &self.stage_layers[stage] {
                layers.push(flatten(layer));
            }
        }
        layers.push(flatten(&self.classifier));
        layers
    }
}

enum Role {
    Projection(usize),
    Square(LayerKey),
    Classifier,
}

struct Trace {
    role: Role,
    input: Tensor,
    /// Post-activation output (raw logits for the classifier).
    output: Tensor,
}

/// Everything backward needs, captured during forward.
pub struct ForwardCache {
    traces: Vec<Trace>,
    logits: Tensor,
}

pub struct ForwardPass {
    pub logits: Tensor,
    /// Post-activation output of each stage's last square layer.
    pub stage_features: Vec<Tensor>,
    pub cache: ForwardCache,
}

fn affine(x: &Tensor, layer: &Layer) -> Result<Tensor> {
    let product = matmul(x, &layer.weight)?;
    let (rows, cols) = (product.rows(), product.cols());
    let bias = layer.bias.values();
    let mut values = product.into_values();
    for r in 0..rows {
        for c in 0..cols {
            values[r * cols + c] += bias[c];
        }
    }
    Tensor::new(vec![rows, cols], values)
}

fn activate(x: Tensor, activation: Activation) -> Tensor {
    let shape = x.shape().to_vec();
    let values = x.into_values().iter().map(|&v| activation.apply(v)).collect();
    Tensor::new(shape, values).expect("activation preserves finiteness")
}

pub fn forward(w: &ModelWeights, batch: &Tensor) -> Result<ForwardPass> {
    if batch.cols() != w.config.input_dim {
        return Err(Error::ShapeMismatch {
            expected: vec![batch.rows(), w.config.input_dim],
            got: batch.shape().to_vec(),
        });
    }
    let activation = w.config.activation;
    let mut traces = Vec::new();
    let mut stage_features = Vec::with_capacity(w.config.stages);
    let mut current = batch.clone();
    for stage in 0..w.config.stages {
        let projected = activate(affine(&current, &w.projections[stage])?, activation);
        traces.push(Trace {
            role: Role::Projection(stage),
            input: current,
            output: projected.clone(),
        });
        current = projected;
        for (index, layer) in w.stage_layers[stage].iter().enumerate() {
            let output = activate(affine(&current, layer)?, activation);
            traces.push(Trace {
                role: Role::Square(LayerKey::new(stage, index)),
                input: current,
                output: output.clone(),
            });
            current = output;
        }
        stage_features.push(current.clone());
    }
    let logits = affine(&current, &w.classifier)?;
    traces.push(Trace {
        role: Role::Classifier,
        input: current,
        output: logits.clone(),
    });
    Ok(ForwardPass {
        logits: logits.clone(),
        stage_features,
        cache: ForwardCache { traces, logits },
    })
}

/// Mean softmax cross-entropy and its gradient with respect to the
/// logits. Rows are shifted by their max before exponentiation.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, cols) = (logits.rows(), logits.cols());
    if labels.len() != rows {
        return Err(Error::ShapeMismatch {
            expected: vec![rows],
            got: vec![labels.len()],
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; rows * cols];
    for (r, &label) in labels.iter().enumerate() {
        if label >= cols {
            return Err(Error::InvalidLabel {
                label,
                classes: cols,
            });
        }
        let row = &logits.values()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss -= (exps[label] / total).ln();
        for c in 0..cols {
            let p = exps[c] / total;
            grad[r * cols + c] = (p - if c == label { 1.0 } else { 0.0 }) / rows as f64;
        }
    }
    Ok((loss / rows as f64, Tensor::new(vec![rows, cols], grad)?))
}

pub fn backward(w: &ModelWeights, cache: &ForwardCache, labels: &[usize]) -> Result<ModelGrads> {
    let (_, dlogits) = softmax_cross_entropy(&cache.logits, labels)?;
    let mut grads = ModelGrads::zeros_like(w);
    let mut upstream = dlogits;
    for trace in cache.traces.iter().rev() {
        let layer = match trace.role {
            Role::Projection(stage) => &w.projections[stage],
            Role::Square(key) => &w.stage_layers[key.stage][key.index_in_stage],
            Role::Classifier => &w.classifier,
        };
        let dz = match trace.role {
            Role::Classifier => upstream,
            _ => {
                let shape = upstream.shape().to_vec();
                let values = upstream
                    .values()
                    .iter()
                    .zip(trace.output.values())
                    .map(|(&g, &y)| g * w.config.activation.derivative_from_output(y))
                    .collect();
                Tensor::new(shape, values)?
            }
        };
        let dw = matmul(&transpose(&trace.input), &dz)?;
        let db = column_sums(&dz);
        let slot = match trace.role {
            Role::Projection(stage) => &mut grads.projections[stage],
            Role::Square(key) => &mut grads.stage_layers[key.stage][key.index_in_stage],
            Role::Classifier => &mut grads.classifier,
        };
        slot.weight = dw;
        slot.bias = db;
        upstream = matmul(&dz, &transpose(&layer.weight))?;
    }
    Ok(grads)
}

fn column_sums(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut sums = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            sums[c] += x.values()[r * cols + c];
        }
    }
    Tensor::new(vec![cols], sums).expect("finite sums")
}

/// Mean loss of the model on a batch.
pub fn loss_on_batch(w: &ModelWeights, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let pass = forward(w, batch)?;
    softmax_cross_entropy(&pass.logits, labels).map(|(loss, _)| loss)
}

/// Loss and full gradient on a batch in one call.
pub fn grads_on_batch(
    w: &ModelWeights,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(f64, ModelGrads)> {
    let pass = forward(w, batch)?;
    let (loss, _) = softmax_cross_entropy(&pass.logits, labels)?;
    let grads = backward(w, &pass.cache, labels)?;
    Ok((loss, grads))
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "SGD", alias = "sgd")]
    Sgd,
    #[serde(rename = "Adam", alias = "adam")]
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

impl Optimizer {
    pub fn adam_defaults() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// FedProx coefficient; 0 disables the proximal pull toward the
    /// global weights.
    #[serde(default)]
    pub prox_mu: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.01,
            local_epochs: 1,
            batch_size: 32,
            prox_mu: 0.0,
            seed: 0,
        }
    }
}

/// What one client hands back after its local epochs.
pub struct LocalTrainReport {
    /// Weights after training, exactly `start + delta` per parameter.
    pub model: ModelWeights,
    /// Parameter change, the unit that travels to the server.
    pub delta: ModelDelta,
    /// Sum over optimizer steps of the squared minibatch gradient norm
    /// (before the proximal term), feeding the step-size diagnostics.
    pub sum_grad_sq: f64,
    /// Number of optimizer steps taken.
    pub steps: usize,
}

/// Runs `local_epochs` of minibatch training from `w`, pulling toward
/// `global` when `prox_mu > 0`. Optimizer state starts fresh; clients are
/// stateless between rounds. The minibatch order is seeded from
/// (seed, client, round, epoch), so results do not depend on scheduling.
pub fn local_train(
    w: &ModelWeights,
    shard: &Dataset,
    tcfg: &TrainerConfig,
    global: &ModelWeights,
    round: u64,
    client: u64,
) -> Result<LocalTrainReport> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    if tcfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let start = w.to_flat();
    let anchor = global.to_flat();
    if anchor.len() != start.len() {
        return Err(Error::BadTensorLength {
            shape: vec![start.len()],
            len: anchor.len(),
        });
    }
    let mut params = start.clone();
    let mut model = w.clone();
    let mut moment1 = vec![0.0; params.len()];
    let mut moment2 = vec![0.0; params.len()];
    let mut adam_t = 0u32;
    let mut sum_grad_sq = 0.0;
    let mut steps = 0;

    for epoch in 0..tcfg.local_epochs {
        let mut order: Vec<usize> = (0..shard.len()).collect();
        let shuffle_seed = derive_seed(tcfg.seed, "minibatch-order", &[client, round, epoch as u64]);
        let mut rng = derive_rng(shuffle_seed, "shuffle", &[]);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(tcfg.batch_size) {
            let (batch, labels) = shard.batch(chunk);
            let (_, grads) = grads_on_batch(&model, &batch, &labels)?;
            let mut gradient = grads.to_flat();
            sum_grad_sq += gradient.iter().map(|g| g * g).sum::<f64>();
            if tcfg.prox_mu > 0.0 {
                for ((g, p), a) in gradient.iter_mut().zip(&params).zip(&anchor) {
                    *g += tcfg.prox_mu * (p - a);
                }
            }
            match tcfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in params.iter_mut().zip(&gradient) {
                        *p -= tcfg.learning_rate * g;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    adam_t += 1;
                    let correction1 = 1.0 - beta1.powi(adam_t as i32);
                    let correction2 = 1.0 - beta2.powi(adam_t as i32);
                    for i in 0..params.len() {
                        let g = gradient[i];
                        moment1[i] = beta1 * moment1[i] + (1.0 - beta1) * g;
                        moment2[i] = beta2 * moment2[i] + (1.0 - beta2) * g * g;
                        let m_hat = moment1[i] / correction1;
                        let v_hat = moment2[i] / correction2;
                        params[i] -= tcfg.learning_rate * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            model = w.with_values(&params)?;
            steps += 1;
        }
    }

    let diff: Vec<f64> = params.iter().zip(&start).map(|(p, s)| p - s).collect();
    let delta = w.delta_from_flat(&diff)?;
    // Rebuild the final weights as start + delta so the returned pair
    // satisfies the update identity exactly, not just up to rounding.
    let model = w.apply_delta(&delta)?;
    Ok(LocalTrainReport {
        model,
        delta,
        sum_grad_sq,
        steps,
    })
}
