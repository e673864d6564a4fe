//! The Siamese fusion classifier.
//!
//! One GRU encodes both the quote and the response. Its two final states
//! are concatenated with the two lexical feature vectors as
//! `[h_Q, lex_Q, h_R, lex_R]` (inactive parts omitted per [`FeatureMode`])
//! and passed through
//!
//! ```text
//! input_bn → dense1 → bn1 → relu → dropout
//!          → dense2 → bn2 → relu → dropout → out → softmax
//! ```
//!
//! Parameters are initialized, serialized and updated in a single fixed
//! order, see [`SiameseModel::tensors`].

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC,
};

use crate::lexfeat::FeatureDescriptor;
use crate::nn::{
    dropout_forward, softmax_xent, BatchNormCache, BatchNormLayer, BatchStats, DenseCache, DenseLayer, DropoutMask,
    DropoutSpec, GruCache, GruGrads, GruLayer, NnError, GRU_PARAM_NAMES,
};
use crate::numcore::{relu, softmax, NumError, Rng, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 3;
pub const DEFAULT_GRU_HIDDEN: usize = 64;
pub const DEFAULT_DENSE_SIZES: [usize; 2] = [100, 50];
pub const DEFAULT_MAXLEN: usize = 64;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input does not match model: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<NumError> for ModelError {
    fn from(e: NumError) -> Self {
        ModelError::Nn(e.into())
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    LexOnly,
    GruOnly,
    Both,
}

impl FeatureMode {
    pub fn uses_gru(self) -> bool {
        matches!(self, FeatureMode::GruOnly | FeatureMode::Both)
    }

    pub fn uses_lex(self) -> bool {
        matches!(self, FeatureMode::LexOnly | FeatureMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::LexOnly => "lex_only",
            FeatureMode::GruOnly => "gru_only",
            FeatureMode::Both => "both",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lex_only" => Ok(FeatureMode::LexOnly),
            "gru_only" => Ok(FeatureMode::GruOnly),
            "both" => Ok(FeatureMode::Both),
            _ => Err(format!("unknown feature mode {s:?} (lex_only|gru_only|both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub gru_hidden: usize,
    pub dense_sizes: [usize; 2],
    pub num_classes: usize,
    pub maxlen: usize,
    pub dropout_rate: f64,
    /// Length of one sentence's lexical feature vector.
    pub lex_dim: usize,
    pub feature_mode: FeatureMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: crate::textprep::DEFAULT_EMBED_DIM,
            gru_hidden: DEFAULT_GRU_HIDDEN,
            dense_sizes: DEFAULT_DENSE_SIZES,
            num_classes: NUM_CLASSES,
            maxlen: DEFAULT_MAXLEN,
            dropout_rate: DEFAULT_DROPOUT,
            lex_dim: 0,
            feature_mode: FeatureMode::Both,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_classes != NUM_CLASSES {
            return bad("num_classes must be 3");
        }
        if self.feature_mode == FeatureMode::LexOnly && self.lex_dim == 0 {
            return bad("feature_mode=lex_only requires lex_dim > 0");
        }
        if self.feature_mode.uses_gru() && (self.embed_dim == 0 || self.gru_hidden == 0) {
            return bad("embed_dim and gru_hidden must be positive when the GRU is used");
        }
        if self.maxlen == 0 {
            return bad("maxlen must be at least 1");
        }
        if self.dense_sizes.contains(&0) {
            return bad("dense sizes must be positive");
        }
        if self.concat_width() == 0 {
            return bad("no active features");
        }
        DropoutSpec::new(self.dropout_rate).map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }

    /// Width of one sentence's share of the concatenated feature vector.
    pub fn branch_width(&self) -> usize {
        let g = if self.feature_mode.uses_gru() { self.gru_hidden } else { 0 };
        let l = if self.feature_mode.uses_lex() { self.lex_dim } else { 0 };
        g + l
    }

    pub fn concat_width(&self) -> usize {
        2 * self.branch_width()
    }
}

/// Logical layers for freezing. Each batch-norm layer travels with its host:
/// `input_bn` with the GRU, `bn1` with `dense1`, `bn2` with `dense2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerGroup {
    Gru,
    Dense1,
    Dense2,
    Out,
}

impl LayerGroup {
    pub const ORDER: [LayerGroup; 4] = [LayerGroup::Gru, LayerGroup::Dense1, LayerGroup::Dense2, LayerGroup::Out];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableMask {
    pub gru: bool,
    pub dense1: bool,
    pub dense2: bool,
    pub out: bool,
}

impl TrainableMask {
    pub const ALL: TrainableMask = TrainableMask {
        gru: true,
        dense1: true,
        dense2: true,
        out: true,
    };
    pub const NONE: TrainableMask = TrainableMask {
        gru: false,
        dense1: false,
        dense2: false,
        out: false,
    };

    pub fn get(&self, g: LayerGroup) -> bool {
        match g {
            LayerGroup::Gru => self.gru,
            LayerGroup::Dense1 => self.dense1,
            LayerGroup::Dense2 => self.dense2,
            LayerGroup::Out => self.out,
        }
    }

    /// Only the last `k` groups of `[gru, dense1, dense2, out]` are trainable.
    pub fn last_k(k: usize) -> Option<Self> {
        if !(1..=4).contains(&k) {
            return None;
        }
        Some(TrainableMask {
            gru: k >= 4,
            dense1: k >= 3,
            dense2: k >= 2,
            out: true,
        })
    }
}

/// Model-ready inputs for one pair. Windows are `[maxlen × embed_dim]`
/// and present only when the GRU is active; lexical vectors are empty
/// when lexical features are off.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub quote: Option<Tensor>,
    pub response: Option<Tensor>,
    pub quote_lex: Vec<f64>,
    pub response_lex: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub config: ModelConfig,
    pub lex_layout: Vec<FeatureDescriptor>,
    pub gru: Option<GruLayer>,
    pub input_bn: BatchNormLayer,
    pub dense1: DenseLayer,
    pub bn1: BatchNormLayer,
    pub dense2: DenseLayer,
    pub bn2: BatchNormLayer,
    pub out: DenseLayer,
    pub trainable: TrainableMask,
}

/// What a tensor is, for optimizer and freezing purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Param,
    RunningStat,
}

/// Gradients for the trainable parameters, in model order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Batch statistics gathered by a training-mode forward pass, to be folded
/// into the running averages once the step is accepted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunningUpdates {
    pub input_bn: Option<BatchStats>,
    pub bn1: Option<BatchStats>,
    pub bn2: Option<BatchStats>,
}

pub struct ForwardPass {
    pub probs: Tensor,
    pub logits: Tensor,
    pub running: RunningUpdates,
    cache: BatchCache,
}

struct BatchCache {
    gru: Vec<(GruCache, GruCache)>,
    input_bn: BatchNormCache,
    dense1: DenseCache,
    bn1: BatchNormCache,
    pre_relu1: Tensor,
    drop1: DropoutMask,
    dense2: DenseCache,
    bn2: BatchNormCache,
    pre_relu2: Tensor,
    drop2: DropoutMask,
    out: DenseCache,
}

fn bn_names(prefix: &str) -> [(String, TensorRole); 4] {
    [
        (format!("{prefix}.gamma"), TensorRole::Param),
        (format!("{prefix}.beta"), TensorRole::Param),
        (format!("{prefix}.running_mean"), TensorRole::RunningStat),
        (format!("{prefix}.running_var"), TensorRole::RunningStat),
    ]
}

fn bn_tensors(bn: &BatchNormLayer) -> [&Tensor; 4] {
    [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
}

fn bn_tensors_mut(bn: &mut BatchNormLayer) -> [&mut Tensor; 4] {
    [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var]
}

/// Name, group and role of every tensor a model with this config holds,
/// paired with its shape, in canonical order.
pub fn tensor_layout(config: &ModelConfig) -> Vec<(String, LayerGroup, TensorRole, Vec<usize>)> {
    let mut out = Vec::new();
    let (e, h) = (config.embed_dim, config.gru_hidden);
    if config.feature_mode.uses_gru() {
        for (i, n) in GRU_PARAM_NAMES.iter().enumerate() {
            let shape = match i {
                0..=2 => vec![e, h],
                3..=5 => vec![h, h],
                _ => vec![h],
            };
            out.push((format!("gru.{n}"), LayerGroup::Gru, TensorRole::Param, shape));
        }
    }
    let push_bn = |out: &mut Vec<_>, prefix: &str, g: LayerGroup, d: usize| {
        for (name, role) in bn_names(prefix) {
            out.push((name, g, role, vec![d]));
        }
    };
    let w = config.concat_width();
    let [d1, d2] = config.dense_sizes;
    push_bn(&mut out, "input_bn", LayerGroup::Gru, w);
    out.push(("dense1.w".into(), LayerGroup::Dense1, TensorRole::Param, vec![w, d1]));
    out.push(("dense1.b".into(), LayerGroup::Dense1, TensorRole::Param, vec![d1]));
    push_bn(&mut out, "bn1", LayerGroup::Dense1, d1);
    out.push(("dense2.w".into(), LayerGroup::Dense2, TensorRole::Param, vec![d1, d2]));
    out.push(("dense2.b".into(), LayerGroup::Dense2, TensorRole::Param, vec![d2]));
    push_bn(&mut out, "bn2", LayerGroup::Dense2, d2);
    out.push(("out.w".into(), LayerGroup::Out, TensorRole::Param, vec![d2, NUM_CLASSES]));
    out.push(("out.b".into(), LayerGroup::Out, TensorRole::Param, vec![NUM_CLASSES]));
    out
}

impl SiameseModel {
    /// Initializes parameters from `rng` in the order: GRU (if active),
    /// dense1, dense2, out. Batch norms start at γ=1, β=0, mean 0, var 1.
    pub fn build(
        config: ModelConfig,
        lex_layout: Vec<FeatureDescriptor>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if lex_layout.len() != config.lex_dim {
            return Err(ModelError::Config(format!(
                "lexicon layout has {} features but lex_dim is {}",
                lex_layout.len(),
                config.lex_dim
            )));
        }
        let gru = config
            .feature_mode
            .uses_gru()
            .then(|| GruLayer::new(rng, config.embed_dim, config.gru_hidden));
        let w = config.concat_width();
        let [d1, d2] = config.dense_sizes;
        let dense1 = DenseLayer::new(rng, w, d1);
        let dense2 = DenseLayer::new(rng, d1, d2);
        let out = DenseLayer::new(rng, d2, NUM_CLASSES);
        Ok(SiameseModel {
            config,
            lex_layout,
            gru,
            input_bn: BatchNormLayer::new(w),
            dense1,
            bn1: BatchNormLayer::new(d1),
            dense2,
            bn2: BatchNormLayer::new(d2),
            out,
            trainable: TrainableMask::ALL,
        })
    }

    /// All tensors (parameters and batch-norm running statistics) in
    /// canonical order, matching [`tensor_layout`].
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let layout = tensor_layout(&self.config);
        let mut refs: Vec<&Tensor> = Vec::with_capacity(layout.len());
        if let Some(g) = &self.gru {
            refs.extend(g.tensors());
        }
        refs.extend(bn_tensors(&self.input_bn));
        refs.extend([&self.dense1.w, &self.dense1.b]);
        refs.extend(bn_tensors(&self.bn1));
        refs.extend([&self.dense2.w, &self.dense2.b]);
        refs.extend(bn_tensors(&self.bn2));
        refs.extend([&self.out.w, &self.out.b]);
        layout.into_iter().map(|(n, ..)| n).zip(refs).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let layout = tensor_layout(&self.config);
        let mut refs: Vec<&mut Tensor> = Vec::with_capacity(layout.len());
        if let Some(g) = &mut self.gru {
            refs.extend(g.tensors_mut());
        }
        refs.extend(bn_tensors_mut(&mut self.input_bn));
        refs.extend([&mut self.dense1.w, &mut self.dense1.b]);
        refs.extend(bn_tensors_mut(&mut self.bn1));
        refs.extend([&mut self.dense2.w, &mut self.dense2.b]);
        refs.extend(bn_tensors_mut(&mut self.bn2));
        refs.extend([&mut self.out.w, &mut self.out.b]);
        layout.into_iter().map(|(n, ..)| n).zip(refs).collect()
    }

    /// Little-endian bytes of every tensor in a group, for freeze checks.
    pub fn group_bytes(&self, group: LayerGroup) -> Vec<u8> {
        let layout = tensor_layout(&self.config);
        self.tensors()
            .into_iter()
            .zip(layout)
            .filter(|(_, (_, g, ..))| *g == group)
            .flat_map(|((_, t), _)| t.to_le_bytes())
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn set_trainable_last_k(&mut self, k: usize) -> Result<()> {
        self.trainable = TrainableMask::last_k(k)
            .ok_or_else(|| ModelError::Config(format!("k must be in 1..=4, got {k}")))?;
        Ok(())
    }

    /// Drops dense1, dense2, out and their batch norms, and installs fresh
    /// dense layers of width 100 and 50 plus a new 3-way output layer. The
    /// GRU and the input batch norm are kept as they are.
    pub fn replace_head(&mut self, rng: &mut Rng) {
        let [d1, d2] = DEFAULT_DENSE_SIZES;
        let w = self.config.concat_width();
        self.config.dense_sizes = [d1, d2];
        self.dense1 = DenseLayer::new(rng, w, d1);
        self.bn1 = BatchNormLayer::new(d1);
        self.dense2 = DenseLayer::new(rng, d1, d2);
        self.bn2 = BatchNormLayer::new(d2);
        self.out = DenseLayer::new(rng, d2, NUM_CLASSES);
        self.trainable = TrainableMask::ALL;
    }

    fn check_input(&self, p: &PairInput) -> Result<()> {
        let c = &self.config;
        if c.feature_mode.uses_gru() {
            for (side, w) in [("quote", &p.quote), ("response", &p.response)] {
                match w {
                    Some(t) if t.shape().len() == 2 && t.cols() == c.embed_dim && t.rows() >= 1 => {}
                    Some(t) => {
                        return Err(ModelError::Input(format!(
                            "{side} window has shape {:?}, expected [T×{}]",
                            t.shape(),
                            c.embed_dim
                        )))
                    }
                    None => return Err(ModelError::Input(format!("{side} window missing"))),
                }
            }
        }
        if c.feature_mode.uses_lex() && (p.quote_lex.len() != c.lex_dim || p.response_lex.len() != c.lex_dim) {
            return Err(ModelError::Input(format!(
                "lexical features have length {}/{}, expected {}",
                p.quote_lex.len(),
                p.response_lex.len(),
                c.lex_dim
            )));
        }
        if p.label >= NUM_CLASSES {
            return Err(ModelError::Input(format!("label index {} out of range", p.label)));
        }
        Ok(())
    }

    /// Sentence embedding from the shared encoder.
    pub fn encode(&self, window: &Tensor) -> Result<Tensor> {
        let gru = self
            .gru
            .as_ref()
            .ok_or_else(|| ModelError::Input("model has no GRU encoder".into()))?;
        Ok(gru.forward(window)?.0)
    }

    /// Batch forward pass.
    ///
    /// Batch-norm layers use batch statistics only when `training` is set
    /// and their group is trainable; frozen groups always normalize with
    /// their running statistics, so freezing leaves them untouched.
    pub fn forward_batch(&self, batch: &[&PairInput], training: bool, rng: &mut Rng) -> Result<ForwardPass> {
        if batch.is_empty() {
            return Err(ModelError::Input("empty batch".into()));
        }
        for p in batch {
            self.check_input(p)?;
        }
        let c = &self.config;
        let n = batch.len();
        let width = c.concat_width();
        let mut feats = Tensor::zeros(&[n, width]);
        let mut gru_caches = Vec::new();
        for (i, p) in batch.iter().enumerate() {
            let row = feats.row_mut(i);
            let mut at = 0;
            let mut put = |row: &mut [f64], v: &[f64]| {
                row[at..at + v.len()].copy_from_slice(v);
                at += v.len();
            };
            let mut encoded = None;
            if let Some(gru) = &self.gru {
                let (hq, cq) = gru.forward(p.quote.as_ref().unwrap())?;
                let (hr, cr) = gru.forward(p.response.as_ref().unwrap())?;
                encoded = Some((hq, hr));
                gru_caches.push((cq, cr));
            }
            if let Some((hq, _)) = &encoded {
                put(row, hq.data());
            }
            if c.feature_mode.uses_lex() {
                put(row, &p.quote_lex);
            }
            if let Some((_, hr)) = &encoded {
                put(row, hr.data());
            }
            if c.feature_mode.uses_lex() {
                put(row, &p.response_lex);
            }
        }

        let batch_stats = |g: LayerGroup| training && self.trainable.get(g);
        let dropout = DropoutSpec::new(c.dropout_rate)?;

        let (x0, input_bn, s0) = self.input_bn.forward_pure(&feats, batch_stats(LayerGroup::Gru))?;
        let (z1, dense1) = self.dense1.forward(&x0)?;
        let (z1n, bn1, s1) = self.bn1.forward_pure(&z1, batch_stats(LayerGroup::Dense1))?;
        let a1 = z1n.map(relu);
        let (a1d, drop1) = dropout_forward(dropout, &a1, training, rng);
        let (z2, dense2) = self.dense2.forward(&a1d)?;
        let (z2n, bn2, s2) = self.bn2.forward_pure(&z2, batch_stats(LayerGroup::Dense2))?;
        let a2 = z2n.map(relu);
        let (a2d, drop2) = dropout_forward(dropout, &a2, training, rng);
        let (logits, out) = self.out.forward(&a2d)?;
        let probs = softmax(&logits);

        Ok(ForwardPass {
            probs,
            logits,
            running: RunningUpdates {
                input_bn: s0,
                bn1: s1,
                bn2: s2,
            },
            cache: BatchCache {
                gru: gru_caches,
                input_bn,
                dense1,
                bn1,
                pre_relu1: z1n,
                drop1,
                dense2,
                bn2,
                pre_relu2: z2n,
                drop2,
                out,
            },
        })
    }

    /// Inference-mode class probabilities for one pair.
    pub fn predict(&self, input: &PairInput) -> Result<[f64; 3]> {
        let pass = self.forward_batch(&[input], false, &mut Rng::new(0))?;
        let p = pass.probs.data();
        Ok([p[0], p[1], p[2]])
    }

    /// Mean cross-entropy over `batch` and gradients for every trainable
    /// parameter. The shared GRU receives the sum of its quote-branch and
    /// response-branch gradients.
    pub fn loss_and_grads(
        &self,
        batch: &[&PairInput],
        rng: &mut Rng,
    ) -> Result<(f64, Gradients, RunningUpdates)> {
        let pass = self.forward_batch(batch, true, rng)?;
        let labels: Vec<usize> = batch.iter().map(|p| p.label).collect();
        let (loss, dlogits) = softmax_xent(&pass.logits, &labels)?;
        let grads = self.backward(&pass, &dlogits)?;
        Ok((loss, grads, pass.running))
    }

    fn backward(&self, pass: &ForwardPass, dlogits: &Tensor) -> Result<Gradients> {
        let mask = self.trainable;
        let cache = &pass.cache;
        let mut named: Vec<(String, Tensor)> = Vec::new();
        let relu_back = |d: &Tensor, pre: &Tensor| -> Result<Tensor> {
            Ok(d.zip_with(pre, "relu_back", |g, z| if z > 0.0 { g } else { 0.0 })?)
        };
        let earliest = LayerGroup::ORDER.iter().position(|&g| mask.get(g));
        let Some(earliest) = earliest else {
            return Ok(Gradients::default());
        };

        let (g_out, da2d) = self.out.backward(&cache.out, dlogits)?;
        if mask.out {
            named.push(("out.w".into(), g_out.w));
            named.push(("out.b".into(), g_out.b));
        }
        if earliest > 2 {
            return Ok(order(named, &self.config));
        }
        let da2 = relu_back(&cache.drop2.backward(&da2d)?, &cache.pre_relu2)?;
        let (g_bn2, dz2) = self.bn2.backward(&cache.bn2, &da2)?;
        let (g_d2, da1d) = self.dense2.backward(&cache.dense2, &dz2)?;
        if mask.dense2 {
            named.extend([
                ("dense2.w".into(), g_d2.w),
                ("dense2.b".into(), g_d2.b),
                ("bn2.gamma".into(), g_bn2.gamma),
                ("bn2.beta".into(), g_bn2.beta),
            ]);
        }
        if earliest > 1 {
            return Ok(order(named, &self.config));
        }
        let da1 = relu_back(&cache.drop1.backward(&da1d)?, &cache.pre_relu1)?;
        let (g_bn1, dz1) = self.bn1.backward(&cache.bn1, &da1)?;
        let (g_d1, dx0) = self.dense1.backward(&cache.dense1, &dz1)?;
        if mask.dense1 {
            named.extend([
                ("dense1.w".into(), g_d1.w),
                ("dense1.b".into(), g_d1.b),
                ("bn1.gamma".into(), g_bn1.gamma),
                ("bn1.beta".into(), g_bn1.beta),
            ]);
        }
        if earliest > 0 {
            return Ok(order(named, &self.config));
        }
        let (g_bn0, dfeats) = self.input_bn.backward(&cache.input_bn, &dx0)?;
        named.push(("input_bn.gamma".into(), g_bn0.gamma));
        named.push(("input_bn.beta".into(), g_bn0.beta));

        if let Some(gru) = &self.gru {
            let h = self.config.gru_hidden;
            let l = if self.config.feature_mode.uses_lex() { self.config.lex_dim } else { 0 };
            let mut total = GruGrads::zeros(gru.input_dim(), h);
            for (i, (cq, cr)) in cache.gru.iter().enumerate() {
                let row = dfeats.row(i);
                let dhq = Tensor::vector(row[..h].to_vec());
                let dhr = Tensor::vector(row[h + l..2 * h + l].to_vec());
                total.accumulate(&gru.backward(cq, &dhq)?.0)?;
                total.accumulate(&gru.backward(cr, &dhr)?.0)?;
            }
            for (name, t) in GRU_PARAM_NAMES.iter().zip(total.tensors()) {
                named.push((format!("gru.{name}"), t.clone()));
            }
        }
        Ok(order(named, &self.config))
    }

    /// Folds batch statistics into running averages of trainable groups.
    pub fn apply_running_updates(&mut self, up: &RunningUpdates) {
        if let Some(s) = &up.input_bn {
            self.input_bn.update_running(s);
        }
        if let Some(s) = &up.bn1 {
            self.bn1.update_running(s);
        }
        if let Some(s) = &up.bn2 {
            self.bn2.update_running(s);
        }
    }

    /// One Adam step over every parameter that has a gradient.
    pub fn apply_gradients(&mut self, adam: &mut crate::nn::Adam, grads: &Gradients) {
        let mut params = self.tensors_mut();
        let updates = params
            .iter_mut()
            .filter_map(|(name, t)| grads.get(name).map(|g| (name.as_str(), &mut **t, g)));
        adam.step(updates);
    }
}

fn order(mut named: Vec<(String, Tensor)>, config: &ModelConfig) -> Gradients {
    let layout = tensor_layout(config);
    named.sort_by_key(|(n, _)| layout.iter().position(|(m, ..)| m == n).unwrap_or(usize::MAX));
    Gradients { entries: named }
}

/// Mean training loss of a fixed batch as a function of the trainable
/// parameters, with dropout replayed from the same seed on every
/// evaluation. Used for finite-difference checks of the whole model.
pub struct ModelObjective {
    pub model: SiameseModel,
    pub batch: Vec<PairInput>,
    pub dropout_seed: u64,
}

impl ModelObjective {
    fn refs(&self) -> Vec<&PairInput> {
        self.batch.iter().collect()
    }

    fn run(&self) -> (f64, Gradients) {
        let refs = self.refs();
        let (loss, grads, _) = self
            .model
            .loss_and_grads(&refs, &mut Rng::new(self.dropout_seed))
            .expect("objective batch matches model");
        (loss, grads)
    }
}

impl crate::nn::Differentiable for ModelObjective {
    fn loss(&self) -> f64 {
        let refs = self.refs();
        let pass = self
            .model
            .forward_batch(&refs, true, &mut Rng::new(self.dropout_seed))
            .expect("objective batch matches model");
        let labels: Vec<usize> = self.batch.iter().map(|p| p.label).collect();
        softmax_xent(&pass.logits, &labels).expect("labels in range").0
    }

    fn analytic_grads(&self) -> Vec<(String, Tensor)> {
        self.run().1.entries
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let layout = tensor_layout(&self.model.config);
        let mask = self.model.trainable;
        self.model
            .tensors_mut()
            .into_iter()
            .zip(layout)
            .filter(|(_, (_, g, role, _))| *role == TensorRole::Param && mask.get(*g))
            .map(|(named, _)| named)
            .collect()
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}
