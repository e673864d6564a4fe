//! Training, evaluation and the experiment protocols (feature ablation,
//! sequence-length sweep, transfer variants).

use crate::datasets::QRPair;
use crate::model::{argmax, FeatureMode, ModelConfig, ModelError, ModelObjective, PairInput, SiameseModel, TrainableMask};
use crate::nn::{gradient_check, Adam, AdamConfig, GradCheckOptions, GradCheckReport};
use crate::numcore::Rng;
use crate::pipeline::FeaturePipeline;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::str::FromStr;
use thiserror::Error;

pub type Confusion = [[u64; 3]; 3];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("nothing to evaluate: confusion matrix is empty")]
    EmptyEvaluation,
    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a dev weighted-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr: 0.001,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(HarnessError::Config("batch_size must be at least 2".into()));
        }
        if self.patience < 1 {
            return Err(HarnessError::Config("patience must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(HarnessError::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// Rows are true labels, columns predictions, in agree/disagree/none order.
    pub confusion: Confusion,
    pub per_class: [ClassMetrics; 3],
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and support-weighted precision, recall and F1. Zero
/// denominators give 0.
pub fn compute_metrics(confusion: &Confusion) -> Result<Metrics> {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(HarnessError::EmptyEvaluation);
    }
    let per_class: [ClassMetrics; 3] = std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
        }
    });
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    let correct: u64 = (0..3).map(|c| confusion[c][c]).sum();
    Ok(Metrics {
        confusion: *confusion,
        per_class,
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        weighted_f1: weighted(|m| m.f1),
        accuracy: ratio(correct, total),
    })
}

const EVAL_CHUNK: usize = 256;

/// Inference-mode argmax predictions.
pub fn predict_labels(model: &SiameseModel, inputs: &[PairInput]) -> Result<Vec<usize>> {
    let mut rng = Rng::new(0);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let refs: Vec<&PairInput> = chunk.iter().collect();
        let pass = model.forward_batch(&refs, false, &mut rng)?;
        out.extend(pass.probs.data().chunks(3).map(argmax));
    }
    Ok(out)
}

pub fn evaluate(model: &SiameseModel, inputs: &[PairInput]) -> Result<Metrics> {
    if inputs.is_empty() {
        return Err(HarnessError::EmptyEvaluation);
    }
    let mut confusion = [[0u64; 3]; 3];
    for (input, pred) in inputs.iter().zip(predict_labels(model, inputs)?) {
        confusion[input.label][pred] += 1;
    }
    compute_metrics(&confusion)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_weighted_f1: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_weighted_f1: f64,
    pub stopped_early: bool,
    /// Optimizer steps taken across all epochs.
    pub updates: u64,
}

impl History {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes") + "\n"
    }
}

/// Index ranges of one epoch's mini-batches. A trailing batch of one item
/// is merged into the previous batch.
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if bounds.len() > 1 && bounds.last().is_some_and(|(s, e)| e - s < 2) {
        let (_, end) = bounds.pop().unwrap();
        bounds.last_mut().unwrap().1 = end;
    }
    bounds
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev weighted F1.
    pub model: SiameseModel,
    pub optimizer: Adam,
    pub history: History,
}

/// Mini-batch Adam over the trainable groups with early stopping on dev
/// weighted F1. Shuffling and dropout draw from separate streams of
/// `config.seed`.
pub fn train(
    mut model: SiameseModel,
    train_set: &[PairInput],
    dev_set: &[PairInput],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.len() < 2 {
        return Err(HarnessError::Config("training set needs at least 2 pairs".into()));
    }
    if dev_set.is_empty() {
        return Err(HarnessError::Config("dev set is empty".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = Rng::derive(config.seed, 1);
    let mut dropout_rng = Rng::derive(config.seed, 2);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(SiameseModel, Adam)> = None;
    let mut history = History {
        epochs: Vec::new(),
        best_epoch: 0,
        best_dev_weighted_f1: f64::NEG_INFINITY,
        stopped_early: false,
        updates: 0,
    };
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for (s, e) in batch_bounds(order.len(), config.batch_size) {
            let batch: Vec<&PairInput> = order[s..e].iter().map(|&i| &train_set[i]).collect();
            let (loss, grads, running) = model.loss_and_grads(&batch, &mut dropout_rng)?;
            if !loss.is_finite() {
                return Err(HarnessError::NonFinite { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            if !grads.is_empty() {
                model.apply_gradients(&mut adam, &grads);
                history.updates += 1;
            }
            model.apply_running_updates(&running);
        }
        let dev = evaluate(&model, dev_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            dev_precision: dev.precision,
            dev_recall: dev.recall,
            dev_weighted_f1: dev.weighted_f1,
            dev_accuracy: dev.accuracy,
        });
        log::info!(
            "epoch {epoch}: loss {:.5} dev weighted F1 {:.4}",
            loss_sum / train_set.len() as f64,
            dev.weighted_f1
        );
        if dev.weighted_f1 > history.best_dev_weighted_f1 {
            history.best_dev_weighted_f1 = dev.weighted_f1;
            history.best_epoch = epoch;
            best = Some((model.clone(), adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                history.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    let (model, optimizer) = best.unwrap_or((model, adam));
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}

/// Pairs for one experiment, already split. Reported metrics come from
/// `test`, or from `dev` when `test` is empty.
pub struct ExperimentData<'a> {
    pub pipeline: &'a FeaturePipeline,
    pub train: Vec<QRPair>,
    pub dev: Vec<QRPair>,
    pub test: Vec<QRPair>,
}

impl ExperimentData<'_> {
    fn eval_pairs(&self) -> &[QRPair] {
        if self.test.is_empty() {
            &self.dev
        } else {
            &self.test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub key: String,
    pub precision: f64,
    pub recall: f64,
    pub weighted_f1: f64,
}

impl ReportRow {
    fn new(key: impl Into<String>, m: &Metrics) -> Self {
        ReportRow {
            key: key.into(),
            precision: m.precision,
            recall: m.recall,
            weighted_f1: m.weighted_f1,
        }
    }
}

/// A results table: one key column (`system` or `maxlen`) and three
/// metric columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub key_column: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},precision,recall,weighted_f1\n", self.key_column);
        for r in &self.rows {
            writeln!(s, "{},{:.6},{:.6},{:.6}", r.key, r.precision, r.recall, r.weighted_f1).unwrap();
        }
        s
    }
}

fn train_and_score(data: &ExperimentData, config: &ModelConfig, tc: &TrainConfig) -> Result<Metrics> {
    let model = SiameseModel::build(config.clone(), data.pipeline.lex_layout(), &mut Rng::derive(tc.seed, 0))?;
    let enc = |pairs: &[QRPair]| data.pipeline.encode_all(pairs, config);
    let outcome = train(model, &enc(&data.train), &enc(&data.dev), tc)?;
    evaluate(&outcome.model, &enc(data.eval_pairs()))
}

pub const ABLATION_SYSTEMS: [(&str, FeatureMode); 3] = [
    ("Lexicons", FeatureMode::LexOnly),
    ("GRU", FeatureMode::GruOnly),
    ("GRU + Lexicons", FeatureMode::Both),
];

/// Trains lexicon-only, GRU-only and combined models with the same seed.
pub fn run_feature_ablation(data: &ExperimentData, base: &ModelConfig, tc: &TrainConfig) -> Result<Report> {
    let mut rows = Vec::new();
    for (name, mode) in ABLATION_SYSTEMS {
        let cfg = ModelConfig {
            feature_mode: mode,
            ..data.pipeline.configure(base)
        };
        let m = train_and_score(data, &cfg, tc)?;
        log::info!("ablation {name}: weighted F1 {:.4}", m.weighted_f1);
        rows.push(ReportRow::new(name, &m));
    }
    Ok(Report {
        key_column: "system".into(),
        rows,
    })
}

pub const SWEEP_LENGTHS: [usize; 3] = [32, 64, 128];

/// One model per maximum sequence length, same seed throughout.
pub fn run_seqlen_sweep(data: &ExperimentData, base: &ModelConfig, lengths: &[usize], tc: &TrainConfig) -> Result<Report> {
    let mut rows = Vec::new();
    for &maxlen in lengths {
        let cfg = ModelConfig {
            maxlen,
            ..data.pipeline.configure(base)
        };
        let m = train_and_score(data, &cfg, tc)?;
        log::info!("maxlen {maxlen}: weighted F1 {:.4}", m.weighted_f1);
        rows.push(ReportRow::new(maxlen.to_string(), &m));
    }
    Ok(Report {
        key_column: "maxlen".into(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Direct,
    Tuning,
    Transfer,
    RetrainLast2,
    RetrainLast3,
}

impl TransferMode {
    pub const ALL: [TransferMode; 5] = [
        TransferMode::Direct,
        TransferMode::Tuning,
        TransferMode::Transfer,
        TransferMode::RetrainLast2,
        TransferMode::RetrainLast3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Direct => "direct",
            TransferMode::Tuning => "tuning",
            TransferMode::Transfer => "transfer",
            TransferMode::RetrainLast2 => "retrain_last_2",
            TransferMode::RetrainLast3 => "retrain_last_3",
        }
    }

    /// Row label in transfer reports.
    pub fn system_name(self) -> &'static str {
        match self {
            TransferMode::Direct => "Direct",
            TransferMode::Tuning => "Tuning",
            TransferMode::Transfer => "Transfer",
            TransferMode::RetrainLast2 => "Re-train last 2 layers",
            TransferMode::RetrainLast3 => "Re-train last 3 layers",
        }
    }
}

impl FromStr for TransferMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        TransferMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown transfer mode {s:?} (expected direct|tuning|transfer|retrain_last_2|retrain_last_3)"))
    }
}

pub struct TransferOutcome {
    pub model: SiameseModel,
    /// Absent in direct mode, which never trains.
    pub optimizer: Option<Adam>,
    pub history: Option<History>,
    pub metrics: Metrics,
}

/// Adapts a pretrained model to a new dataset. Resource compatibility is
/// checked before any training.
pub fn run_transfer(
    pretrained: &SiameseModel,
    data: &ExperimentData,
    mode: TransferMode,
    tc: &TrainConfig,
) -> Result<TransferOutcome> {
    data.pipeline
        .check_compatible(&pretrained.config, &pretrained.lex_layout)?;
    let mut model = pretrained.clone();
    let cfg = model.config.clone();
    let enc = |pairs: &[QRPair]| data.pipeline.encode_all(pairs, &cfg);
    let eval_set = enc(data.eval_pairs());
    match mode {
        TransferMode::Direct => {
            let metrics = evaluate(&model, &eval_set)?;
            return Ok(TransferOutcome {
                model,
                optimizer: None,
                history: None,
                metrics,
            });
        }
        TransferMode::Tuning => model.trainable = TrainableMask::ALL,
        TransferMode::Transfer => model.replace_head(&mut Rng::derive(tc.seed, 3)),
        TransferMode::RetrainLast2 => model.set_trainable_last_k(2)?,
        TransferMode::RetrainLast3 => model.set_trainable_last_k(3)?,
    }
    let outcome = train(model, &enc(&data.train), &enc(&data.dev), tc)?;
    let metrics = evaluate(&outcome.model, &eval_set)?;
    Ok(TransferOutcome {
        model: outcome.model,
        optimizer: Some(outcome.optimizer),
        history: Some(outcome.history),
        metrics,
    })
}

/// Builds a `system,...` report from transfer results.
pub fn transfer_report(results: &[(TransferMode, Metrics)]) -> Report {
    Report {
        key_column: "system".into(),
        rows: results
            .iter()
            .map(|(mode, m)| ReportRow::new(mode.system_name(), m))
            .collect(),
    }
}

/// Gradient check of the full default architecture on the synthetic
/// fixture: embeddings of `DEFAULT_EMBED_DIM`, 8 lexical features and a
/// batch of `batch` pairs. `per_tensor` coordinates are sampled from each
/// trainable tensor.
pub fn gradcheck_default_model(seed: u64, batch: usize, per_tensor: usize, tolerance: f64) -> Result<GradCheckReport> {
    let pipeline = FeaturePipeline::new(
        crate::synthetic::embeddings(crate::textprep::DEFAULT_EMBED_DIM, seed),
        crate::synthetic::lexicons(),
    );
    let config = pipeline.configure(&ModelConfig::default());
    let model = SiameseModel::build(config.clone(), pipeline.lex_layout(), &mut Rng::derive(seed, 0))?;
    let pairs = crate::synthetic::separable_pairs(batch, seed);
    let mut objective = ModelObjective {
        model,
        batch: pipeline.encode_all(&pairs, &config),
        dropout_seed: seed,
    };
    Ok(gradient_check(
        &mut objective,
        &GradCheckOptions::sampled(tolerance, per_tensor, seed),
    ))
}

#[cfg(test)]
mod tests;
