use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{DataArgs, Resources};
use anyhow::{anyhow, bail, Context, Result};
use concord::datasets::{
    default_stats, derive_thread_labels, load_iac_jsonl, load_pairs_jsonl, load_threads_jsonl,
    load_unlabeled_pairs_jsonl, merge_iac, split_dataset, write_pairs_jsonl, Label, QRPair,
};
use concord::harness::{self, ExperimentData, HarnessError, Metrics, TransferMode};
use concord::lexfeat::{load_lexicon, Lexicon};
use concord::model::{argmax, load_checkpoint, save_checkpoint, SiameseModel};
use concord::numcore::Rng;
use concord::pipeline::FeaturePipeline;
use concord::textprep::load_embeddings;
use serde::Serialize;
use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

/// A failed numerical check; exits with code 3.
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.is::<NumericalFailure>() || matches!(e.downcast_ref::<HarnessError>(), Some(HarnessError::NonFinite { .. }))
    });
    if numerical {
        3
    } else {
        2
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn print_label_counts(pairs: &[QRPair]) {
    for l in Label::ALL {
        println!("{}\t{}", l, pairs.iter().filter(|p| p.label == l).count());
    }
}

pub fn prepare(threads: Option<&Path>, iac: Option<&Path>, pairs: Option<&Path>, out: &Path) -> Result<()> {
    let labeled = match (threads, iac, pairs) {
        (Some(t), None, None) => {
            let derived = derive_thread_labels(&load_threads_jsonl(t)?)?;
            if derived.missing_side > 0 {
                eprintln!("{} pairs had no side label and were labeled none", derived.missing_side);
            }
            derived.pairs
        }
        (None, Some(a), Some(p)) => {
            let mut scores = HashMap::new();
            for ann in load_iac_jsonl(a)? {
                let label = merge_iac(&ann)?;
                if scores.insert(ann.pair_id.clone(), label).is_some() {
                    bail!("{}: duplicate annotation for pair {}", a.display(), ann.pair_id);
                }
            }
            let unlabeled = load_unlabeled_pairs_jsonl(p)?;
            let mut out = Vec::with_capacity(unlabeled.len());
            for u in unlabeled {
                let label = scores
                    .remove(&u.id)
                    .ok_or_else(|| anyhow!("{}: pair {} has no annotation", p.display(), u.id))?;
                out.push(QRPair {
                    source_id: u.id,
                    quote_text: u.quote,
                    response_text: u.response,
                    label,
                });
            }
            if !scores.is_empty() {
                let mut orphans: Vec<String> = scores.into_keys().collect();
                orphans.sort();
                bail!("{}: annotations for unknown pairs: {}", a.display(), orphans.join(", "));
            }
            out
        }
        _ => bail!("use either --threads or --iac together with --pairs"),
    };
    write_pairs_jsonl(out, &labeled)?;
    print_label_counts(&labeled);
    Ok(())
}

fn parse_lexicon_arg(arg: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("cannot name lexicon {arg:?}; use NAME=PATH"))?
                .to_string();
            Ok((name, path))
        }
    }
}

fn load_pipeline(res: &Resources, embed_dim: usize, manifest: Option<&mut RunManifest>) -> Result<FeaturePipeline> {
    let lexicon_paths = res
        .lexicons
        .iter()
        .map(|a| parse_lexicon_arg(a))
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = manifest {
        m.input("embeddings", &res.embeddings)?;
        for (name, path) in &lexicon_paths {
            m.input(&format!("lexicon:{name}"), path)?;
        }
    }
    let embeddings = load_embeddings(&res.embeddings, embed_dim)?;
    let lexicons = lexicon_paths
        .iter()
        .map(|(name, path)| load_lexicon(name, path))
        .collect::<Result<Vec<Lexicon>, _>>()?;
    Ok(FeaturePipeline::new(embeddings, lexicons))
}

struct Splits {
    train: Vec<QRPair>,
    dev: Vec<QRPair>,
    test: Vec<QRPair>,
}

fn load_splits(data: &DataArgs, cfg: &RunConfig, manifest: Option<&mut RunManifest>) -> Result<Splits> {
    if let Some(m) = manifest {
        m.input("pairs", &data.pairs)?;
        for (role, p) in [("dev", &data.dev), ("test", &data.test)] {
            if let Some(p) = p {
                m.input(role, p)?;
            }
        }
    }
    let pairs = load_pairs_jsonl(&data.pairs)?;
    Ok(match &data.dev {
        Some(dev) => Splits {
            train: pairs,
            dev: load_pairs_jsonl(dev)?,
            test: match &data.test {
                Some(t) => load_pairs_jsonl(t)?,
                None => Vec::new(),
            },
        },
        None => {
            let s = split_dataset(&pairs, cfg.split, cfg.train.seed)?;
            Splits {
                train: s.train,
                dev: s.dev,
                test: s.test,
            }
        }
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn metrics_csv(m: &Metrics) -> String {
    let mut s = String::from("class,precision,recall,f1,support\n");
    for (label, c) in Label::ALL.iter().zip(&m.per_class) {
        writeln!(s, "{label},{:.6},{:.6},{:.6},{}", c.precision, c.recall, c.f1, c.support).unwrap();
    }
    let total: u64 = m.per_class.iter().map(|c| c.support).sum();
    writeln!(s, "weighted,{:.6},{:.6},{:.6},{total}", m.precision, m.recall, m.weighted_f1).unwrap();
    s
}

pub struct TrainArgs {
    pub data: DataArgs,
    pub resources: Resources,
    pub config: Option<PathBuf>,
    pub out_checkpoint: PathBuf,
    pub history: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let mut manifest = RunManifest::new("train", &cfg);
    if let Some(c) = &args.config {
        manifest.input("config", c)?;
    }
    let splits = load_splits(&args.data, &cfg, Some(&mut manifest))?;
    let pipeline = load_pipeline(&args.resources, cfg.model.embed_dim, Some(&mut manifest))?;
    if splits.train.len() < 2 || splits.dev.is_empty() {
        bail!(
            "need at least 2 training pairs and 1 dev pair, got {} and {}",
            splits.train.len(),
            splits.dev.len()
        );
    }
    let history_path = args.history.unwrap_or_else(|| sibling(&args.out_checkpoint, ".history.json"));
    let manifest_path = args.manifest.unwrap_or_else(|| sibling(&args.out_checkpoint, ".manifest.json"));
    manifest.artifact("checkpoint", &args.out_checkpoint);
    manifest.artifact("history", &history_path);
    if let Some(r) = &args.report {
        manifest.artifact("report", r);
    }
    manifest.write(&manifest_path)?;

    let model_cfg = pipeline.configure(&cfg.model);
    let model = SiameseModel::build(model_cfg.clone(), pipeline.lex_layout(), &mut Rng::derive(cfg.train.seed, 0))?;
    let outcome = harness::train(
        model,
        &pipeline.encode_all(&splits.train, &model_cfg),
        &pipeline.encode_all(&splits.dev, &model_cfg),
        &cfg.train,
    )?;
    save_checkpoint(&outcome.model, Some(&outcome.optimizer), &args.out_checkpoint)?;
    std::fs::write(&history_path, outcome.history.to_json())
        .with_context(|| format!("cannot write {}", history_path.display()))?;
    let (held_out, name) = if splits.test.is_empty() {
        (&splits.dev, "dev")
    } else {
        (&splits.test, "test")
    };
    let metrics = harness::evaluate(&outcome.model, &pipeline.encode_all(held_out, &model_cfg))?;
    eprintln!(
        "best epoch {} of {}, {name} weighted F1 {:.4}",
        outcome.history.best_epoch,
        outcome.history.epochs.len(),
        metrics.weighted_f1
    );
    write_or_print(args.report.as_deref(), &metrics_csv(&metrics))
}

fn load_model_and_pipeline(checkpoint: &Path, resources: &Resources) -> Result<(SiameseModel, FeaturePipeline)> {
    let model = load_checkpoint(checkpoint)?.model;
    let pipeline = load_pipeline(resources, model.config.embed_dim, None)?;
    pipeline.check_compatible(&model.config, &model.lex_layout)?;
    Ok((model, pipeline))
}

pub fn eval(checkpoint: &Path, pairs: &Path, resources: &Resources, out: Option<&Path>) -> Result<()> {
    let (model, pipeline) = load_model_and_pipeline(checkpoint, resources)?;
    let inputs = pipeline.encode_all(&load_pairs_jsonl(pairs)?, &model.config);
    let metrics = harness::evaluate(&model, &inputs)?;
    write_or_print(out, &metrics_csv(&metrics))
}

#[derive(Serialize)]
struct Prediction<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a str>,
    label: Label,
    probs: [f64; 3],
}

pub fn predict(
    checkpoint: &Path,
    resources: &Resources,
    single: Option<(String, String)>,
    pairs: Option<&Path>,
) -> Result<()> {
    let (model, pipeline) = load_model_and_pipeline(checkpoint, resources)?;
    let run = |quote: &str, response: &str| -> Result<(Label, [f64; 3])> {
        let probs = model.predict(&pipeline.encode_text(quote, response, 0, &model.config))?;
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(NumericalFailure(format!("non-finite probabilities {probs:?}")).into());
        }
        Ok((Label::from_index(argmax(&probs)).expect("3 classes"), probs))
    };
    match (single, pairs) {
        (Some((q, r)), None) => {
            let (label, probs) = run(&q, &r)?;
            println!("{}", serde_json::to_string(&Prediction { id: None, label, probs })?);
        }
        (None, Some(path)) => {
            for u in load_unlabeled_pairs_jsonl(path)? {
                let (label, probs) = run(&u.quote, &u.response)?;
                let line = Prediction {
                    id: Some(&u.id),
                    label,
                    probs,
                };
                println!("{}", serde_json::to_string(&line)?);
            }
        }
        _ => bail!("give either --quote and --response, or --pairs"),
    }
    Ok(())
}

pub fn transfer(
    checkpoint: &Path,
    data: &DataArgs,
    resources: &Resources,
    mode: &str,
    config: Option<&Path>,
    out_checkpoint: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let modes: Vec<TransferMode> = if mode == "all" {
        TransferMode::ALL.to_vec()
    } else {
        vec![mode.parse().map_err(|e: String| anyhow!(e))?]
    };
    if out_checkpoint.is_some() && modes.len() > 1 {
        bail!("--out-checkpoint needs a single --mode");
    }
    let cfg = RunConfig::load(config)?;
    let (pretrained, pipeline) = load_model_and_pipeline(checkpoint, resources)?;
    let splits = load_splits(data, &cfg, None)?;
    let exp = ExperimentData {
        pipeline: &pipeline,
        train: splits.train,
        dev: splits.dev,
        test: splits.test,
    };
    let mut results = Vec::new();
    for m in modes {
        let outcome = harness::run_transfer(&pretrained, &exp, m, &cfg.train)?;
        eprintln!("{}: weighted F1 {:.4}", m.as_str(), outcome.metrics.weighted_f1);
        if let Some(out) = out_checkpoint {
            save_checkpoint(&outcome.model, outcome.optimizer.as_ref(), out)?;
        }
        results.push((m, outcome.metrics));
    }
    write_or_print(report, &harness::transfer_report(&results).to_csv())
}

fn experiment_inputs(
    data: &DataArgs,
    resources: &Resources,
    config: Option<&Path>,
) -> Result<(RunConfig, FeaturePipeline, Splits)> {
    let cfg = RunConfig::load(config)?;
    let splits = load_splits(data, &cfg, None)?;
    let pipeline = load_pipeline(resources, cfg.model.embed_dim, None)?;
    Ok((cfg, pipeline, splits))
}

pub fn sweep(
    data: &DataArgs,
    resources: &Resources,
    config: Option<&Path>,
    lengths: &[usize],
    report: Option<&Path>,
) -> Result<()> {
    let (cfg, pipeline, s) = experiment_inputs(data, resources, config)?;
    let exp = ExperimentData {
        pipeline: &pipeline,
        train: s.train,
        dev: s.dev,
        test: s.test,
    };
    let r = harness::run_seqlen_sweep(&exp, &cfg.model, lengths, &cfg.train)?;
    write_or_print(report, &r.to_csv())
}

pub fn ablation(data: &DataArgs, resources: &Resources, config: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let (cfg, pipeline, s) = experiment_inputs(data, resources, config)?;
    let exp = ExperimentData {
        pipeline: &pipeline,
        train: s.train,
        dev: s.dev,
        test: s.test,
    };
    let r = harness::run_feature_ablation(&exp, &cfg.model, &cfg.train)?;
    write_or_print(report, &r.to_csv())
}

pub fn gradcheck(seed: u64, batch: usize, samples: usize, tolerance: f64, report: Option<&Path>) -> Result<()> {
    if batch < 2 || samples == 0 {
        bail!("--batch must be at least 2 and --samples at least 1");
    }
    let r = harness::gradcheck_default_model(seed, batch, samples, tolerance)?;
    if let Some(p) = report {
        std::fs::write(p, serde_json::to_string_pretty(&r)? + "\n")
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    println!(
        "max_rel_err {:e} over {} coordinates (worst: {} #{}); tolerance {:e}",
        r.max_rel_err,
        r.checked,
        r.worst_tensor.as_deref().unwrap_or("-"),
        r.worst_index.unwrap_or(0),
        r.tolerance
    );
    if !r.passed {
        return Err(NumericalFailure(format!(
            "gradient check failed: max relative error {:e} ≥ {:e}",
            r.max_rel_err, r.tolerance
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct StatsSummary<'a> {
    total: usize,
    label_counts: &'a BTreeMap<Label, usize>,
    quote_mean_length: f64,
    response_mean_length: f64,
}

pub fn stats(pairs: &Path, out: Option<&Path>) -> Result<()> {
    let report = default_stats(&load_pairs_jsonl(pairs)?);
    let summary = StatsSummary {
        total: report.total,
        label_counts: &report.label_counts,
        quote_mean_length: report.quote_length.mean,
        response_mean_length: report.response_length.mean,
    };
    eprintln!("{}", serde_json::to_string(&summary)?);
    write_or_print(out, &report.histogram_csv())
}
