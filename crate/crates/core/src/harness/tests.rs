use super::*;
use crate::model::LayerGroup;
use crate::synthetic;
use proptest::prelude::{prop, prop_assert, proptest};

fn assert_close(a: f64, b: f64) {
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn diagonal_confusion_is_perfect() {
    let m = compute_metrics(&[[3, 0, 0], [0, 4, 0], [0, 0, 1]]).unwrap();
    for v in [m.precision, m.recall, m.weighted_f1, m.accuracy] {
        assert_close(v, 1.0);
    }
}

#[test]
fn hand_computed_confusion() {
    let m = compute_metrics(&[[5, 0, 0], [0, 0, 5], [0, 0, 5]]).unwrap();
    assert_close(m.per_class[2].precision, 0.5);
    assert_close(m.per_class[2].recall, 1.0);
    assert_close(m.per_class[1].precision, 0.0);
    assert_close(m.precision, 0.5);
    assert_close(m.recall, 2.0 / 3.0);
    assert_close(m.weighted_f1, 5.0 / 9.0);
}

#[test]
fn single_class_truth() {
    let m = compute_metrics(&[[0, 0, 0], [0, 7, 0], [0, 0, 0]]).unwrap();
    assert_close(m.weighted_f1, 1.0);
}

#[test]
fn empty_confusion_errors() {
    assert!(matches!(compute_metrics(&[[0; 3]; 3]), Err(HarnessError::EmptyEvaluation)));
}

/// Metrics from expanded (truth, prediction) label lists.
fn brute_force(confusion: &Confusion) -> (f64, f64, f64) {
    let mut pairs = Vec::new();
    for (t, row) in confusion.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for c in 0..3 {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        let w = (tp + fn_) / pairs.len() as f64;
        wp += w * precision;
        wr += w * recall;
        wf += w * f1;
    }
    (wp, wr, wf)
}

proptest! {
    #[test]
    fn metrics_match_brute_force(cells in prop::array::uniform9(0u64..20)) {
        let confusion: Confusion = [
            [cells[0], cells[1], cells[2]],
            [cells[3], cells[4], cells[5]],
            [cells[6], cells[7], cells[8]],
        ];
        if cells.iter().all(|&c| c == 0) {
            prop_assert!(compute_metrics(&confusion).is_err());
        } else {
            let m = compute_metrics(&confusion).unwrap();
            let (p, r, f) = brute_force(&confusion);
            prop_assert!((m.precision - p).abs() < 1e-12);
            prop_assert!((m.recall - r).abs() < 1e-12);
            prop_assert!((m.weighted_f1 - f).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.weighted_f1));
        }
    }
}

#[test]
fn batches_never_end_with_a_single_item() {
    assert_eq!(batch_bounds(9, 4), vec![(0, 4), (4, 9)]);
    assert_eq!(batch_bounds(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
    assert_eq!(batch_bounds(3, 64), vec![(0, 3)]);
}

#[test]
fn train_config_validation() {
    let bad = TrainConfig {
        batch_size: 1,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        patience: 0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn transfer_mode_names() {
    for m in TransferMode::ALL {
        assert_eq!(m.as_str().parse::<TransferMode>().unwrap(), m);
    }
    assert!("retrain_last_4".parse::<TransferMode>().is_err());
}

fn small_pipeline(seed: u64) -> FeaturePipeline {
    FeaturePipeline::new(synthetic::embeddings(6, seed), synthetic::lexicons())
}

fn small_config(p: &FeaturePipeline) -> ModelConfig {
    p.configure(&ModelConfig {
        gru_hidden: 5,
        dense_sizes: [8, 6],
        maxlen: 10,
        dropout_rate: 0.2,
        ..ModelConfig::default()
    })
}

fn quick_train_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        lr: 0.01,
        max_epochs: 4,
        patience: 2,
        seed: 3,
        shuffle: true,
    }
}

#[test]
fn zero_output_layer_predicts_class_zero() {
    let p = small_pipeline(1);
    let cfg = small_config(&p);
    let mut model = SiameseModel::build(cfg.clone(), p.lex_layout(), &mut Rng::new(1)).unwrap();
    model.out.w = crate::numcore::Tensor::zeros(model.out.w.shape());
    model.out.b = crate::numcore::Tensor::zeros(model.out.b.shape());
    let inputs = p.encode_all(&synthetic::separable_pairs(9, 2), &cfg);
    assert_eq!(predict_labels(&model, &inputs).unwrap(), vec![0; 9]);
    let m = evaluate(&model, &inputs).unwrap();
    assert_eq!(m.confusion, [[3, 0, 0], [3, 0, 0], [3, 0, 0]]);
    assert_eq!(m, compute_metrics(&m.confusion).unwrap());
}

#[test]
fn evaluate_rejects_empty() {
    let p = small_pipeline(1);
    let model = SiameseModel::build(small_config(&p), p.lex_layout(), &mut Rng::new(1)).unwrap();
    assert!(matches!(evaluate(&model, &[]), Err(HarnessError::EmptyEvaluation)));
}

#[test]
fn training_is_deterministic() {
    let p = small_pipeline(1);
    let cfg = small_config(&p);
    let inputs = p.encode_all(&synthetic::separable_pairs(12, 4), &cfg);
    let run = || {
        let model = SiameseModel::build(cfg.clone(), p.lex_layout(), &mut Rng::new(9)).unwrap();
        let out = train(model, &inputs, &inputs, &quick_train_config()).unwrap();
        (out.history.to_json(), crate::model::write_checkpoint(&out.model, Some(&out.optimizer)))
    };
    assert_eq!(run(), run());
}

#[test]
fn early_stopping_returns_best_model() {
    let p = small_pipeline(1);
    let cfg = small_config(&p);
    let train_set = p.encode_all(&synthetic::separable_pairs(12, 4), &cfg);
    let dev_set = p.encode_all(&synthetic::separable_pairs(6, 5), &cfg);
    let model = SiameseModel::build(cfg, p.lex_layout(), &mut Rng::new(2)).unwrap();
    let tc = TrainConfig {
        max_epochs: 8,
        patience: 1,
        ..quick_train_config()
    };
    let out = train(model, &train_set, &dev_set, &tc).unwrap();
    let h = &out.history;
    let best = h.epochs.iter().map(|e| e.dev_weighted_f1).fold(f64::MIN, f64::max);
    assert_eq!(h.best_dev_weighted_f1, best);
    assert_eq!(evaluate(&out.model, &dev_set).unwrap().weighted_f1, best);
    // with patience 1 every epoch but the last must improve
    let f: Vec<f64> = h.epochs.iter().map(|e| e.dev_weighted_f1).collect();
    for w in f[..f.len() - 1].windows(2) {
        assert!(w[1] > w[0], "{f:?}");
    }
}

#[test]
fn training_rejects_tiny_or_empty_sets() {
    let p = small_pipeline(1);
    let cfg = small_config(&p);
    let inputs = p.encode_all(&synthetic::separable_pairs(3, 4), &cfg);
    let model = SiameseModel::build(cfg, p.lex_layout(), &mut Rng::new(2)).unwrap();
    assert!(train(model.clone(), &inputs[..1], &inputs, &quick_train_config()).is_err());
    assert!(train(model, &inputs, &[], &quick_train_config()).is_err());
}

#[test]
fn overfits_small_separable_set() {
    let p = small_pipeline(11);
    let cfg = ModelConfig {
        dense_sizes: [32, 16],
        gru_hidden: 8,
        ..small_config(&p)
    };
    let inputs = p.encode_all(&synthetic::separable_pairs(30, 12), &cfg);
    let model = SiameseModel::build(cfg, p.lex_layout(), &mut Rng::new(13)).unwrap();
    let tc = TrainConfig {
        batch_size: 4,
        lr: 0.01,
        max_epochs: 50,
        patience: 50,
        seed: 14,
        shuffle: true,
    };
    let out = train(model, &inputs, &inputs, &tc).unwrap();
    let m = evaluate(&out.model, &inputs).unwrap();
    assert_eq!(m.accuracy, 1.0, "{:?}", out.history.epochs.last());
    assert_eq!(m.weighted_f1, 1.0);
}

fn experiment(p: &FeaturePipeline) -> ExperimentData<'_> {
    ExperimentData {
        pipeline: p,
        train: synthetic::separable_pairs(12, 21),
        dev: synthetic::separable_pairs(6, 22),
        test: synthetic::separable_pairs(6, 23),
    }
}

#[test]
fn ablation_report_shape() {
    let p = small_pipeline(1);
    let base = small_config(&p);
    let report = run_feature_ablation(&experiment(&p), &base, &quick_train_config()).unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.key.as_str()).collect();
    assert_eq!(names, ["Lexicons", "GRU", "GRU + Lexicons"]);
    let csv = report.to_csv();
    assert!(csv.starts_with("system,precision,recall,weighted_f1\n"));
    assert_eq!(csv.lines().count(), 4);
    for r in &report.rows {
        for v in [r.precision, r.recall, r.weighted_f1] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn sweep_report_shape() {
    let p = small_pipeline(1);
    let base = small_config(&p);
    let report = run_seqlen_sweep(&experiment(&p), &base, &[4, 8, 16], &quick_train_config()).unwrap();
    assert_eq!(report.key_column, "maxlen");
    let keys: Vec<&str> = report.rows.iter().map(|r| r.key.as_str()).collect();
    assert_eq!(keys, ["4", "8", "16"]);
}

fn pretrained(p: &FeaturePipeline) -> SiameseModel {
    let cfg = small_config(p);
    let inputs = p.encode_all(&synthetic::separable_pairs(12, 30), &cfg);
    let model = SiameseModel::build(cfg, p.lex_layout(), &mut Rng::new(31)).unwrap();
    train(model, &inputs, &inputs, &quick_train_config()).unwrap().model
}

#[test]
fn direct_transfer_changes_nothing() {
    let p = small_pipeline(1);
    let base = pretrained(&p);
    let out = run_transfer(&base, &experiment(&p), TransferMode::Direct, &quick_train_config()).unwrap();
    assert_eq!(out.model, base);
    assert!(out.optimizer.is_none() && out.history.is_none());
}

#[test]
fn retrain_last_two_freezes_encoder_and_dense1() {
    let p = small_pipeline(1);
    let base = pretrained(&p);
    let tc = TrainConfig {
        max_epochs: 5,
        patience: 5,
        ..quick_train_config()
    };
    let out = run_transfer(&base, &experiment(&p), TransferMode::RetrainLast2, &tc).unwrap();
    for g in [LayerGroup::Gru, LayerGroup::Dense1] {
        assert_eq!(out.model.group_bytes(g), base.group_bytes(g), "{g:?}");
    }
    assert_ne!(out.model.group_bytes(LayerGroup::Out), base.group_bytes(LayerGroup::Out));
}

#[test]
fn transfer_mode_installs_wide_head() {
    let p = small_pipeline(1);
    let base = pretrained(&p);
    let out = run_transfer(&base, &experiment(&p), TransferMode::Transfer, &quick_train_config()).unwrap();
    assert_eq!(out.model.config.dense_sizes, [100, 50]);
    assert_eq!(out.model.group_bytes(LayerGroup::Gru).len(), base.group_bytes(LayerGroup::Gru).len());
}

#[test]
fn incompatible_resources_rejected_before_training() {
    let p = small_pipeline(1);
    let base = pretrained(&p);
    let other = FeaturePipeline::new(synthetic::embeddings(7, 1), synthetic::lexicons());
    let data = experiment(&other);
    let err = run_transfer(&base, &data, TransferMode::Tuning, &quick_train_config()).err().unwrap();
    assert!(matches!(err, HarnessError::Model(ModelError::Config(_))), "{err}");
    let fewer = FeaturePipeline::new(synthetic::embeddings(6, 1), synthetic::lexicons()[..1].to_vec());
    assert!(run_transfer(&base, &experiment(&fewer), TransferMode::Direct, &quick_train_config()).is_err());
}

#[test]
fn transfer_report_rows() {
    let m = compute_metrics(&[[1, 0, 0], [0, 1, 0], [0, 0, 1]]).unwrap();
    let r = transfer_report(&TransferMode::ALL.map(|t| (t, m.clone())));
    let names: Vec<&str> = r.rows.iter().map(|r| r.key.as_str()).collect();
    assert_eq!(
        names,
        ["Direct", "Tuning", "Transfer", "Re-train last 2 layers", "Re-train last 3 layers"]
    );
}
