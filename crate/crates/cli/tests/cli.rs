use concord::synthetic::{write_fixture, FixtureFiles};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_CONFIG: &str = "\
embed_dim = 12
gru_hidden = 6
dense_sizes = 16,8
maxlen = 12
dropout_rate = 0.2
batch_size = 4
lr = 0.01
max_epochs = 6
patience = 3
seed = 5
";

fn concord(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_concord"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
    files: FixtureFiles,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let files = write_fixture(dir.path(), 30, 12, 7).unwrap();
        let config = dir.path().join("run.cfg");
        std::fs::write(&config, SMALL_CONFIG).unwrap();
        Workspace { dir, files, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn resources(&self) -> Vec<String> {
        let mut v = vec!["--embeddings".to_string(), s(&self.files.embeddings).to_string()];
        for (name, path) in &self.files.lexicons {
            v.push("--lexicon".into());
            v.push(format!("{name}={}", path.display()));
        }
        v
    }

    fn run(&self, head: &[&str], tail: &[&str]) -> Output {
        let res = self.resources();
        let mut args: Vec<&str> = head.to_vec();
        args.extend(res.iter().map(String::as_str));
        args.extend(tail);
        concord(&args)
    }

    fn train(&self, ckpt: &Path) -> Output {
        self.run(
            &["train", "--pairs", s(&self.files.pairs)],
            &["--config", s(&self.config), "--out-checkpoint", s(ckpt)],
        )
    }
}

#[test]
fn prepare_threads() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(
        &raw,
        r#"{"debate_id":"d","post_id":"0","author":"a","side":"for","text":"root"}
{"debate_id":"d","post_id":"1","parent_id":"0","author":"b","side":"for","text":"one"}
{"debate_id":"d","post_id":"2","parent_id":"1","author":"c","side":"for","text":"two"}
{"debate_id":"d","post_id":"3","parent_id":"1","author":"d","side":"against","text":"three"}
"#,
    )
    .unwrap();
    let out = dir.path().join("pairs.jsonl");
    let o = concord(&["prepare", "--threads", s(&raw), "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    let pairs = concord::datasets::load_pairs_jsonl(&out).unwrap();
    assert_eq!(pairs.len(), 3);
    assert_eq!(stdout(&o), "agree\t1\ndisagree\t1\nnone\t1\n");
}

#[test]
fn prepare_iac() {
    let dir = tempfile::tempdir().unwrap();
    let ann = dir.path().join("ann.jsonl");
    let pairs = dir.path().join("pairs.jsonl");
    std::fs::write(&ann, "{\"pair_id\":\"p1\",\"scores\":[0,3]}\n").unwrap();
    std::fs::write(&pairs, "{\"id\":\"p1\",\"quote\":\"q\",\"response\":\"r\"}\n").unwrap();
    let out = dir.path().join("out.jsonl");
    let o = concord(&["prepare", "--iac", s(&ann), "--pairs", s(&pairs), "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    let labeled = concord::datasets::load_pairs_jsonl(&out).unwrap();
    assert_eq!(labeled[0].label, concord::datasets::Label::Agree);
}

#[test]
fn prepare_malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    std::fs::write(&raw, "{\"debate_id\": \n").unwrap();
    let o = concord(&["prepare", "--threads", s(&raw), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"), "{o:?}");
}

#[test]
fn train_is_deterministic_and_writes_artifacts() {
    let ws = Workspace::new();
    let a = ws.path("a.ckpt");
    let b = ws.path("b.ckpt");
    let oa = ws.train(&a);
    assert!(oa.status.success(), "{oa:?}");
    assert!(ws.train(&b).status.success());
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(&bytes[..8], b"CONCORD1");
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(ws.path("a.ckpt.history.json")).unwrap(),
        std::fs::read(ws.path("b.ckpt.history.json")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(ws.path("a.ckpt.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["model"]["embed_dim"], 12);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(stdout(&oa).starts_with("class,precision,recall,f1,support\n"));
}

#[test]
fn missing_embeddings_fails_before_training() {
    let ws = Workspace::new();
    let ckpt = ws.path("m.ckpt");
    let o = concord(&[
        "train",
        "--pairs",
        s(&ws.files.pairs),
        "--embeddings",
        s(&ws.path("nope.txt")),
        "--config",
        s(&ws.config),
        "--out-checkpoint",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!ckpt.exists());
    assert!(!ws.path("m.ckpt.manifest.json").exists());
}

#[test]
fn eval_predict_transfer_on_trained_model() {
    let ws = Workspace::new();
    let ckpt = ws.path("t.ckpt");
    assert!(ws.train(&ckpt).status.success());

    let o = ws.run(&["eval", "--checkpoint", s(&ckpt), "--pairs", s(&ws.files.pairs)], &[]);
    assert!(o.status.success(), "{o:?}");
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().last().unwrap().starts_with("weighted,"));

    let o = ws.run(
        &["predict", "--checkpoint", s(&ckpt)],
        &["--quote", "the tax plan", "--response", "yes exactly right"],
    );
    assert!(o.status.success(), "{o:?}");
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let probs: Vec<f64> = v["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).collect();
    assert_eq!(probs.len(), 3);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(["agree", "disagree", "none"].contains(&v["label"].as_str().unwrap()));

    let digest = file_bytes(&ckpt);
    let report = ws.path("direct.csv");
    let o = ws.run(
        &["transfer", "--checkpoint", s(&ckpt), "--pairs", s(&ws.files.pairs), "--mode", "direct"],
        &["--config", s(&ws.config), "--report", s(&report)],
    );
    assert!(o.status.success(), "{o:?}");
    assert_eq!(file_bytes(&ckpt), digest);
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("system,precision,recall,weighted_f1\nDirect,"), "{csv}");

    let o = ws.run(
        &["transfer", "--checkpoint", s(&ckpt), "--pairs", s(&ws.files.pairs), "--mode", "sideways"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

fn file_bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn incompatible_lexicons_exit_2() {
    let ws = Workspace::new();
    let ckpt = ws.path("t.ckpt");
    assert!(ws.train(&ckpt).status.success());
    let (name, path) = &ws.files.lexicons[0];
    let o = concord(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--pairs",
        s(&ws.files.pairs),
        "--embeddings",
        s(&ws.files.embeddings),
        "--lexicon",
        &format!("{name}={}", path.display()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_checkpoint_exits_2() {
    let ws = Workspace::new();
    let bad = ws.path("bad.ckpt");
    std::fs::write(&bad, b"NOTACKPT").unwrap();
    let o = ws.run(&["eval", "--checkpoint", s(&bad), "--pairs", s(&ws.files.pairs)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
}

#[test]
fn stats_histogram() {
    let ws = Workspace::new();
    let o = concord(&["stats", "--pairs", s(&ws.files.pairs)]);
    assert!(o.status.success());
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("bin_start,quote_count,response_count"));
    let starts: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(starts, (0..starts.len()).map(|i| 10 * i).collect::<Vec<_>>());
}

#[test]
fn ablation_and_sweep_reports() {
    let ws = Workspace::new();
    let o = ws.run(&["ablation", "--pairs", s(&ws.files.pairs)], &["--config", s(&ws.config)]);
    assert!(o.status.success(), "{o:?}");
    let systems: Vec<String> = stdout(&o).lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect();
    assert_eq!(systems, ["Lexicons", "GRU", "GRU + Lexicons"]);
    let o = ws.run(
        &["sweep", "--pairs", s(&ws.files.pairs)],
        &["--config", s(&ws.config), "--lengths", "4,8"],
    );
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("maxlen,precision,recall,weighted_f1\n4,"));
}

#[test]
fn gradcheck_exit_codes() {
    let o = concord(&["gradcheck", "--samples", "2"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let o = concord(&["gradcheck", "--samples", "2", "--tolerance", "0"]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(concord(&["train"]).status.code(), Some(2));
    assert_eq!(concord(&["prepare", "--out", "x"]).status.code(), Some(2));
}
