//! Quote–response pairs: construction from debate threads and annotator
//! scores, JSONL I/O, corpus statistics and seeded splits.

use crate::numcore::Rng;
use crate::textprep::tokenize;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("posts reference missing parents: {0:?}")]
    DanglingParents(Vec<String>),
    #[error("duplicate post ids: {0:?}")]
    DuplicatePosts(Vec<String>),
    #[error("annotation {pair_id}: score {score} outside [-5, 5]")]
    ScoreRange { pair_id: String, score: f64 },
    #[error("annotation {0} has no scores")]
    NoScores(String),
    #[error("invalid split fractions {0:?}: must be nonnegative and sum to 1")]
    Fractions([f64; 3]),
}

/// The three classes, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Agree,
    Disagree,
    None,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Agree, Label::Disagree, Label::None];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Agree => "agree",
            Label::Disagree => "disagree",
            Label::None => "none",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Case-sensitive: only `agree`, `disagree`, `none`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agree" => Ok(Label::Agree),
            "disagree" => Ok(Label::Disagree),
            "none" => Ok(Label::None),
            other => Err(format!("unknown label {other:?} (expected agree|disagree|none)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRPair {
    #[serde(rename = "id")]
    pub source_id: String,
    #[serde(rename = "quote")]
    pub quote_text: String,
    #[serde(rename = "response")]
    pub response_text: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub debate_id: String,
    pub post_id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub author: String,
    #[serde(default)]
    pub side: Option<String>,
    pub text: String,
}

/// Which of the four thread rules produced a pair label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadRule {
    QuoteIsRoot,
    SameAuthor,
    SameSide,
    DifferentSide,
    /// Side label missing on either post; labeled none.
    MissingSide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThreadDerivation {
    pub pairs: Vec<QRPair>,
    /// Rule applied to each pair, parallel to `pairs`.
    pub rules: Vec<ThreadRule>,
    pub missing_side: usize,
}

/// Turns each non-root post into a (parent, post) pair labeled from side
/// and author metadata:
///
/// 1. parent is the debate's opening post → none
/// 2. same author as the parent → none
/// 3. different authors, same side → agree
/// 4. different authors, different sides → disagree
///
/// Output is ordered by `(debate_id, post_id)`.
pub fn derive_thread_labels(posts: &[RawPost]) -> Result<ThreadDerivation, DatasetError> {
    let mut by_key: HashMap<(&str, &str), &RawPost> = HashMap::new();
    let mut dupes = Vec::new();
    for p in posts {
        if by_key.insert((&p.debate_id, &p.post_id), p).is_some() {
            dupes.push(format!("{}/{}", p.debate_id, p.post_id));
        }
    }
    if !dupes.is_empty() {
        return Err(DatasetError::DuplicatePosts(dupes));
    }
    let dangling: Vec<String> = posts
        .iter()
        .filter_map(|p| {
            let parent = p.parent_id.as_deref()?;
            (!by_key.contains_key(&(p.debate_id.as_str(), parent)))
                .then(|| format!("{}/{} -> {}", p.debate_id, p.post_id, parent))
        })
        .collect();
    if !dangling.is_empty() {
        return Err(DatasetError::DanglingParents(dangling));
    }

    let mut children: Vec<&RawPost> = posts.iter().filter(|p| p.parent_id.is_some()).collect();
    children.sort_by(|a, b| (&a.debate_id, &a.post_id).cmp(&(&b.debate_id, &b.post_id)));

    let mut out = ThreadDerivation {
        pairs: Vec::with_capacity(children.len()),
        rules: Vec::with_capacity(children.len()),
        missing_side: 0,
    };
    for post in children {
        let parent = by_key[&(post.debate_id.as_str(), post.parent_id.as_deref().unwrap())];
        let rule = if parent.parent_id.is_none() {
            ThreadRule::QuoteIsRoot
        } else if parent.author == post.author {
            ThreadRule::SameAuthor
        } else {
            match (&parent.side, &post.side) {
                (Some(a), Some(b)) if a == b => ThreadRule::SameSide,
                (Some(_), Some(_)) => ThreadRule::DifferentSide,
                _ => ThreadRule::MissingSide,
            }
        };
        if rule == ThreadRule::MissingSide {
            out.missing_side += 1;
        }
        let label = match rule {
            ThreadRule::SameSide => Label::Agree,
            ThreadRule::DifferentSide => Label::Disagree,
            _ => Label::None,
        };
        out.pairs.push(QRPair {
            source_id: format!("{}/{}", post.debate_id, post.post_id),
            quote_text: parent.text.clone(),
            response_text: post.text.clone(),
            label,
        });
        out.rules.push(rule);
    }
    if out.missing_side > 0 {
        log::warn!("{} pairs lacked a side label and were labeled none", out.missing_side);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IacAnnotation {
    pub pair_id: String,
    pub scores: Vec<f64>,
}

/// Maps one score to a class: `[-5,-1)` disagree, `[-1,1]` none, `(1,5]` agree.
/// The closed ±1 boundaries belong to none.
pub fn classify_score(score: f64) -> Label {
    if score < -1.0 {
        Label::Disagree
    } else if score > 1.0 {
        Label::Agree
    } else {
        Label::None
    }
}

/// Merges several annotators' scores: none-class scores are dropped unless
/// every score is none-class, the survivors are averaged, and the average
/// is classified.
pub fn merge_iac(ann: &IacAnnotation) -> Result<Label, DatasetError> {
    if ann.scores.is_empty() {
        return Err(DatasetError::NoScores(ann.pair_id.clone()));
    }
    if let Some(&bad) = ann
        .scores
        .iter()
        .find(|s| !(-5.0..=5.0).contains(*s))
    {
        return Err(DatasetError::ScoreRange {
            pair_id: ann.pair_id.clone(),
            score: bad,
        });
    }
    let mut polar: Vec<f64> = ann
        .scores
        .iter()
        .copied()
        .filter(|&s| classify_score(s) != Label::None)
        .collect();
    if polar.is_empty() {
        return Ok(Label::None);
    }
    // summing in sorted order keeps the result independent of score order
    polar.sort_by(f64::total_cmp);
    let mean = polar.iter().sum::<f64>() / polar.len() as f64;
    Ok(classify_score(mean))
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// Parses JSONL, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    name: &str,
    reader: impl BufRead,
) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let perr = |message: String| DatasetError::Parse {
            path: name.to_string(),
            line: idx + 1,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}

pub fn load_pairs_jsonl(path: &Path) -> Result<Vec<QRPair>, DatasetError> {
    read_jsonl(&path.display().to_string(), open(path)?)
}

/// A pair without a label, as supplied next to IAC annotations.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct UnlabeledPair {
    pub id: String,
    pub quote: String,
    pub response: String,
}

pub fn load_unlabeled_pairs_jsonl(path: &Path) -> Result<Vec<UnlabeledPair>, DatasetError> {
    read_jsonl(&path.display().to_string(), open(path)?)
}

pub fn load_threads_jsonl(path: &Path) -> Result<Vec<RawPost>, DatasetError> {
    read_jsonl(&path.display().to_string(), open(path)?)
}

pub fn load_iac_jsonl(path: &Path) -> Result<Vec<IacAnnotation>, DatasetError> {
    read_jsonl(&path.display().to_string(), open(path)?)
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[QRPair]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pairs serialize");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthSummary {
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_start: usize,
    pub quote_count: usize,
    pub response_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub total: usize,
    pub label_counts: BTreeMap<Label, usize>,
    pub quote_length: LengthSummary,
    pub response_length: LengthSummary,
    pub bin_width: usize,
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BIN_WIDTH: usize = 10;

impl StatsReport {
    /// `bin_start,quote_count,response_count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin_start,quote_count,response_count\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{},{}\n", b.bin_start, b.quote_count, b.response_count));
        }
        s
    }

    pub fn count(&self, label: Label) -> usize {
        self.label_counts.get(&label).copied().unwrap_or(0)
    }
}

fn summarize(lengths: &mut [usize]) -> LengthSummary {
    if lengths.is_empty() {
        return LengthSummary {
            mean: 0.0,
            median: 0.0,
        };
    }
    lengths.sort_unstable();
    let n = lengths.len();
    let mean = lengths.iter().sum::<usize>() as f64 / n as f64;
    let median = if n % 2 == 1 {
        lengths[n / 2] as f64
    } else {
        (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
    };
    LengthSummary { mean, median }
}

/// Per-label counts, token-length summaries and a length histogram with
/// bins of width 10 covering `0..=max length`.
pub fn dataset_stats(pairs: &[QRPair], tokenizer: impl Fn(&str) -> Vec<String>) -> StatsReport {
    let mut label_counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|&l| (l, 0)).collect();
    let mut q_lens = Vec::with_capacity(pairs.len());
    let mut r_lens = Vec::with_capacity(pairs.len());
    for p in pairs {
        *label_counts.entry(p.label).or_default() += 1;
        q_lens.push(tokenizer(&p.quote_text).len());
        r_lens.push(tokenizer(&p.response_text).len());
    }
    let max_len = q_lens.iter().chain(&r_lens).copied().max();
    let histogram = match max_len {
        None => Vec::new(),
        Some(max) => {
            let bins = max / HISTOGRAM_BIN_WIDTH + 1;
            let mut h: Vec<HistogramBin> = (0..bins)
                .map(|b| HistogramBin {
                    bin_start: b * HISTOGRAM_BIN_WIDTH,
                    quote_count: 0,
                    response_count: 0,
                })
                .collect();
            for &l in &q_lens {
                h[l / HISTOGRAM_BIN_WIDTH].quote_count += 1;
            }
            for &l in &r_lens {
                h[l / HISTOGRAM_BIN_WIDTH].response_count += 1;
            }
            h
        }
    };
    StatsReport {
        total: pairs.len(),
        label_counts,
        quote_length: summarize(&mut q_lens),
        response_length: summarize(&mut r_lens),
        bin_width: HISTOGRAM_BIN_WIDTH,
        histogram,
    }
}

/// Statistics with the crate's default tokenizer.
pub fn default_stats(pairs: &[QRPair]) -> StatsReport {
    dataset_stats(pairs, tokenize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

/// Seeded shuffle then contiguous train/dev/test slices. Slice sizes are
/// `round(n·f_train)` and `round(n·f_dev)`; test takes the remainder.
pub fn split_dataset<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<Split<T>, DatasetError> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DatasetError::Fractions(fractions));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let n_train = ((n as f64 * fractions[0]).round() as usize).min(n);
    let n_dev = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok(Split {
        train: pick(&order[..n_train]),
        dev: pick(&order[n_train..n_train + n_dev]),
        test: pick(&order[n_train + n_dev..]),
    })
}

/// Distinct source ids, used to sanity-check that splits do not overlap.
pub fn ids(pairs: &[QRPair]) -> HashSet<&str> {
    pairs.iter().map(|p| p.source_id.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn post(id: &str, parent: Option<&str>, author: &str, side: Option<&str>) -> RawPost {
        RawPost {
            debate_id: "d1".into(),
            post_id: id.into(),
            parent_id: parent.map(str::to_string),
            author: author.into(),
            side: side.map(str::to_string),
            text: format!("text of {id}"),
        }
    }

    #[test]
    fn thread_rules() {
        let posts = vec![
            post("p0", None, "host", None),
            post("p1", Some("p0"), "a", Some("for")),
            post("p2", Some("p1"), "a", Some("against")),
            post("p3", Some("p1"), "b", Some("for")),
            post("p4", Some("p1"), "c", Some("against")),
            post("p5", Some("p1"), "d", None),
        ];
        let d = derive_thread_labels(&posts).unwrap();
        let labels: Vec<Label> = d.pairs.iter().map(|p| p.label).collect();
        assert_eq!(
            labels,
            vec![Label::None, Label::None, Label::Agree, Label::Disagree, Label::None]
        );
        assert_eq!(
            d.rules,
            vec![
                ThreadRule::QuoteIsRoot,
                ThreadRule::SameAuthor,
                ThreadRule::SameSide,
                ThreadRule::DifferentSide,
                ThreadRule::MissingSide
            ]
        );
        assert_eq!(d.missing_side, 1);
        assert_eq!(d.pairs[2].quote_text, "text of p1");
        assert_eq!(d.pairs[2].response_text, "text of p3");
        assert_eq!(d.pairs[2].source_id, "d1/p3");
    }

    #[test]
    fn dangling_parent_lists_offenders() {
        let posts = vec![post("p0", None, "x", None), post("p1", Some("nope"), "y", Some("for"))];
        match derive_thread_labels(&posts).unwrap_err() {
            DatasetError::DanglingParents(ids) => assert_eq!(ids, vec!["d1/p1 -> nope".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn iac_cases() {
        let ann = |s: &[f64]| IacAnnotation {
            pair_id: "x".into(),
            scores: s.to_vec(),
        };
        assert_eq!(merge_iac(&ann(&[-3.0])).unwrap(), Label::Disagree);
        assert_eq!(merge_iac(&ann(&[0.0, 3.0])).unwrap(), Label::Agree);
        assert_eq!(merge_iac(&ann(&[0.5, -0.5])).unwrap(), Label::None);
        assert_eq!(merge_iac(&ann(&[1.0])).unwrap(), Label::None);
        assert_eq!(merge_iac(&ann(&[-1.0])).unwrap(), Label::None);
        assert_eq!(merge_iac(&ann(&[1.5])).unwrap(), Label::Agree);
        // polar scores that average back inside [-1, 1] land on none
        assert_eq!(merge_iac(&ann(&[3.0, -2.5])).unwrap(), Label::None);
        assert!(matches!(merge_iac(&ann(&[6.0])), Err(DatasetError::ScoreRange { .. })));
        assert!(matches!(merge_iac(&ann(&[])), Err(DatasetError::NoScores(_))));
    }

    #[test]
    fn pairs_jsonl_parsing() {
        let good = r#"{"id":"1","quote":"q","response":"r","label":"agree"}

{"id":"2","quote":"q","response":"r","label":"none"}
{"id":"3","quote":"q","response":"r","label":"disagree"}
"#;
        let pairs: Vec<QRPair> = read_jsonl("t", good.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[2].label, Label::Disagree);

        let bad = "{\"id\":\"1\",\"quote\":\"q\",\"response\":\"r\",\"label\":\"Agree\"}\n";
        let err = read_jsonl::<QRPair>("t", bad.as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 1, .. }), "{err}");

        let missing = "{\"id\":\"1\",\"quote\":\"q\",\"label\":\"agree\"}\n";
        assert!(read_jsonl::<QRPair>("t", missing.as_bytes()).is_err());
    }

    #[test]
    fn label_from_str_is_case_sensitive() {
        assert_eq!("agree".parse::<Label>().unwrap(), Label::Agree);
        assert!("Agree".parse::<Label>().is_err());
    }

    fn pair(q: &str, r: &str, label: Label) -> QRPair {
        QRPair {
            source_id: q.into(),
            quote_text: q.into(),
            response_text: r.into(),
            label,
        }
    }

    #[test]
    fn stats_lengths_and_histogram() {
        let pairs = vec![
            pair("a b c d", "x", Label::Agree),
            pair("a b c d e f", "one two three four five six seven eight nine ten eleven", Label::None),
        ];
        let s = default_stats(&pairs);
        assert_eq!(s.quote_length.mean, 5.0);
        assert_eq!(s.quote_length.median, 5.0);
        assert_eq!(s.count(Label::Agree), 1);
        assert_eq!(s.count(Label::Disagree), 0);
        assert_eq!(s.histogram.len(), 2);
        assert_eq!(s.histogram[0].quote_count, 2);
        assert_eq!(s.histogram[1].response_count, 1);
        assert!(s.histogram_csv().starts_with("bin_start,quote_count,response_count\n0,2,1\n10,0,1\n"));
    }

    #[test]
    fn stats_of_empty_dataset() {
        let s = default_stats(&[]);
        assert_eq!(s.total, 0);
        assert!(s.histogram.is_empty());
        assert!(Label::ALL.iter().all(|&l| s.count(l) == 0));
    }

    #[test]
    fn split_sizes_and_errors() {
        let items: Vec<usize> = (0..10).collect();
        let s = split_dataset(&items, DEFAULT_SPLIT, 1).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_dataset(&items, DEFAULT_SPLIT, 1).unwrap());
        assert!(split_dataset(&items, [0.5, 0.5, 0.5], 1).is_err());
        assert!(split_dataset(&items, [1.2, -0.1, -0.1], 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 0usize..60, seed in any::<u64>(), a in 0.0f64..1.0) {
            let items: Vec<usize> = (0..n).collect();
            let b = (1.0 - a) / 2.0;
            let s = split_dataset(&items, [a, b, 1.0 - a - b], seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, items);
        }

        #[test]
        fn iac_merge_permutation_invariant(
            scores in prop::collection::vec(-5.0f64..=5.0, 1..8),
            seed in any::<u64>(),
        ) {
            let mut shuffled = scores.clone();
            crate::numcore::Rng::new(seed).shuffle(&mut shuffled);
            let a = merge_iac(&IacAnnotation { pair_id: "p".into(), scores }).unwrap();
            let b = merge_iac(&IacAnnotation { pair_id: "p".into(), scores: shuffled }).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
