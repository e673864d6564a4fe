//! Small deterministic corpora for tests, smoke runs and `gradcheck`.
//!
//! Responses carry label cues: agreeing ones contain positive words,
//! disagreeing ones contain negative words plus a negator, and neutral
//! ones only topic words. The two bundled lexicons (`valence`, 1 channel,
//! and `negation`) give 8 lexical features per sentence.

use crate::datasets::{Label, QRPair};
use crate::lexfeat::{Lexicon, NEGATION_LEXICON};
use crate::numcore::Rng;
use crate::textprep::EmbeddingTable;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

const TOPIC: [&str; 14] = [
    "the", "tax", "policy", "gun", "law", "school", "climate", "vote", "city", "budget", "health", "market", "plan",
    "rule",
];
const AGREE: [(&str, f64); 6] = [
    ("agree", 3.0),
    ("yes", 2.0),
    ("exactly", 2.0),
    ("right", 2.0),
    ("true", 1.0),
    ("correct", 2.0),
];
const DISAGREE: [(&str, f64); 5] = [
    ("wrong", -3.0),
    ("false", -2.0),
    ("nonsense", -3.0),
    ("disagree", -3.0),
    ("bad", -2.0),
];
const NEGATORS: [&str; 3] = ["not", "never", "no"];
const NEUTRAL: [&str; 4] = ["what", "about", "maybe", "question"];

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.below(words.len())]
}

/// `n` pairs with labels cycling agree, disagree, none.
pub fn separable_pairs(n: usize, seed: u64) -> Vec<QRPair> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let quote: Vec<&str> = (0..4 + rng.below(4)).map(|_| pick(&mut rng, &TOPIC)).collect();
            let mut resp: Vec<&str> = (0..2 + rng.below(3)).map(|_| pick(&mut rng, &TOPIC)).collect();
            match label {
                Label::Agree => {
                    let cues: Vec<&str> = AGREE.iter().map(|(w, _)| *w).collect();
                    resp.push(pick(&mut rng, &cues));
                    resp.push(pick(&mut rng, &cues));
                }
                Label::Disagree => {
                    let cues: Vec<&str> = DISAGREE.iter().map(|(w, _)| *w).collect();
                    resp.push(pick(&mut rng, &NEGATORS));
                    resp.push(pick(&mut rng, &cues));
                }
                Label::None => resp.push(pick(&mut rng, &NEUTRAL)),
            }
            rng.shuffle(&mut resp);
            QRPair {
                source_id: format!("syn-{i}"),
                quote_text: quote.join(" "),
                response_text: resp.join(" ") + ".",
                label,
            }
        })
        .collect()
}

/// Every fixture word, in a fixed order.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = TOPIC.to_vec();
    v.extend(AGREE.iter().map(|(w, _)| *w));
    v.extend(DISAGREE.iter().map(|(w, _)| *w));
    v.extend(NEGATORS);
    v.extend(NEUTRAL);
    v.push(".");
    v
}

/// Uniform(-0.5, 0.5) vectors for the fixture vocabulary.
pub fn embeddings(dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = Rng::new(seed);
    let mut table = EmbeddingTable::new(dim);
    for w in vocabulary() {
        table.insert(w, (0..dim).map(|_| rng.next_uniform() - 0.5).collect());
    }
    table
}

pub fn valence_tsv() -> String {
    let mut s = String::from("#channels\tvalence\n");
    for (w, v) in AGREE.iter().chain(&DISAGREE) {
        writeln!(s, "{w}\t{v}").unwrap();
    }
    s
}

pub fn negation_tsv() -> String {
    let mut s = String::from("#channels\tnegation\n");
    for w in NEGATORS {
        writeln!(s, "{w}\t1").unwrap();
    }
    s
}

/// The `valence` and `negation` lexicons: 2 channels × 4 aggregates.
pub fn lexicons() -> Vec<Lexicon> {
    vec![
        Lexicon::parse("valence", valence_tsv().as_bytes()).expect("fixture lexicon parses"),
        Lexicon::parse(NEGATION_LEXICON, negation_tsv().as_bytes()).expect("fixture lexicon parses"),
    ]
}

pub fn embeddings_text(table: &EmbeddingTable) -> String {
    let mut s = String::new();
    for w in vocabulary() {
        s.push_str(w);
        for v in table.get(w).expect("fixture word") {
            write!(s, " {v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Paths of a fixture written to disk.
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub pairs: PathBuf,
    pub embeddings: PathBuf,
    pub embed_dim: usize,
    /// `(lexicon name, path)`.
    pub lexicons: Vec<(String, PathBuf)>,
}

/// Writes `pairs.jsonl`, `embeddings.txt`, `valence.tsv` and
/// `negation.tsv` into `dir`.
pub fn write_fixture(dir: &Path, n_pairs: usize, embed_dim: usize, seed: u64) -> io::Result<FixtureFiles> {
    let pairs = dir.join("pairs.jsonl");
    crate::datasets::write_pairs_jsonl(&pairs, &separable_pairs(n_pairs, seed))
        .map_err(|e| io::Error::other(e.to_string()))?;
    let emb = dir.join("embeddings.txt");
    std::fs::write(&emb, embeddings_text(&embeddings(embed_dim, seed ^ 0x5eed)))?;
    let val = dir.join("valence.tsv");
    std::fs::write(&val, valence_tsv())?;
    let neg = dir.join("negation.tsv");
    std::fs::write(&neg, negation_tsv())?;
    Ok(FixtureFiles {
        pairs,
        embeddings: emb,
        embed_dim,
        lexicons: vec![("valence".into(), val), (NEGATION_LEXICON.into(), neg)],
    })
}
