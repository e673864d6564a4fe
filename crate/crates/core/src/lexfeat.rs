//! Affect / sentiment / emotion lexicons and per-sentence lexical features.
//!
//! Every lexicon family is read through one TSV layout:
//!
//! ```text
//! #channels<TAB>valence<TAB>arousal
//! # comment lines start with '#'
//! good<TAB>3<TAB>0.4
//! ```
//!
//! For each channel of each lexicon, [`featurize`] emits the match count,
//! sum, mean and max over the sentence's matched tokens. A single-channel
//! lexicon registered as [`NEGATION_LEXICON`] therefore contributes the
//! number of negation words through its count aggregate.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const NEGATION_LEXICON: &str = "negation";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read lexicon {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon {name} line {line}: {message}")]
    Parse {
        name: String,
        line: usize,
        message: String,
    },
    #[error("lexicon {name} line {line}: expected {expected} channel values, found {found}")]
    ChannelCount {
        name: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("negation lexicon must have exactly one channel, found {0}")]
    NegationChannels(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    name: String,
    channels: Vec<String>,
    entries: HashMap<String, Vec<f64>>,
    pub duplicates: usize,
}

impl Lexicon {
    pub fn new(name: impl Into<String>, channels: Vec<String>) -> Self {
        Lexicon {
            name: name.into(),
            channels,
            entries: HashMap::new(),
            duplicates: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Tokens are stored lowercased.
    pub fn insert(&mut self, token: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.channels.len(), "channel count mismatch");
        if self.entries.insert(token.to_lowercase(), values).is_some() {
            self.duplicates += 1;
        }
    }

    pub fn parse(name: &str, reader: impl BufRead) -> Result<Self, LexiconError> {
        let perr = |line: usize, message: String| LexiconError::Parse {
            name: name.to_string(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l.map_err(|e| perr(1, e.to_string()))?,
            None => return Err(perr(1, "missing #channels header".into())),
        };
        let mut fields = header.trim_end_matches('\r').split('\t');
        if fields.next() != Some("#channels") {
            return Err(perr(1, "first line must start with #channels".into()));
        }
        let channels: Vec<String> = fields.map(str::to_string).collect();
        if channels.is_empty() || channels.iter().any(String::is_empty) {
            return Err(perr(1, "header declares no channels".into()));
        }
        if name == NEGATION_LEXICON && channels.len() != 1 {
            return Err(LexiconError::NegationChannels(channels.len()));
        }
        let mut lex = Lexicon::new(name, channels);
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| perr(line_no, e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let token = parts.next().unwrap_or_default().trim();
            if token.is_empty() {
                return Err(perr(line_no, "empty token".into()));
            }
            let values = parts
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| perr(line_no, format!("not a finite number: {p:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != lex.channels.len() {
                return Err(LexiconError::ChannelCount {
                    name: name.to_string(),
                    line: line_no,
                    expected: lex.channels.len(),
                    found: values.len(),
                });
            }
            lex.insert(token, values);
        }
        if lex.duplicates > 0 {
            log::warn!("lexicon {name}: {} duplicate tokens, last kept", lex.duplicates);
        }
        Ok(lex)
    }
}

/// Loads a lexicon file under the given name.
pub fn load_lexicon(name: &str, path: &Path) -> Result<Lexicon, LexiconError> {
    let file = File::open(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Lexicon::parse(name, BufReader::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Count,
    Sum,
    Mean,
    Max,
}

pub const AGGREGATORS: [Aggregator; 4] = [
    Aggregator::Count,
    Aggregator::Sum,
    Aggregator::Mean,
    Aggregator::Max,
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub lexicon: String,
    pub channel: String,
    pub aggregator: Aggregator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexFeatureVector {
    pub values: Vec<f64>,
    pub layout: Vec<FeatureDescriptor>,
}

/// Feature layout for a lexicon configuration, in lexicon → channel →
/// aggregator order.
pub fn feature_layout(lexicons: &[Lexicon]) -> Vec<FeatureDescriptor> {
    lexicons
        .iter()
        .flat_map(|lex| {
            lex.channels.iter().flat_map(move |ch| {
                AGGREGATORS.iter().map(move |&aggregator| FeatureDescriptor {
                    lexicon: lex.name.clone(),
                    channel: ch.clone(),
                    aggregator,
                })
            })
        })
        .collect()
}

/// Bag-of-words lexical features of one token sequence.
pub fn featurize(tokens: &[String], lexicons: &[Lexicon]) -> LexFeatureVector {
    let mut values = Vec::new();
    for lex in lexicons {
        let hits: Vec<&[f64]> = tokens.iter().filter_map(|t| lex.get(t)).collect();
        let count = hits.len() as f64;
        for ch in 0..lex.channels.len() {
            let sum: f64 = hits.iter().map(|v| v[ch]).sum();
            let (mean, max) = if hits.is_empty() {
                (0.0, 0.0)
            } else {
                let max = hits.iter().map(|v| v[ch]).fold(f64::NEG_INFINITY, f64::max);
                (sum / count, max)
            };
            values.extend([count, sum, mean, max]);
        }
    }
    LexFeatureVector {
        values,
        layout: feature_layout(lexicons),
    }
}
