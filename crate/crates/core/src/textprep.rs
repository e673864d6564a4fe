//! Tokenization, embedding-table loading and fixed-length sequence windows.

use crate::numcore::Tensor;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_EMBED_DIM: usize = 300;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embeddings line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Lowercases, splits on Unicode whitespace and peels leading/trailing
/// punctuation into one-character tokens. Inner punctuation (`don't`,
/// `e-mail`) stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    /// Lines whose token had already been seen (last occurrence kept).
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        EmbeddingTable {
            dim,
            entries: HashMap::new(),
            duplicates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    /// Inserts or replaces; replacing counts as a duplicate.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim, "embedding length must equal dim");
        if self.entries.insert(token.into(), vector).is_some() {
            self.duplicates += 1;
        }
    }

    pub fn parse(reader: impl BufRead, dim: usize) -> Result<Self, EmbeddingError> {
        let mut table = EmbeddingTable::new(dim);
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| EmbeddingError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ').filter(|p| !p.is_empty());
            let token = parts.next().unwrap_or_default();
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| EmbeddingError::Line {
                        line: line_no,
                        message: format!("not a number: {p:?}"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if values.len() != dim {
                return Err(EmbeddingError::Line {
                    line: line_no,
                    message: format!("expected {dim} components, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::Line {
                    line: line_no,
                    message: "non-finite component".into(),
                });
            }
            table.insert(token, values);
        }
        if table.duplicates > 0 {
            log::warn!("{} duplicate embedding tokens; last occurrence kept", table.duplicates);
        }
        Ok(table)
    }
}

/// Loads a whitespace-separated `token v1 … v_dim` text file.
pub fn load_embeddings(path: &Path, dim: usize) -> Result<EmbeddingTable, EmbeddingError> {
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EmbeddingTable::parse(BufReader::new(file), dim)
}

/// A `[maxlen × dim]` embedding matrix, pre-padded with zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWindow {
    pub matrix: Tensor,
    /// Number of real (non-padding) rows, i.e. `min(tokens, maxlen)`.
    pub real_length: usize,
}

/// Embeds `tokens` (OOV → zero row), keeps the last `maxlen` when too long,
/// and left-pads with zero rows so the sentence ends on the final row.
pub fn embed_and_pad(tokens: &[String], table: &EmbeddingTable, maxlen: usize) -> TokenWindow {
    assert!(maxlen >= 1, "maxlen must be at least 1");
    let dim = table.dim();
    let kept = &tokens[tokens.len().saturating_sub(maxlen)..];
    let mut matrix = Tensor::zeros(&[maxlen, dim]);
    let offset = maxlen - kept.len();
    for (i, tok) in kept.iter().enumerate() {
        if let Some(v) = table.get(tok) {
            matrix.row_mut(offset + i).copy_from_slice(v);
        }
    }
    TokenWindow {
        matrix,
        real_length: kept.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("NO parent should hit their child."),
            toks(&["no", "parent", "should", "hit", "their", "child", "."])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Agree!!!"), toks(&["agree", "!", "!", "!"]));
        assert_eq!(tokenize("  \"Don't\"\tgo "), toks(&["\"", "don't", "\"", "go"]));
        assert_eq!(tokenize("..."), toks(&[".", ".", "."]));
    }

    #[test]
    fn parse_embeddings_basic_and_errors() {
        let t = EmbeddingTable::parse("hello 0.1 0.2\n".as_bytes(), 2).unwrap();
        assert_eq!(t.get("hello"), Some(&[0.1, 0.2][..]));
        let err = EmbeddingTable::parse("a 1 2\nb 1 2 3\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, EmbeddingError::Line { line: 2, .. }), "{err}");
        let err = EmbeddingTable::parse("a 1 x\n".as_bytes(), 2).unwrap_err();
        assert!(matches!(err, EmbeddingError::Line { line: 1, .. }));
    }

    #[test]
    fn duplicate_token_last_wins() {
        let t = EmbeddingTable::parse("a 1 2\nb 0 0\na 3 4\n".as_bytes(), 2).unwrap();
        assert_eq!(t.get("a"), Some(&[3.0, 4.0][..]));
        assert_eq!(t.duplicates, 1);
        assert_eq!(t.len(), 2);
    }

    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2);
        t.insert("a", vec![1.0, 2.0]);
        t.insert("b", vec![3.0, 4.0]);
        t.insert("c", vec![5.0, 6.0]);
        t
    }

    #[test]
    fn short_sentence_is_prepadded() {
        let w = embed_and_pad(&toks(&["a", "b", "c"]), &table(), 5);
        assert_eq!(w.matrix.shape(), &[5, 2]);
        assert_eq!(w.real_length, 3);
        assert_eq!(
            w.matrix.data(),
            &[0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
        );
    }

    #[test]
    fn long_sentence_keeps_tail() {
        let tokens: Vec<String> = (0..100).map(|i| format!("w{i}")).collect();
        let mut t = EmbeddingTable::new(1);
        for i in 0..100 {
            t.insert(format!("w{i}"), vec![i as f64]);
        }
        let w = embed_and_pad(&tokens, &t, 64);
        assert_eq!(w.real_length, 64);
        let got: Vec<f64> = w.matrix.data().to_vec();
        let expected: Vec<f64> = (36..100).map(|i| i as f64).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn all_oov_is_zero_matrix() {
        let w = embed_and_pad(&toks(&["x", "y"]), &table(), 4);
        assert_eq!(w.matrix.max_abs(), 0.0);
        assert_eq!(w.real_length, 2);
    }

    proptest! {
        #[test]
        fn shape_fixed_and_front_padding_irrelevant_at_maxlen(
            words in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "zz"]), 0..20),
            extra in 0usize..10,
            maxlen in 1usize..12,
        ) {
            let tokens = toks(&words);
            let w = embed_and_pad(&tokens, &table(), maxlen);
            prop_assert_eq!(w.matrix.shape(), &[maxlen, 2]);
            if tokens.len() >= maxlen {
                let mut padded = vec!["zz".to_string(); extra];
                padded.extend(tokens.iter().cloned());
                prop_assert_eq!(embed_and_pad(&padded, &table(), maxlen), w);
            }
        }
    }
}
