//! Binary checkpoint format.
//!
//! ```text
//! b"CONCORD1"
//! u64 LE      header length in bytes
//! header      UTF-8 JSON (config, lexicon layout, trainable mask, tensor
//!             names and shapes, optional optimizer section)
//! payload     every declared tensor as little-endian f64, in header order
//! ```
//!
//! The header is produced by `serde_json` from fixed-order structs, so
//! saving a loaded checkpoint reproduces the original bytes.

use super::{tensor_layout, ModelConfig, SiameseModel, TrainableMask};
use crate::lexfeat::FeatureDescriptor;
use crate::nn::{Adam, AdamConfig, BatchNormLayer, DenseLayer, GruLayer, Moments, BATCHNORM_EPS, BATCHNORM_MOMENTUM};
use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CONCORD1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("checkpoint header is invalid: {0}")]
    Header(String),
    #[error("checkpoint payload truncated: header declares {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("shape mismatch for layer {layer}: expected {expected:?}, checkpoint has {found:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    t: u64,
    /// Parameters with moments; each contributes `m` then `v` to the payload.
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    lexicon_layout: Vec<FeatureDescriptor>,
    trainable: TrainableMask,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

/// A model plus, optionally, the optimizer state that was training it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SiameseModel,
    pub optimizer: Option<Adam>,
}

pub fn write_checkpoint(model: &SiameseModel, optimizer: Option<&Adam>) -> Vec<u8> {
    let tensors = model.tensors();
    let entries: Vec<TensorEntry> = tensors
        .iter()
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect();
    let mut payload: Vec<u8> = Vec::with_capacity(8 * model.parameter_count());
    for (_, t) in &tensors {
        payload.extend(t.to_le_bytes());
    }
    let optimizer = optimizer.map(|adam| {
        let mut opt_entries = Vec::new();
        for (name, t) in &tensors {
            if let Some(mo) = adam.moments.get(name) {
                opt_entries.push(TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                });
                payload.extend(mo.m.to_le_bytes());
                payload.extend(mo.v.to_le_bytes());
            }
        }
        OptimizerHeader {
            config: adam.config,
            t: adam.t,
            tensors: opt_entries,
        }
    });
    let header = Header {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        lexicon_layout: model.lex_layout.clone(),
        trainable: model.trainable,
        tensors: entries,
        optimizer,
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&payload);
    out
}

fn check_layout(config: &ModelConfig, entries: &[TensorEntry]) -> Result<(), CheckpointError> {
    let layout = tensor_layout(config);
    for (i, (name, _, _, shape)) in layout.iter().enumerate() {
        match entries.get(i) {
            Some(e) if e.name == *name && e.shape == *shape => {}
            found => {
                return Err(CheckpointError::ShapeMismatch {
                    layer: name.clone(),
                    expected: shape.clone(),
                    found: found.map(|e| e.shape.clone()).unwrap_or_default(),
                })
            }
        }
    }
    if let Some(extra) = entries.get(layout.len()) {
        return Err(CheckpointError::ShapeMismatch {
            layer: extra.name.clone(),
            expected: vec![],
            found: extra.shape.clone(),
        });
    }
    Ok(())
}

fn take_tensor(payload: &[u8], at: &mut usize, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = payload[*at..*at + 8 * n]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    *at += 8 * n;
    Tensor::new(shape.to_vec(), data).expect("length follows shape")
}

/// Parses checkpoint bytes. When `expected` is given, every tensor must
/// match the shapes that config implies.
pub fn read_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated {
            expected: 16,
            found: bytes.len(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(CheckpointError::Truncated {
            expected: 16usize.saturating_add(header_len),
            found: bytes.len(),
        })?;
    let header: Header =
        serde_json::from_slice(&bytes[16..header_end]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Header(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.lexicon_layout.len() != header.config.lex_dim {
        return Err(CheckpointError::Header("lexicon layout length differs from lex_dim".into()));
    }

    if let Some(cfg) = expected {
        check_layout(cfg, &header.tensors)?;
    }
    check_layout(&header.config, &header.tensors)?;

    let mut declared: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if let Some(opt) = &header.optimizer {
        for e in &opt.tensors {
            let Some(p) = header.tensors.iter().find(|p| p.name == e.name) else {
                return Err(CheckpointError::Header(format!("optimizer state for unknown tensor {}", e.name)));
            };
            if p.shape != e.shape {
                return Err(CheckpointError::ShapeMismatch {
                    layer: e.name.clone(),
                    expected: p.shape.clone(),
                    found: e.shape.clone(),
                });
            }
            declared += 2 * e.shape.iter().product::<usize>();
        }
    }
    let payload = &bytes[header_end..];
    let expected_bytes = 8 * declared;
    if payload.len() < expected_bytes {
        return Err(CheckpointError::Truncated {
            expected: expected_bytes,
            found: payload.len(),
        });
    }
    if payload.len() > expected_bytes {
        return Err(CheckpointError::TrailingBytes(payload.len() - expected_bytes));
    }

    let cfg = header.config.clone();
    let mut at = 0;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for e in &header.tensors {
        tensors.insert(e.name.clone(), take_tensor(payload, &mut at, &e.shape));
    }
    let mut t = |name: &str| tensors.remove(name).expect("layout checked");
    let bn = |t: &mut dyn FnMut(&str) -> Tensor, p: &str| BatchNormLayer {
        gamma: t(&format!("{p}.gamma")),
        beta: t(&format!("{p}.beta")),
        running_mean: t(&format!("{p}.running_mean")),
        running_var: t(&format!("{p}.running_var")),
        momentum: BATCHNORM_MOMENTUM,
        eps: BATCHNORM_EPS,
    };
    let gru = cfg.feature_mode.uses_gru().then(|| GruLayer {
        wz: t("gru.wz"),
        wr: t("gru.wr"),
        wh: t("gru.wh"),
        uz: t("gru.uz"),
        ur: t("gru.ur"),
        uh: t("gru.uh"),
        bz: t("gru.bz"),
        br: t("gru.br"),
        bh: t("gru.bh"),
    });
    let input_bn = bn(&mut t, "input_bn");
    let dense1 = DenseLayer {
        w: t("dense1.w"),
        b: t("dense1.b"),
    };
    let bn1 = bn(&mut t, "bn1");
    let dense2 = DenseLayer {
        w: t("dense2.w"),
        b: t("dense2.b"),
    };
    let bn2 = bn(&mut t, "bn2");
    let out = DenseLayer {
        w: t("out.w"),
        b: t("out.b"),
    };
    let model = SiameseModel {
        config: cfg,
        lex_layout: header.lexicon_layout,
        gru,
        input_bn,
        dense1,
        bn1,
        dense2,
        bn2,
        out,
        trainable: header.trainable,
    };

    let optimizer = header.optimizer.map(|opt| {
        let mut adam = Adam::new(opt.config);
        adam.t = opt.t;
        for e in &opt.tensors {
            let m = take_tensor(payload, &mut at, &e.shape);
            let v = take_tensor(payload, &mut at, &e.shape);
            adam.moments.insert(e.name.clone(), Moments { m, v });
        }
        adam
    });
    Ok(Checkpoint { model, optimizer })
}

pub fn save_checkpoint(model: &SiameseModel, optimizer: Option<&Adam>, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, write_checkpoint(model, optimizer)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&read_file(path)?, None)
}

/// Loads and checks every tensor shape against `expected`.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(&read_file(path)?, Some(expected))
}
