//! Flat `key = value` run configuration.
//!
//! ```text
//! # model
//! embed_dim = 300
//! dense_sizes = 100,50
//! feature_mode = both
//! # training
//! batch_size = 64
//! split = 0.8,0.1,0.1
//! ```
//!
//! Keys mirror the model and training config fields; anything omitted keeps
//! its default. `lex_dim` and `num_classes` are derived, not configured.

use anyhow::{anyhow, bail, Context, Result};
use concord::datasets::DEFAULT_SPLIT;
use concord::harness::TrainConfig;
use concord::model::ModelConfig;
use serde::Serialize;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: DEFAULT_SPLIT,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_list<T: FromStr, const N: usize>(key: &str, value: &str) -> Result<[T; N]>
where
    T::Err: std::fmt::Display,
{
    let items = value
        .split(',')
        .map(|v| parse::<T>(key, v.trim()))
        .collect::<Result<Vec<T>>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| anyhow!("{key}: expected {N} comma-separated values, found {n}"))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "embed_dim" => m.embed_dim = parse(key, value)?,
            "gru_hidden" => m.gru_hidden = parse(key, value)?,
            "dense_sizes" => m.dense_sizes = parse_list(key, value)?,
            "maxlen" => m.maxlen = parse(key, value)?,
            "dropout_rate" => m.dropout_rate = parse(key, value)?,
            "feature_mode" => m.feature_mode = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "shuffle" => t.shuffle = parse(key, value)?,
            "split" => self.split = parse_list(key, value)?,
            "lex_dim" | "num_classes" => bail!("{key} is derived from the inputs and cannot be set"),
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                RunConfig::parse_str(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }
}
