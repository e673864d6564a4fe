//! Text → model input: tokenization, embedding windows and lexical features.

use crate::datasets::QRPair;
use crate::lexfeat::{feature_layout, featurize, FeatureDescriptor, Lexicon};
use crate::model::{ModelConfig, ModelError, PairInput};
use crate::textprep::{embed_and_pad, tokenize, EmbeddingTable};

#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub embeddings: EmbeddingTable,
    pub lexicons: Vec<Lexicon>,
}

impl FeaturePipeline {
    pub fn new(embeddings: EmbeddingTable, lexicons: Vec<Lexicon>) -> Self {
        FeaturePipeline { embeddings, lexicons }
    }

    pub fn lex_layout(&self) -> Vec<FeatureDescriptor> {
        feature_layout(&self.lexicons)
    }

    /// `base` with `embed_dim` and `lex_dim` taken from the loaded resources.
    pub fn configure(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embeddings.dim(),
            lex_dim: self.lex_layout().len(),
            ..base.clone()
        }
    }

    /// Fails when the resources do not match what `config` expects.
    pub fn check_compatible(&self, config: &ModelConfig, layout: &[FeatureDescriptor]) -> Result<(), ModelError> {
        if config.feature_mode.uses_gru() && config.embed_dim != self.embeddings.dim() {
            return Err(ModelError::Config(format!(
                "model expects {}-d embeddings, got {}",
                config.embed_dim,
                self.embeddings.dim()
            )));
        }
        if self.lex_layout() != layout {
            return Err(ModelError::Config(
                "lexicon feature layout differs from the model's".into(),
            ));
        }
        Ok(())
    }

    pub fn encode_text(&self, quote: &str, response: &str, label: usize, config: &ModelConfig) -> PairInput {
        let q = tokenize(quote);
        let r = tokenize(response);
        let mode = config.feature_mode;
        let window = |t: &[String]| mode.uses_gru().then(|| embed_and_pad(t, &self.embeddings, config.maxlen).matrix);
        let lex = |t: &[String]| {
            if mode.uses_lex() {
                featurize(t, &self.lexicons).values
            } else {
                Vec::new()
            }
        };
        PairInput {
            quote: window(&q),
            response: window(&r),
            quote_lex: lex(&q),
            response_lex: lex(&r),
            label,
        }
    }

    pub fn encode(&self, pair: &QRPair, config: &ModelConfig) -> PairInput {
        self.encode_text(&pair.quote_text, &pair.response_text, pair.label.index(), config)
    }

    pub fn encode_all(&self, pairs: &[QRPair], config: &ModelConfig) -> Vec<PairInput> {
        pairs.iter().map(|p| self.encode(p, config)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureMode;

    fn pipeline() -> FeaturePipeline {
        let mut emb = EmbeddingTable::new(2);
        emb.insert("good", vec![1.0, 2.0]);
        emb.insert("idea", vec![3.0, 4.0]);
        let lex = Lexicon::parse("val", "#channels\tv\ngood\t2\n".as_bytes()).unwrap();
        FeaturePipeline::new(emb, vec![lex])
    }

    #[test]
    fn configure_takes_resource_dims() {
        let cfg = pipeline().configure(&ModelConfig::default());
        assert_eq!((cfg.embed_dim, cfg.lex_dim), (2, 4));
    }

    #[test]
    fn encodes_windows_and_lex() {
        let p = pipeline();
        let cfg = ModelConfig {
            maxlen: 3,
            ..p.configure(&ModelConfig::default())
        };
        let input = p.encode_text("Good idea", "meh", 1, &cfg);
        let q = input.quote.unwrap();
        assert_eq!(q.data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(input.response.unwrap().data(), &[0.0; 6]);
        assert_eq!(input.quote_lex, vec![1.0, 2.0, 2.0, 2.0]);
        assert_eq!(input.response_lex, vec![0.0; 4]);
        assert_eq!(input.label, 1);
    }

    #[test]
    fn inactive_parts_are_omitted() {
        let p = pipeline();
        let base = p.configure(&ModelConfig::default());
        let lex_only = ModelConfig {
            feature_mode: FeatureMode::LexOnly,
            ..base.clone()
        };
        let i = p.encode_text("good", "good", 0, &lex_only);
        assert!(i.quote.is_none() && i.response.is_none());
        let gru_only = ModelConfig {
            feature_mode: FeatureMode::GruOnly,
            ..base
        };
        let i = p.encode_text("good", "good", 0, &gru_only);
        assert!(i.quote_lex.is_empty());
    }

    #[test]
    fn compatibility() {
        let p = pipeline();
        let cfg = p.configure(&ModelConfig::default());
        assert!(p.check_compatible(&cfg, &p.lex_layout()).is_ok());
        assert!(p.check_compatible(&cfg, &[]).is_err());
        let wrong = ModelConfig { embed_dim: 3, ..cfg };
        assert!(p.check_compatible(&wrong, &p.lex_layout()).is_err());
    }
}
