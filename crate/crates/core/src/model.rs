//! The complete front-end: a shared encoder with polyphone and prosody heads.

use alloc::vec::Vec;

use crate::encoder::{mix_seed, Encoder, EncoderConfig, EncoderTrace, Mode};
use crate::error::{Error, Result};
use crate::heads::{argmax, CrfLayer, HeadConfig, TokenHead};
use crate::lexicon::PronClassMap;
use crate::params::ParamStore;
use crate::prosody::{ProsodyLabel, NUM_PROSODY_LABELS};
use crate::tape::{Bound, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{TokenBatch, Vocab};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const POLY_PREFIX: &str = "poly.";
pub const PROSODY_PREFIX: &str = "prosody.";

/// Sentences per inference batch.
pub const INFER_BATCH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub poly_head: HeadConfig,
    pub prosody_head: HeadConfig,
    /// Decode prosody with a linear-chain CRF instead of per-position argmax.
    pub prosody_crf: bool,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self {
            encoder,
            poly_head: HeadConfig::default(),
            prosody_head: HeadConfig::default(),
            prosody_crf: false,
        }
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    pub trace: EncoderTrace,
    /// `[batch·seq × classes]`
    pub poly_logits: Var,
    /// `[batch·seq × 4]`
    pub prosody_logits: Var,
}

/// Scores and decoded prosody for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePrediction {
    /// `[len × classes]` polyphone logits.
    pub poly_scores: Tensor,
    pub prosody: Vec<ProsodyLabel>,
}

#[derive(Clone, Debug)]
pub struct FrontendModel {
    config: ModelConfig,
    vocab: Vocab,
    classes: PronClassMap,
    store: ParamStore,
    encoder: Encoder,
    poly: TokenHead,
    prosody: TokenHead,
    crf: Option<CrfLayer>,
}

impl FrontendModel {
    fn check(config: &ModelConfig, vocab: &Vocab, classes: &PronClassMap) -> Result<()> {
        if config.encoder.vocab_size != vocab.size() {
            return Err(Error::Config(alloc::format!(
                "encoder vocabulary size {} differs from the {} token ids of the vocabulary",
                config.encoder.vocab_size,
                vocab.size()
            )));
        }
        if classes.num_classes() == 0 {
            return Err(Error::Config("the pronunciation inventory has no polyphone classes".into()));
        }
        Ok(())
    }

    /// Fresh parameters for every component.
    pub fn init(config: ModelConfig, vocab: Vocab, classes: PronClassMap, seed: u64) -> Result<Self> {
        Self::check(&config, &vocab, &classes)?;
        let mut store = ParamStore::new();
        let d = config.encoder.hidden_size;
        Encoder::init(config.encoder, &mut store, ENCODER_PREFIX, mix_seed(&[seed, 0]))?;
        TokenHead::init(config.poly_head, &mut store, POLY_PREFIX, d, classes.num_classes(), mix_seed(&[seed, 1]))?;
        TokenHead::init(config.prosody_head, &mut store, PROSODY_PREFIX, d, NUM_PROSODY_LABELS, mix_seed(&[seed, 2]))?;
        if config.prosody_crf {
            CrfLayer::init(&mut store, PROSODY_PREFIX)?;
        }
        Self::from_store(config, vocab, classes, store)
    }

    /// Fresh heads on top of an existing encoder's parameters.
    pub fn with_encoder(config: ModelConfig, vocab: Vocab, classes: PronClassMap, encoder: &ParamStore, seed: u64) -> Result<Self> {
        let mut m = Self::init(config, vocab, classes, seed)?;
        Encoder::attach(config.encoder, encoder, ENCODER_PREFIX)?;
        m.store.copy_from(encoder, ENCODER_PREFIX)?;
        Ok(m)
    }

    /// Binds to loaded parameters; the store must hold exactly the tensors this configuration needs.
    pub fn from_store(config: ModelConfig, vocab: Vocab, classes: PronClassMap, store: ParamStore) -> Result<Self> {
        Self::check(&config, &vocab, &classes)?;
        let d = config.encoder.hidden_size;
        let encoder = Encoder::attach(config.encoder, &store, ENCODER_PREFIX)?;
        let poly = TokenHead::attach(config.poly_head, &store, POLY_PREFIX, d, classes.num_classes())?;
        let prosody = TokenHead::attach(config.prosody_head, &store, PROSODY_PREFIX, d, NUM_PROSODY_LABELS)?;
        let crf = if config.prosody_crf {
            Some(CrfLayer::attach(&store, PROSODY_PREFIX)?)
        } else {
            None
        };
        let mut expected = config.encoder.param_shapes(ENCODER_PREFIX).len();
        expected += store.iter().filter(|(n, _)| n.starts_with(POLY_PREFIX) || n.starts_with(PROSODY_PREFIX)).count();
        if expected != store.len() {
            return Err(Error::Checkpoint(alloc::format!(
                "store holds {} tensors, the configuration uses {expected}",
                store.len()
            )));
        }
        if store.iter().any(|(n, _)| n.contains("crf.")) != config.prosody_crf {
            return Err(Error::Checkpoint("CRF parameters do not match the configuration".into()));
        }
        Ok(Self { config, vocab, classes, store, encoder, poly, prosody, crf })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn classes(&self) -> &PronClassMap {
        &self.classes
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces all parameters with same-shaped ones, e.g. a saved snapshot.
    pub fn load_store(&mut self, store: ParamStore) -> Result<()> {
        let fresh = Self::from_store(self.config, self.vocab.clone(), self.classes.clone(), store)?;
        *self = fresh;
        Ok(())
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    /// Copy of the encoder's parameters alone.
    pub fn encoder_store(&self) -> ParamStore {
        self.store.subset(ENCODER_PREFIX)
    }

    pub fn crf(&self) -> Option<&CrfLayer> {
        self.crf.as_ref()
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &TokenBatch, mode: Mode) -> Result<ModelOutputs> {
        let trace = self.encoder.forward(tape, p, batch, mode)?;
        let h = trace.output();
        let poly_logits = self.poly.forward(tape, p, h, batch)?;
        let prosody_logits = self.prosody.forward(tape, p, h, batch)?;
        Ok(ModelOutputs { trace, poly_logits, prosody_logits })
    }

    /// Prosody labels for the valid rows of one sentence's logits.
    pub fn decode_prosody_rows(&self, rows: &[f64]) -> Vec<ProsodyLabel> {
        let k = NUM_PROSODY_LABELS;
        let idx = match &self.crf {
            Some(crf) => crf.decode(&self.store, rows),
            None => rows.chunks(k).map(argmax).collect(),
        };
        idx.into_iter().map(|i| ProsodyLabel::from_index(i).expect("label index")).collect()
    }

    /// Runs inference over token sequences in batches.
    pub fn predict(&self, seqs: &[&[usize]]) -> Result<Vec<SentencePrediction>> {
        let mut out = Vec::with_capacity(seqs.len());
        let c = self.classes.num_classes();
        for chunk in seqs.chunks(INFER_BATCH) {
            let batch = TokenBatch::new(chunk)?;
            let mut tape = Tape::new();
            let p = tape.bind(&self.store, false);
            let o = self.forward(&mut tape, &p, &batch, Mode::Eval)?;
            let poly = tape.value(o.poly_logits).data();
            let pros = tape.value(o.prosody_logits).data();
            for (b, &len) in batch.lengths.iter().enumerate() {
                let r0 = b * batch.seq;
                let scores = poly[r0 * c..(r0 + len) * c].to_vec();
                let k = NUM_PROSODY_LABELS;
                let prosody = self.decode_prosody_rows(&pros[r0 * k..(r0 + len) * k]);
                out.push(SentencePrediction {
                    poly_scores: Tensor::new(alloc::vec![len, c], scores)?,
                    prosody,
                });
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadKind;
    use crate::synth::{SyntheticLangSpec, SyntheticLanguage};

    fn tiny(vocab: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            hidden_size: 8,
            num_heads: 2,
            ffn_size: 16,
            vocab_size: vocab,
            max_seq_len: 40,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn predictions_cover_each_sentence() {
        let lang = SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap();
        let vocab = lang.vocab();
        let mut cfg = ModelConfig::new(tiny(vocab.size()));
        cfg.prosody_head.kind = HeadKind::Blstm;
        cfg.prosody_crf = true;
        let m = FrontendModel::init(cfg, vocab, lang.class_map(), 3).unwrap();
        let a = [2usize, 3, 4];
        let b = [5usize];
        let p = m.predict(&[&a, &b]).unwrap();
        assert_eq!(p[0].poly_scores.shape(), &[3, m.classes().num_classes()]);
        assert_eq!(p[1].prosody.len(), 1);
        // padding does not leak into shorter sentences
        let alone = m.predict(&[&b]).unwrap();
        assert!(alone[0].poly_scores.max_abs_diff(&p[1].poly_scores) < 1e-9);
    }

    #[test]
    fn store_round_trip_and_mismatch() {
        let lang = SyntheticLanguage::new(SyntheticLangSpec::default()).unwrap();
        let vocab = lang.vocab();
        let cfg = ModelConfig::new(tiny(vocab.size()));
        let m = FrontendModel::init(cfg, vocab.clone(), lang.class_map(), 3).unwrap();
        let again = FrontendModel::from_store(cfg, vocab.clone(), lang.class_map(), m.store().clone()).unwrap();
        assert_eq!(again.store(), m.store());
        let crf_cfg = ModelConfig { prosody_crf: true, ..cfg };
        assert!(FrontendModel::from_store(crf_cfg, vocab.clone(), lang.class_map(), m.store().clone()).is_err());
        let bad = ModelConfig::new(tiny(vocab.size() + 1));
        assert!(matches!(FrontendModel::init(bad, vocab, lang.class_map(), 0), Err(Error::Config(_))));
    }
}
