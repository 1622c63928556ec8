//! Character-level pre-LN transformer encoder.
//!
//! Each forward pass records a trace of per-layer hidden states and attention
//! distributions; distillation matches student traces against teacher traces.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{truncated_normal, ParamId, ParamStore};
use crate::tape::{AttnLayout, Bound, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::TokenBatch;

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    /// Desk-scale teacher: 6 layers, 96 hidden, 4 heads, 192 FFN.
    pub fn desk_teacher(vocab_size: usize) -> Self {
        Self {
            num_layers: 6,
            hidden_size: 96,
            num_heads: 4,
            ffn_size: 192,
            vocab_size,
            max_seq_len: 64,
            dropout_rate: 0.1,
        }
    }

    /// Desk-scale student: 2 layers, 48 hidden, 4 heads, 96 FFN.
    pub fn desk_student(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            hidden_size: 48,
            num_heads: 4,
            ffn_size: 96,
            vocab_size,
            max_seq_len: 64,
            dropout_rate: 0.1,
        }
    }

    /// BERT-base shape: 12 layers, 768 hidden, 12 heads, 3072 FFN, 512 positions.
    pub fn bert_base(vocab_size: usize) -> Self {
        Self {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            ffn_size: 3072,
            vocab_size,
            max_seq_len: 512,
            dropout_rate: 0.1,
        }
    }

    /// Four-layer TinyBERT shape: 312 hidden, 12 heads, 1200 FFN, 512 positions.
    pub fn tinybert_4l(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            hidden_size: 312,
            num_heads: 12,
            ffn_size: 1200,
            vocab_size,
            max_seq_len: 512,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.hidden_size == 0 || self.num_heads == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("hidden_size, num_heads, vocab_size and max_seq_len must be positive");
        }
        if self.num_layers > 0 && self.ffn_size == 0 {
            return bad("ffn_size must be positive");
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad("hidden_size must be divisible by num_heads");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }

    /// Name and shape of every tensor the encoder allocates, in allocation order.
    pub fn param_shapes(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.hidden_size, self.ffn_size);
        let mut out = alloc::vec![
            (format!("{prefix}tok_emb"), alloc::vec![self.vocab_size, d]),
            (format!("{prefix}pos_emb"), alloc::vec![self.max_seq_len, d]),
        ];
        for l in 0..self.num_layers {
            let p = format!("{prefix}layer{l}.");
            for (name, shape) in [
                ("ln1.gain", alloc::vec![d]),
                ("ln1.bias", alloc::vec![d]),
                ("attn.wq", alloc::vec![d, d]),
                ("attn.bq", alloc::vec![d]),
                ("attn.wk", alloc::vec![d, d]),
                ("attn.bk", alloc::vec![d]),
                ("attn.wv", alloc::vec![d, d]),
                ("attn.bv", alloc::vec![d]),
                ("attn.wo", alloc::vec![d, d]),
                ("attn.bo", alloc::vec![d]),
                ("ln2.gain", alloc::vec![d]),
                ("ln2.bias", alloc::vec![d]),
                ("ffn.w1", alloc::vec![d, f]),
                ("ffn.b1", alloc::vec![f]),
                ("ffn.w2", alloc::vec![f, d]),
                ("ffn.b2", alloc::vec![d]),
            ] {
                out.push((format!("{p}{name}"), shape));
            }
        }
        out.push((format!("{prefix}final_ln.gain"), alloc::vec![d]));
        out.push((format!("{prefix}final_ln.bias"), alloc::vec![d]));
        out
    }
}

/// Closed-form parameter count of an encoder.
pub fn count_params(cfg: &EncoderConfig) -> usize {
    let (v, p, l, d, f) = (
        cfg.vocab_size,
        cfg.max_seq_len,
        cfg.num_layers,
        cfg.hidden_size,
        cfg.ffn_size,
    );
    let attention = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let norms = 2 * 2 * d;
    v * d + p * d + l * (attention + ffn + norms) + 2 * d
}

#[derive(Clone, Copy, Debug)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Encoder architecture bound to parameter slots of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<LayerIds>,
    final_ln: (ParamId, ParamId),
}

/// How a forward pass treats dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are derived from `(seed, step, layer, site)`.
    Train { seed: u64, step: u64 },
}

/// Per-layer activations of one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// `num_layers + 1` tensors of `[batch·seq × hidden]`: embeddings, then each layer's output.
    /// The last entry includes the final layer norm.
    pub hidden_states: Vec<Var>,
    /// `num_layers` tensors of `[batch·heads × seq × seq]`, post-softmax.
    pub attentions: Vec<Var>,
    /// Pre-softmax attention logits, same shapes as `attentions`.
    pub attention_logits: Vec<Var>,
    pub layout: AttnLayout,
    pub valid: Vec<bool>,
}

impl EncoderTrace {
    pub fn output(&self) -> Var {
        *self.hidden_states.last().expect("trace has at least the embedding output")
    }
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the running state
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, layer: u64, site: u64) -> Result<Var> {
    let Mode::Train { seed, step } = mode else {
        return Ok(x);
    };
    if rate == 0.0 {
        return Ok(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, step, layer, site]));
    let keep = 1.0 / (1.0 - rate);
    let factors = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, factors)
}

impl Encoder {
    /// Allocates freshly initialized encoder parameters under `prefix`.
    pub fn init(config: EncoderConfig, store: &mut ParamStore, prefix: &str, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, shape) in config.param_shapes(prefix) {
            let t = if name.ends_with(".gain") {
                Tensor::full(&shape, 1.0)
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                truncated_normal(&shape, INIT_STD, &mut rng)
            };
            store.add(name, t)?;
        }
        Self::attach(config, store, prefix)
    }

    /// Binds to existing parameters, checking names, shapes and the total count.
    pub fn attach(config: EncoderConfig, store: &ParamStore, prefix: &str) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes(prefix);
        let mut ids = Vec::with_capacity(shapes.len());
        for (name, shape) in &shapes {
            ids.push(store.expect(name, shape)?);
        }
        let total: usize = ids.iter().map(|&id| store.get(id).len()).sum();
        if total != count_params(&config) {
            return Err(Error::Checkpoint(format!(
                "encoder holds {total} parameters, config implies {}",
                count_params(&config)
            )));
        }
        let mut it = ids.into_iter();
        let mut next = || it.next().expect("one id per shape");
        let tok_emb = next();
        let pos_emb = next();
        let layers = (0..config.num_layers)
            .map(|_| LayerIds {
                ln1: (next(), next()),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln2: (next(), next()),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        let final_ln = (next(), next());
        Ok(Self {
            config,
            tok_emb,
            pos_emb,
            layers,
            final_ln,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Runs the encoder over a padded batch, recording every intermediate on `tape`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &TokenBatch, mode: Mode) -> Result<EncoderTrace> {
        let cfg = &self.config;
        if batch.seq > cfg.max_seq_len {
            return Err(Error::Length {
                len: batch.seq,
                max: cfg.max_seq_len,
            });
        }
        if let Some(pos) = batch.ids.iter().position(|&id| id >= cfg.vocab_size) {
            return Err(Error::Label {
                position: pos,
                label: batch.ids[pos],
                classes: cfg.vocab_size,
            });
        }
        let layout = AttnLayout {
            batch: batch.batch(),
            heads: cfg.num_heads,
            seq: batch.seq,
            dim: cfg.hidden_size,
        };
        let valid = batch.valid();
        let positions: Vec<usize> = (0..batch.ids.len()).map(|i| i % batch.seq).collect();
        let tok = tape.gather_rows(p.var(self.tok_emb), &batch.ids)?;
        let pos = tape.gather_rows(p.var(self.pos_emb), &positions)?;
        let emb = tape.add(tok, pos)?;
        let mut x = dropout(tape, emb, cfg.dropout_rate, mode, 0, 0)?;

        let mut hidden_states = Vec::with_capacity(cfg.num_layers + 1);
        let mut attentions = Vec::with_capacity(cfg.num_layers);
        let mut attention_logits = Vec::with_capacity(cfg.num_layers);
        if cfg.num_layers == 0 {
            x = tape.layer_norm(x, p.var(self.final_ln.0), p.var(self.final_ln.1), LAYER_NORM_EPS)?;
        }
        hidden_states.push(x);

        for (l, ids) in self.layers.iter().enumerate() {
            let li = l as u64 + 1;
            let h = tape.layer_norm(x, p.var(ids.ln1.0), p.var(ids.ln1.1), LAYER_NORM_EPS)?;
            let q = tape.linear(h, p.var(ids.wq), p.var(ids.bq))?;
            let k = tape.linear(h, p.var(ids.wk), p.var(ids.bk))?;
            let v = tape.linear(h, p.var(ids.wv), p.var(ids.bv))?;
            let logits = tape.attention_scores(q, k, layout, &valid)?;
            let probs = tape.softmax(logits)?;
            let ctx = tape.attention_context(probs, v, layout)?;
            let a = tape.linear(ctx, p.var(ids.wo), p.var(ids.bo))?;
            let a = dropout(tape, a, cfg.dropout_rate, mode, li, 1)?;
            x = tape.add(x, a)?;

            let h = tape.layer_norm(x, p.var(ids.ln2.0), p.var(ids.ln2.1), LAYER_NORM_EPS)?;
            let f = tape.linear(h, p.var(ids.w1), p.var(ids.b1))?;
            let f = tape.gelu(f)?;
            let f = tape.linear(f, p.var(ids.w2), p.var(ids.b2))?;
            let f = dropout(tape, f, cfg.dropout_rate, mode, li, 2)?;
            x = tape.add(x, f)?;
            if l + 1 == cfg.num_layers {
                x = tape.layer_norm(x, p.var(self.final_ln.0), p.var(self.final_ln.1), LAYER_NORM_EPS)?;
            }
            hidden_states.push(x);
            attentions.push(probs);
            attention_logits.push(logits);
        }
        Ok(EncoderTrace {
            hidden_states,
            attentions,
            attention_logits,
            layout,
            valid,
        })
    }
}

/// Plain-tensor view of a trace for a single sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceValues {
    pub hidden_states: Vec<Tensor>,
    pub attentions: Vec<Tensor>,
}

/// Encodes one token sequence with frozen parameters.
pub fn encode(encoder: &Encoder, store: &ParamStore, ids: &[usize], mode: Mode) -> Result<TraceValues> {
    let batch = TokenBatch::new(&[ids])?;
    let mut tape = Tape::new();
    let bound = tape.bind(store, false);
    let trace = encoder.forward(&mut tape, &bound, &batch, mode)?;
    Ok(TraceValues {
        hidden_states: trace.hidden_states.iter().map(|&v| tape.value(v).clone()).collect(),
        attentions: trace.attentions.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden_size: 16,
            num_heads: 4,
            ffn_size: 32,
            vocab_size: 64,
            max_seq_len: 32,
            dropout_rate: 0.1,
        }
    }

    fn build(cfg: EncoderConfig) -> (Encoder, ParamStore) {
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg, &mut store, "encoder.", 7).unwrap();
        (enc, store)
    }

    #[test]
    fn trace_shapes() {
        let (enc, store) = build(toy());
        let tr = encode(&enc, &store, &[2, 3, 4, 5, 6, 7, 8], Mode::Eval).unwrap();
        assert_eq!(tr.hidden_states.len(), 3);
        assert_eq!(tr.attentions.len(), 2);
        for h in &tr.hidden_states {
            assert_eq!(h.shape(), &[7, 16]);
        }
        for a in &tr.attentions {
            assert_eq!(a.shape(), &[4, 7, 7]);
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let (enc, store) = build(toy());
        let tr = encode(&enc, &store, &[9], Mode::Eval).unwrap();
        for a in &tr.attentions {
            assert_eq!(a.shape(), &[4, 1, 1]);
            assert!(a.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn too_long_is_rejected() {
        let (enc, store) = build(toy());
        let ids = alloc::vec![3; 33];
        assert_eq!(encode(&enc, &store, &ids, Mode::Eval), Err(Error::Length { len: 33, max: 32 }));
    }

    #[test]
    fn param_count_matches_allocation() {
        let (_, store) = build(toy());
        assert_eq!(store.numel(), count_params(&toy()));
        let zero = EncoderConfig { num_layers: 0, ..toy() };
        assert_eq!(count_params(&zero), 64 * 16 + 32 * 16 + 2 * 16);
        let (_, store) = build(zero);
        assert_eq!(store.numel(), count_params(&zero));
    }

    #[test]
    fn attach_rejects_wrong_config() {
        let (_, store) = build(toy());
        let other = EncoderConfig { ffn_size: 16, ..toy() };
        assert!(Encoder::attach(other, &store, "encoder.").is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig { num_heads: 5, ..toy() }.validate().is_err());
        assert!(EncoderConfig { dropout_rate: 1.0, ..toy() }.validate().is_err());
    }
}
