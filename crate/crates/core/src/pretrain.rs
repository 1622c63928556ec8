//! Masked-character pretraining of an encoder on unlabelled text.
//!
//! A share of the characters in each sentence is replaced by the unknown-id
//! token and a throwaway linear layer predicts the originals.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{mix_seed, Encoder, Mode};
use crate::error::{Error, Result};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::params::{truncated_normal, ParamStore};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::vocab::{TokenBatch, UNK_ID};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub mask_prob: f64,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            mask_prob: 0.15,
            adam: AdamConfig::default(),
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

/// Masked positions of one sentence; at least one is always chosen.
pub fn choose_masked<R: Rng>(len: usize, prob: f64, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..len).filter(|_| rng.random_bool(prob)).collect();
    if picked.is_empty() {
        picked.push(rng.random_range(0..len));
    }
    picked
}

/// Per-step losses of a pretraining run.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub losses: Vec<f64>,
}

/// Trains the encoder parameters in `store` to recover masked characters.
pub fn pretrain_encoder(encoder: &Encoder, store: &mut ParamStore, corpus: &[Vec<usize>], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if corpus.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("pretraining needs a non-empty corpus and batch".into()));
    }
    if !(cfg.mask_prob > 0.0 && cfg.mask_prob < 1.0) {
        return Err(Error::Config("mask probability must lie strictly between 0 and 1".into()));
    }
    let ec = encoder.config();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 31]));
    let mut head = ParamStore::new();
    let w = head.add("mlm.w", truncated_normal(&[ec.hidden_size, ec.vocab_size], 0.02, &mut rng))?;
    let b = head.add("mlm.b", Tensor::zeros(&[ec.vocab_size]))?;
    let mut enc_adam = AdamState::new(store);
    let mut head_adam = AdamState::new(&head);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut inputs: Vec<Vec<usize>> = Vec::with_capacity(cfg.batch_size);
        let mut picks: Vec<(usize, Vec<usize>)> = Vec::with_capacity(cfg.batch_size);
        while inputs.len() < cfg.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let m = choose_masked(corpus[idx].len(), cfg.mask_prob, &mut rng);
            let mut x = corpus[idx].clone();
            m.iter().for_each(|&t| x[t] = UNK_ID);
            inputs.push(x);
            picks.push((idx, m));
        }
        let refs: Vec<&[usize]> = inputs.iter().map(|x| x.as_slice()).collect();
        let batch = TokenBatch::new(&refs)?;
        let mut targets = alloc::vec![0; batch.ids.len()];
        let mut weights = alloc::vec![0.0; batch.ids.len()];
        for (bi, (idx, m)) in picks.iter().enumerate() {
            for &t in m {
                let row = bi * batch.seq + t;
                targets[row] = corpus[*idx][t];
                weights[row] = 1.0 / (picks.len() * m.len()) as f64;
            }
        }
        let mut tape = Tape::new();
        let ep = tape.bind(store, true);
        let hp = tape.bind(&head, true);
        let trace = encoder.forward(&mut tape, &ep, &batch, Mode::Train { seed: cfg.seed, step: step as u64 })?;
        let logits = tape.linear(trace.output(), hp.var(w), hp.var(b))?;
        let lp = tape.log_softmax(logits)?;
        let loss = tape.weighted_nll(lp, &targets, &weights)?;
        let grads = tape.backward(loss)?;
        let mut g = grads.for_bound(&ep);
        let n_enc = g.len();
        g.extend(grads.for_bound(&hp));
        clip_global_norm(&mut g, cfg.clip_norm);
        let g_head = g.split_off(n_enc);
        adam_step(store, &g, &mut enc_adam, &cfg.adam);
        adam_step(&mut head, &g_head, &mut head_adam, &cfg.adam);
        losses.push(tape.value(loss).item());
    }
    Ok(PretrainOutcome { losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn masking_picks_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for len in 1..10 {
            let m = choose_masked(len, 0.01, &mut rng);
            assert!(!m.is_empty() && m.iter().all(|&t| t < len));
        }
    }

    #[test]
    fn pretraining_learns_a_copy_pattern() {
        // every sentence repeats one id, so masked ids are recoverable from context
        let cfg = EncoderConfig {
            num_layers: 1,
            hidden_size: 16,
            num_heads: 2,
            ffn_size: 32,
            vocab_size: 10,
            max_seq_len: 8,
            dropout_rate: 0.0,
        };
        let mut store = ParamStore::new();
        let enc = Encoder::init(cfg, &mut store, "encoder.", 1).unwrap();
        let corpus: Vec<Vec<usize>> = (2..10).map(|v| alloc::vec![v; 6]).collect();
        let pc = PretrainConfig { steps: 300, batch_size: 8, adam: AdamConfig { lr: 1e-2, ..Default::default() }, ..Default::default() };
        let out = pretrain_encoder(&enc, &mut store, &corpus, &pc).unwrap();
        let tail: f64 = out.losses[280..].iter().sum::<f64>() / 20.0;
        assert!(tail < 0.25 * out.losses[0], "{tail} vs {}", out.losses[0]);
    }
}
