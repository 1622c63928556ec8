//! Per-character prediction layers for polyphones and prosodic breaks, and their losses.

pub mod blstm;
pub mod crf;
pub mod mlp;

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::prosody::NUM_PROSODY_LABELS;
use crate::tape::{Bound, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::TokenBatch;

use self::blstm::Blstm;
use self::mlp::Mlp;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Mlp,
    Blstm,
}

/// Structure of one prediction layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadConfig {
    pub kind: HeadKind,
    /// Width of the MLP hidden layers.
    pub mlp_hidden: usize,
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            kind: HeadKind::Mlp,
            mlp_hidden: 64,
            lstm_hidden: 32,
        }
    }
}

#[derive(Clone, Debug)]
enum Layer {
    Mlp(Mlp),
    Blstm(Blstm),
}

/// A position-wise classifier over encoder features: `[batch·seq × in] → [batch·seq × out]`.
#[derive(Clone, Debug)]
pub struct TokenHead {
    layer: Layer,
    out_dim: usize,
}

impl TokenHead {
    pub fn init(cfg: HeadConfig, store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = match cfg.kind {
            HeadKind::Mlp => Layer::Mlp(Mlp::init(store, prefix, in_dim, cfg.mlp_hidden, out_dim, &mut rng)?),
            HeadKind::Blstm => Layer::Blstm(Blstm::init(store, prefix, in_dim, cfg.lstm_hidden, out_dim, &mut rng)?),
        };
        Ok(Self { layer, out_dim })
    }

    pub fn attach(cfg: HeadConfig, store: &ParamStore, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let layer = match cfg.kind {
            HeadKind::Mlp => Layer::Mlp(Mlp::attach(store, prefix, in_dim, cfg.mlp_hidden, out_dim)?),
            HeadKind::Blstm => Layer::Blstm(Blstm::attach(store, prefix, in_dim, cfg.lstm_hidden, out_dim)?),
        };
        Ok(Self { layer, out_dim })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, features: Var, batch: &TokenBatch) -> Result<Var> {
        match &self.layer {
            Layer::Mlp(m) => m.forward(tape, p, features),
            Layer::Blstm(b) => b.forward(tape, p, features, batch),
        }
    }
}

/// Linear-chain CRF parameters over the prosody labels.
#[derive(Clone, Copy, Debug)]
pub struct CrfLayer {
    pub transitions: ParamId,
    pub start: ParamId,
    pub end: ParamId,
}

impl CrfLayer {
    pub fn init(store: &mut ParamStore, prefix: &str) -> Result<Self> {
        let k = NUM_PROSODY_LABELS;
        store.add(format!("{prefix}crf.transitions"), Tensor::zeros(&[k, k]))?;
        store.add(format!("{prefix}crf.start"), Tensor::zeros(&[k]))?;
        store.add(format!("{prefix}crf.end"), Tensor::zeros(&[k]))?;
        Self::attach(store, prefix)
    }

    pub fn attach(store: &ParamStore, prefix: &str) -> Result<Self> {
        let k = NUM_PROSODY_LABELS;
        Ok(Self {
            transitions: store.expect(&format!("{prefix}crf.transitions"), &[k, k])?,
            start: store.expect(&format!("{prefix}crf.start"), &[k])?,
            end: store.expect(&format!("{prefix}crf.end"), &[k])?,
        })
    }

    /// Most likely label path for one sequence's `[len × 4]` emission rows.
    pub fn decode(&self, store: &ParamStore, emissions: &[f64]) -> Vec<usize> {
        crf::viterbi(
            emissions,
            store.get(self.transitions).data(),
            store.get(self.start).data(),
            store.get(self.end).data(),
            NUM_PROSODY_LABELS,
        )
    }
}

/// `−(1/|mask|) Σ_{t ∈ mask} log_probs[t, targets[t]]`; exactly zero with zero gradient when the mask is empty.
pub fn masked_cross_entropy(tape: &mut Tape, log_probs: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    let n = mask.iter().filter(|&&m| m).count();
    let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let weights: Vec<f64> = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
    tape.weighted_nll(log_probs, targets, &weights)
}

/// Cross-entropy averaged over the polyphonic positions of one sentence.
pub fn polyphone_loss(tape: &mut Tape, logits: Var, targets: &[usize], poly_mask: &[bool]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    masked_cross_entropy(tape, lp, targets, poly_mask)
}

/// Cross-entropy averaged over every valid character of one sentence.
pub fn prosody_loss(tape: &mut Tape, logits: Var, labels: &[usize], valid_mask: &[bool]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    masked_cross_entropy(tape, lp, labels, valid_mask)
}

/// Path score minus log-partition of one labelled sequence.
pub fn crf_log_likelihood(
    tape: &mut Tape,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
    labels: &[usize],
) -> Result<Var> {
    let nll = tape.crf_nll(emissions, transitions, start, end, &[(0, labels.len())], labels, &[1.0])?;
    tape.scale(nll, -1.0)
}

/// `α₁·L_poly + α₂·L_prosody`.
pub fn global_loss(tape: &mut Tape, l_poly: Var, l_prosody: Var, alpha1: f64, alpha2: f64) -> Result<Var> {
    let a = tape.scale(l_poly, alpha1)?;
    let b = tape.scale(l_prosody, alpha2)?;
    tape.add(a, b)
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Highest-scoring class among `admissible` (all classes when `None`); ties go to the lowest index.
pub fn predict_polyphone(scores: &[f64], admissible: Option<&[usize]>) -> Result<usize> {
    let Some(allowed) = admissible else {
        return Ok(argmax(scores));
    };
    let mut best: Option<usize> = None;
    for &c in allowed {
        if c >= scores.len() {
            return Err(Error::Lexicon(format!("admissible class {c} outside {} classes", scores.len())));
        }
        best = match best {
            Some(b) if scores[c] < scores[b] || (scores[c] == scores[b] && c > b) => Some(b),
            _ => Some(c),
        };
    }
    best.ok_or_else(|| Error::Lexicon("empty admissible pronunciation set".into()))
}
