//! Joint training of both heads on batches that mix the two corpora.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ExampleLabels, Task, TrainingExample};
use crate::encoder::{mix_seed, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::heads::global_loss;
use crate::model::FrontendModel;
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::prosody::NUM_PROSODY_LABELS;
use crate::tape::{Bound, Tape, Var};
use crate::vocab::TokenBatch;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub alpha_poly: f64,
    pub alpha_prosody: f64,
    pub adam: AdamConfig,
    /// Linear learning-rate ramp over the first steps.
    pub warmup_steps: usize,
    pub clip_norm: f64,
    /// Share of each batch drawn from the polyphone corpus; `None` follows corpus sizes.
    pub mixing_ratio: Option<f64>,
    pub eval_every: usize,
    /// Restrict polyphone predictions to the character's own pronunciations when validating.
    pub restrict_argmax: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            alpha_poly: 1.0,
            alpha_prosody: 1.0,
            adam: AdamConfig::default(),
            warmup_steps: 100,
            clip_norm: 1.0,
            mixing_ratio: None,
            eval_every: 250,
            restrict_argmax: true,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 to hold both tasks");
        }
        if let Some(r) = self.mixing_ratio {
            if !(r > 0.0 && r < 1.0) {
                return bad("mixing ratio must lie strictly between 0 and 1");
            }
        }
        if !(self.alpha_poly >= 0.0 && self.alpha_prosody >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.adam.lr > 0.0) || !(self.clip_norm > 0.0) {
            return bad("learning rate and clip norm must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        Ok(())
    }

    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.adam.lr
        } else {
            self.adam.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

/// Default polyphone share: the corpus-size ratio, kept within `[0.25, 0.75]`.
pub fn default_mixing_ratio(n_poly: usize, n_prosody: usize) -> f64 {
    let r = n_poly as f64 / (n_poly + n_prosody).max(1) as f64;
    r.clamp(0.25, 0.75)
}

/// Number of polyphone examples per batch for a ratio.
pub fn poly_share(batch_size: usize, ratio: f64) -> usize {
    let n = libm::round(batch_size as f64 * ratio) as usize;
    n.clamp(1, batch_size - 1)
}

#[derive(Clone, Debug)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
    wraps: usize,
}

impl Cursor {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0, wraps: 0 }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
            self.wraps += 1;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Endless stream of batches holding examples of both tasks.
///
/// Each corpus is reshuffled whenever it runs out; an epoch ends when the
/// larger corpus has been seen once, the smaller one being recycled meanwhile.
#[derive(Clone, Debug)]
pub struct MixedBatches<'a> {
    poly: &'a [TrainingExample],
    prosody: &'a [TrainingExample],
    n_poly: usize,
    n_prosody: usize,
    poly_cursor: Cursor,
    prosody_cursor: Cursor,
    poly_rng: ChaCha8Rng,
    prosody_rng: ChaCha8Rng,
}

impl<'a> MixedBatches<'a> {
    pub fn new(poly: &'a [TrainingExample], prosody: &'a [TrainingExample], batch_size: usize, ratio: Option<f64>, seed: u64) -> Result<Self> {
        if poly.is_empty() || prosody.is_empty() {
            return Err(Error::Config("mixed batches need both corpora to be non-empty".into()));
        }
        if poly.iter().any(|e| e.task() != Task::Poly) || prosody.iter().any(|e| e.task() != Task::Prosody) {
            return Err(Error::Usage("corpus holds examples of the other task".into()));
        }
        if batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        let ratio = ratio.unwrap_or_else(|| default_mixing_ratio(poly.len(), prosody.len()));
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Config("mixing ratio must lie strictly between 0 and 1".into()));
        }
        let n_poly = poly_share(batch_size, ratio);
        let mut poly_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 11]));
        let mut prosody_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 12]));
        Ok(Self {
            poly,
            prosody,
            n_poly,
            n_prosody: batch_size - n_poly,
            poly_cursor: Cursor::new(poly.len(), &mut poly_rng),
            prosody_cursor: Cursor::new(prosody.len(), &mut prosody_rng),
            poly_rng,
            prosody_rng,
        })
    }

    pub fn per_batch(&self) -> (usize, usize) {
        (self.n_poly, self.n_prosody)
    }

    /// Completed passes over the larger corpus.
    pub fn epoch(&self) -> usize {
        if self.poly.len() >= self.prosody.len() {
            self.poly_cursor.wraps
        } else {
            self.prosody_cursor.wraps
        }
    }
}

impl<'a> Iterator for MixedBatches<'a> {
    type Item = Vec<&'a TrainingExample>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut out = Vec::with_capacity(self.n_poly + self.n_prosody);
        for _ in 0..self.n_poly {
            out.push(&self.poly[self.poly_cursor.next(&mut self.poly_rng)]);
        }
        for _ in 0..self.n_prosody {
            out.push(&self.prosody[self.prosody_cursor.next(&mut self.prosody_rng)]);
        }
        Some(out)
    }
}

/// Losses of one batch as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub params: Bound,
    pub poly: Var,
    pub prosody: Var,
    pub total: Var,
}

/// Builds the joint loss of a mixed batch.
///
/// Each task's loss is the mean over its sentences of the per-sentence mean
/// over labelled characters; a task absent from the batch contributes 0.
pub fn batch_loss(model: &FrontendModel, tape: &mut Tape, batch: &[&TrainingExample], mode: Mode, alpha_poly: f64, alpha_prosody: f64) -> Result<BatchLoss> {
    let seqs: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
    let tb = TokenBatch::new(&seqs)?;
    let p = tape.bind(model.store(), true);
    let out = model.forward(tape, &p, &tb, mode)?;
    let rows = tb.ids.len();
    let n_poly = batch.iter().filter(|e| e.task() == Task::Poly).count();
    let n_prosody = batch.len() - n_poly;

    let mut poly_targets = alloc::vec![0; rows];
    let mut poly_w = alloc::vec![0.0; rows];
    let mut pros_targets = alloc::vec![0; rows];
    let mut pros_w = alloc::vec![0.0; rows];
    let mut spans = Vec::new();
    let mut span_w = Vec::new();
    for (b, e) in batch.iter().enumerate() {
        let r0 = b * tb.seq;
        match &e.labels {
            ExampleLabels::Poly { targets, mask } => {
                let m = mask.iter().filter(|&&x| x).count();
                for t in (0..e.len()).filter(|&t| mask[t]) {
                    poly_targets[r0 + t] = targets[t];
                    poly_w[r0 + t] = 1.0 / (n_poly * m) as f64;
                }
            }
            ExampleLabels::Prosody(labels) => {
                let w = 1.0 / (n_prosody * e.len()) as f64;
                for (t, &y) in labels.iter().enumerate() {
                    pros_targets[r0 + t] = y;
                    pros_w[r0 + t] = w;
                }
                spans.push((r0, e.len()));
                span_w.push(w * e.len() as f64);
            }
        }
    }
    let poly_lp = tape.log_softmax(out.poly_logits)?;
    let poly = tape.weighted_nll(poly_lp, &poly_targets, &poly_w)?;
    let prosody = match model.crf() {
        Some(crf) => {
            let (tr, st, en) = (p.var(crf.transitions), p.var(crf.start), p.var(crf.end));
            // per-character normalisation keeps the scale comparable with cross-entropy
            let w: Vec<f64> = spans.iter().zip(&span_w).map(|(s, w)| w / s.1 as f64).collect();
            tape.crf_nll(out.prosody_logits, tr, st, en, &spans, &pros_targets, &w)?
        }
        None => {
            let lp = tape.log_softmax(out.prosody_logits)?;
            tape.weighted_nll(lp, &pros_targets, &pros_w)?
        }
    };
    debug_assert_eq!(tape.value(out.prosody_logits).last_dim(), NUM_PROSODY_LABELS);
    let total = global_loss(tape, poly, prosody, alpha_poly, alpha_prosody)?;
    Ok(BatchLoss { params: p, poly, prosody, total })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub l_poly: f64,
    pub l_prosody: f64,
    pub loss: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// One optimisation step on a batch. `step` is 1-based.
pub fn train_step(model: &mut FrontendModel, adam: &mut AdamState, batch: &[&TrainingExample], cfg: &TrainConfig, step: usize) -> Result<StepReport> {
    let mode = Mode::Train { seed: cfg.seed, step: step as u64 };
    let mut tape = Tape::new();
    let loss = match batch_loss(model, &mut tape, batch, mode, cfg.alpha_poly, cfg.alpha_prosody) {
        Ok(l) => l,
        Err(Error::NonFinite { .. }) => return Err(locate_non_finite(model, batch, cfg, step)),
        Err(e) => return Err(e),
    };
    let grads = tape.backward(loss.total)?;
    let mut g = grads.for_bound(&loss.params);
    let grad_norm = clip_global_norm(&mut g, cfg.clip_norm);
    if !grad_norm.is_finite() {
        return Err(locate_non_finite(model, batch, cfg, step));
    }
    let adam_cfg = AdamConfig { lr: cfg.lr_at(step), ..cfg.adam };
    adam_step(model.store_mut(), &g, adam, &adam_cfg);
    Ok(StepReport {
        l_poly: tape.value(loss.poly).item(),
        l_prosody: tape.value(loss.prosody).item(),
        loss: tape.value(loss.total).item(),
        grad_norm,
    })
}

fn locate_non_finite(model: &FrontendModel, batch: &[&TrainingExample], cfg: &TrainConfig, step: usize) -> Error {
    let mode = Mode::Train { seed: cfg.seed, step: step as u64 };
    for (i, e) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let bad = match batch_loss(model, &mut tape, &[*e], mode, cfg.alpha_poly, cfg.alpha_prosody) {
            Ok(l) => !tape.value(l.total).item().is_finite(),
            Err(_) => true,
        };
        if bad {
            return Error::NonFiniteLoss { step, example: i };
        }
    }
    Error::NonFiniteLoss { step, example: 0 }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    /// Mean training losses since the previous row.
    pub l_poly: f64,
    pub l_prosody: f64,
    pub val_acc: f64,
    pub val_pw_f1: f64,
    pub val_pph_f1: f64,
    pub val_iph_f1: f64,
}

impl MetricsRow {
    fn new(step: usize, l_poly: f64, l_prosody: f64, r: &EvalReport) -> Self {
        let p = r.prosody.unwrap_or_default();
        Self {
            step,
            l_poly,
            l_prosody,
            val_acc: r.poly.as_ref().map_or(0.0, |x| x.accuracy),
            val_pw_f1: p.pw.f1,
            val_pph_f1: p.pph.f1,
            val_iph_f1: p.iph.f1,
        }
    }
}

/// Training and validation examples of both tasks.
#[derive(Clone, Copy, Debug)]
pub struct TaskData<'a> {
    pub poly_train: &'a [TrainingExample],
    pub prosody_train: &'a [TrainingExample],
    pub poly_val: &'a [TrainingExample],
    pub prosody_val: &'a [TrainingExample],
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<MetricsRow>,
    pub steps: Vec<StepReport>,
    pub best_step: usize,
    pub best_score: f64,
}

/// Trains for `cfg.steps` steps, validating every `cfg.eval_every` steps and at the end.
///
/// The model is left holding the parameters of the best validation score
/// (mean of polyphone accuracy and phonological-phrase F1).
pub fn train<F: FnMut(&MetricsRow)>(model: &mut FrontendModel, data: TaskData<'_>, cfg: &TrainConfig, mut on_row: F) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut batches = MixedBatches::new(data.poly_train, data.prosody_train, cfg.batch_size, cfg.mixing_ratio, cfg.seed)?;
    let mut adam = AdamState::new(model.store());
    let mut outcome = TrainOutcome { log: Vec::new(), steps: Vec::new(), best_step: 0, best_score: f64::NEG_INFINITY };
    let mut best: Option<ParamStore> = None;
    let (mut sum_p, mut sum_r, mut n) = (0.0, 0.0, 0usize);
    for step in 1..=cfg.steps {
        let batch = batches.next().expect("endless");
        let r = train_step(model, &mut adam, &batch, cfg, step)?;
        outcome.steps.push(r);
        sum_p += r.l_poly;
        sum_r += r.l_prosody;
        n += 1;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let report = evaluate(model, data.poly_val, data.prosody_val, cfg.restrict_argmax)?;
            let row = MetricsRow::new(step, sum_p / n as f64, sum_r / n as f64, &report);
            (sum_p, sum_r, n) = (0.0, 0.0, 0);
            on_row(&row);
            outcome.log.push(row);
            let score = report.selection_score();
            if score > outcome.best_score {
                outcome.best_score = score;
                outcome.best_step = step;
                best = Some(model.store().clone());
            }
        }
    }
    if let Some(store) = best {
        model.load_store(store)?;
    }
    Ok(outcome)
}
