//! Teacher→student compression by matching attention maps and hidden states.
//!
//! Student layer `m` imitates teacher layer `g(m)`: its attention
//! distributions directly, its hidden states through a learned projection
//! `W_h[m]` of shape `[d_S × d_T]`. Padding positions take no part in either
//! loss. Projections exist only during distillation and are discarded with it.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::{mix_seed, Encoder, EncoderTrace, Mode};
use crate::error::{Error, Result};
use crate::math;
use crate::optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
use crate::params::{ParamId, ParamStore};
use crate::tape::{AttnLayout, Bound, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::TokenBatch;

/// Which attention matrices are matched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionTarget {
    /// Row-normalised attention distributions.
    Probabilities,
    /// Scores before the softmax.
    Logits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionInit {
    /// Random matrix with orthonormal rows (or columns when `d_S > d_T`).
    Orthonormal,
    /// `[I | 0]`, the leading identity block.
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    /// Teacher layer (1-based) for each student layer; `None` uses the uniform stride.
    pub layer_map: Option<Vec<usize>>,
    /// Also match the embedding outputs through their own projection.
    pub include_embedding_layer: bool,
    pub attention: AttentionTarget,
    pub attention_weight: f64,
    pub hidden_weight: f64,
    pub projection_init: ProjectionInit,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            layer_map: None,
            include_embedding_layer: true,
            attention: AttentionTarget::Probabilities,
            attention_weight: 1.0,
            hidden_weight: 1.0,
            projection_init: ProjectionInit::Orthonormal,
            steps: 1000,
            batch_size: 16,
            adam: AdamConfig::default(),
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

/// Uniform-stride mapping `g(m) = m · L_T / L_S` for `m = 1..=L_S`.
pub fn layer_mapping(student_layers: usize, teacher_layers: usize) -> Result<Vec<usize>> {
    if student_layers == 0 || teacher_layers == 0 || teacher_layers % student_layers != 0 {
        return Err(Error::Config(format!(
            "no uniform layer map from {student_layers} student layers to {teacher_layers} teacher layers; give one explicitly"
        )));
    }
    let stride = teacher_layers / student_layers;
    Ok((1..=student_layers).map(|m| m * stride).collect())
}

/// The configured map, checked to be strictly increasing into `[1, L_T]`.
pub fn resolve_layer_map(cfg: &DistillConfig, student_layers: usize, teacher_layers: usize) -> Result<Vec<usize>> {
    let Some(map) = &cfg.layer_map else {
        return layer_mapping(student_layers, teacher_layers);
    };
    if map.len() != student_layers {
        return Err(Error::Config(format!(
            "layer map has {} entries for {student_layers} student layers",
            map.len()
        )));
    }
    let increasing = map.windows(2).all(|w| w[0] < w[1]);
    if !increasing || map.iter().any(|&g| g == 0 || g > teacher_layers) {
        return Err(Error::Config(format!(
            "layer map {map:?} must increase strictly within 1..={teacher_layers}"
        )));
    }
    Ok(map.clone())
}

pub const EMBEDDING_PROJECTION: &str = "proj.embed";

pub fn layer_projection_name(m: usize) -> alloc::string::String {
    format!("proj.layer{m}")
}

fn orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    // Gram-Schmidt over the shorter side
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = math::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut t = Tensor::zeros(&[rows, cols]);
    let d = t.data_mut();
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                d[i * cols + j] = x;
            } else {
                d[j * cols + i] = x;
            }
        }
    }
    t
}

/// One projection per matched hidden-state pair.
pub fn init_projections(
    student_dim: usize,
    teacher_dim: usize,
    student_layers: usize,
    include_embedding: bool,
    init: ProjectionInit,
    seed: u64,
) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let make = |rng: &mut ChaCha8Rng| match init {
        ProjectionInit::Identity => {
            let mut t = Tensor::zeros(&[student_dim, teacher_dim]);
            for i in 0..student_dim.min(teacher_dim) {
                t.data_mut()[i * teacher_dim + i] = 1.0;
            }
            t
        }
        ProjectionInit::Orthonormal => orthonormal(student_dim, teacher_dim, rng),
    };
    if include_embedding {
        store.add(EMBEDDING_PROJECTION, make(&mut rng))?;
    }
    for m in 1..=student_layers {
        store.add(layer_projection_name(m), make(&mut rng))?;
    }
    Ok(store)
}

fn attention_weights(layout: AttnLayout, lengths: &[usize]) -> Vec<f64> {
    let (b, h, t) = (layout.batch, layout.heads, layout.seq);
    let mut w = alloc::vec![0.0; b * h * t * t];
    for (bi, &n) in lengths.iter().enumerate() {
        let v = 1.0 / (b * h * n * n) as f64;
        for hi in 0..h {
            let base = (bi * h + hi) * t * t;
            for i in 0..n {
                w[base + i * t..base + i * t + n].iter_mut().for_each(|x| *x = v);
            }
        }
    }
    w
}

fn hidden_weights(lengths: &[usize], seq: usize, dim: usize) -> Vec<f64> {
    let mut w = alloc::vec![0.0; lengths.len() * seq * dim];
    for (bi, &n) in lengths.iter().enumerate() {
        let v = 1.0 / (lengths.len() * n * dim) as f64;
        w[bi * seq * dim..(bi * seq + n) * dim].iter_mut().for_each(|x| *x = v);
    }
    w
}

/// Attention-matching loss on a padded batch: per sequence the mean over heads of the
/// MSE over its valid `n×n` block, averaged over sequences.
pub fn attention_term(tape: &mut Tape, a_s: Var, a_t: Var, layout: AttnLayout, lengths: &[usize]) -> Result<Var> {
    let (ss, st) = (tape.value(a_s).shape().to_vec(), tape.value(a_t).shape().to_vec());
    if ss != st {
        if ss.len() == 3 && st.len() == 3 && ss[1..] == st[1..] {
            return Err(Error::Config(format!(
                "attention matching needs equal head counts (student {:?}, teacher {:?})",
                ss, st
            )));
        }
        return Err(Error::Shape { op: "attention_term", left: ss, right: st });
    }
    let w = attention_weights(layout, lengths);
    tape.weighted_sq_err(a_s, a_t, w)
}

/// Hidden-state loss on a padded batch: per sequence the MSE between `h_s·W` and `h_t`
/// over valid rows, averaged over sequences.
pub fn hidden_term(tape: &mut Tape, h_s: Var, h_t: Var, w: Var, lengths: &[usize], seq: usize) -> Result<Var> {
    let proj = tape.matmul(h_s, w)?;
    let dim = tape.value(h_t).last_dim();
    if tape.value(proj).shape() != tape.value(h_t).shape() {
        return Err(Error::Shape {
            op: "hidden_term",
            left: tape.value(proj).shape().to_vec(),
            right: tape.value(h_t).shape().to_vec(),
        });
    }
    let weights = hidden_weights(lengths, seq, dim);
    tape.weighted_sq_err(proj, h_t, weights)
}

/// `(1/h) Σᵢ MSE(A_S[i], A_T[i])` for one sequence's `[h × T × T]` attention tensors.
pub fn attention_distill_loss(a_s: &Tensor, a_t: &Tensor) -> Result<f64> {
    if a_s.rank() != 3 || a_t.rank() != 3 {
        return Err(Error::Shape { op: "attention_distill_loss", left: a_s.shape().to_vec(), right: a_t.shape().to_vec() });
    }
    let s = a_s.shape();
    let layout = AttnLayout { batch: 1, heads: s[0], seq: s[1], dim: s[0] };
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a_s.clone()), tape.constant(a_t.clone()));
    let l = attention_term(&mut tape, x, y, layout, &[s[1]])?;
    Ok(tape.value(l).item())
}

/// `MSE(H_S · W_h, H_T)` for one sequence.
pub fn hidden_distill_loss(h_s: &Tensor, h_t: &Tensor, w_h: &Tensor) -> Result<f64> {
    if h_s.rank() != 2 || h_t.rank() != 2 || w_h.shape() != [h_s.last_dim(), h_t.last_dim()] {
        return Err(Error::Shape { op: "hidden_distill_loss", left: h_s.shape().to_vec(), right: w_h.shape().to_vec() });
    }
    let mut tape = Tape::new();
    let (x, y, w) = (tape.constant(h_s.clone()), tape.constant(h_t.clone()), tape.constant(w_h.clone()));
    let l = hidden_term(&mut tape, x, y, w, &[h_s.rows()], h_s.rows())?;
    Ok(tape.value(l).item())
}

/// Components of the total distillation loss, as graph nodes.
#[derive(Clone, Debug)]
pub struct DistillLoss {
    pub total: Var,
    /// One per student layer.
    pub attention: Vec<Var>,
    /// One per student layer.
    pub hidden: Vec<Var>,
    pub embedding: Option<Var>,
}

/// Projection slots inside a projection store.
#[derive(Clone, Debug)]
pub struct ProjectionIds {
    pub embedding: Option<ParamId>,
    pub layers: Vec<ParamId>,
}

impl ProjectionIds {
    pub fn attach(store: &ParamStore, student_dim: usize, teacher_dim: usize, student_layers: usize, include_embedding: bool) -> Result<Self> {
        let shape = [student_dim, teacher_dim];
        let embedding = if include_embedding {
            Some(store.expect(EMBEDDING_PROJECTION, &shape)?)
        } else {
            None
        };
        let layers = (1..=student_layers)
            .map(|m| store.expect(&layer_projection_name(m), &shape))
            .collect::<Result<_>>()?;
        Ok(Self { embedding, layers })
    }
}

/// Weighted sum over student layers of attention and hidden terms, plus the embedding term.
pub fn distill_total_loss(
    tape: &mut Tape,
    student: &EncoderTrace,
    teacher: &EncoderTrace,
    proj: &Bound,
    ids: &ProjectionIds,
    map: &[usize],
    cfg: &DistillConfig,
    lengths: &[usize],
) -> Result<DistillLoss> {
    if map.len() != student.attentions.len() {
        return Err(Error::Config("layer map does not cover every student layer".into()));
    }
    let seq = student.layout.seq;
    let (s_att, t_att) = match cfg.attention {
        AttentionTarget::Probabilities => (&student.attentions, &teacher.attentions),
        AttentionTarget::Logits => (&student.attention_logits, &teacher.attention_logits),
    };
    let mut terms = Vec::new();
    let mut attention = Vec::with_capacity(map.len());
    let mut hidden = Vec::with_capacity(map.len());
    for (m, &g) in map.iter().enumerate() {
        let t_layer = *t_att.get(g - 1).ok_or_else(|| Error::Config(format!("teacher has no layer {g}")))?;
        let a = attention_term(tape, s_att[m], t_layer, student.layout, lengths)?;
        let h = hidden_term(tape, student.hidden_states[m + 1], teacher.hidden_states[g], proj.var(ids.layers[m]), lengths, seq)?;
        terms.push(tape.scale(a, cfg.attention_weight)?);
        terms.push(tape.scale(h, cfg.hidden_weight)?);
        attention.push(a);
        hidden.push(h);
    }
    let embedding = match (cfg.include_embedding_layer, ids.embedding) {
        (true, Some(id)) => {
            let e = hidden_term(tape, student.hidden_states[0], teacher.hidden_states[0], proj.var(id), lengths, seq)?;
            terms.push(tape.scale(e, cfg.hidden_weight)?);
            Some(e)
        }
        (true, None) => return Err(Error::Config("embedding projection missing".into())),
        (false, _) => None,
    };
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(DistillLoss { total, attention, hidden, embedding })
}

/// Result of a distillation run.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillOutcome {
    /// Total loss at every step.
    pub losses: Vec<f64>,
    pub layer_map: Vec<usize>,
    /// Final projections; not part of the student model.
    pub projections: ParamStore,
}

impl DistillOutcome {
    /// Mean loss over the last `window` steps.
    pub fn final_loss(&self, window: usize) -> f64 {
        let n = self.losses.len().min(window.max(1));
        if n == 0 {
            return 0.0;
        }
        self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64
    }
}

/// Trains the student encoder to imitate the frozen teacher on `corpus`.
///
/// Both encoders run without dropout so that a student identical to its
/// teacher sits at an exact zero of the loss.
pub fn distill(
    teacher: (&Encoder, &ParamStore),
    student: (&Encoder, &mut ParamStore),
    corpus: &[Vec<usize>],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    let (t_enc, t_store) = teacher;
    let (s_enc, s_store) = student;
    let (tc, sc) = (t_enc.config(), s_enc.config());
    if tc.num_heads != sc.num_heads {
        return Err(Error::Config(format!(
            "attention matching needs equal head counts (student {}, teacher {})",
            sc.num_heads, tc.num_heads
        )));
    }
    if tc.vocab_size != sc.vocab_size {
        return Err(Error::Config("teacher and student vocabularies differ".into()));
    }
    if corpus.is_empty() || cfg.batch_size == 0 {
        return Err(Error::Config("distillation needs a non-empty corpus and batch".into()));
    }
    let map = resolve_layer_map(cfg, sc.num_layers, tc.num_layers)?;
    let mut proj_store = init_projections(
        sc.hidden_size,
        tc.hidden_size,
        sc.num_layers,
        cfg.include_embedding_layer,
        cfg.projection_init,
        mix_seed(&[cfg.seed, 21]),
    )?;
    let proj_ids = ProjectionIds::attach(&proj_store, sc.hidden_size, tc.hidden_size, sc.num_layers, cfg.include_embedding_layer)?;
    let mut s_adam = AdamState::new(s_store);
    let mut p_adam = AdamState::new(&proj_store);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 22]));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut seqs: Vec<&[usize]> = Vec::with_capacity(cfg.batch_size);
        while seqs.len() < cfg.batch_size.min(corpus.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            seqs.push(&corpus[order[cursor]]);
            cursor += 1;
        }
        let batch = TokenBatch::new(&seqs)?;
        let mut tape = Tape::new();
        let tp = tape.bind(t_store, false);
        let t_trace = t_enc.forward(&mut tape, &tp, &batch, Mode::Eval)?;
        let sp = tape.bind(s_store, true);
        let s_trace = s_enc.forward(&mut tape, &sp, &batch, Mode::Eval)?;
        let pp = tape.bind(&proj_store, true);
        let loss = distill_total_loss(&mut tape, &s_trace, &t_trace, &pp, &proj_ids, &map, cfg, &batch.lengths)?;
        let grads = tape.backward(loss.total)?;
        let mut g = grads.for_bound(&sp);
        let n_student = g.len();
        g.extend(grads.for_bound(&pp));
        clip_global_norm(&mut g, cfg.clip_norm);
        let g_proj = g.split_off(n_student);
        adam_step(s_store, &g, &mut s_adam, &cfg.adam);
        adam_step(&mut proj_store, &g_proj, &mut p_adam, &cfg.adam);
        losses.push(tape.value(loss.total).item());
    }
    Ok(DistillOutcome { losses, layer_map: map, projections: proj_store })
}

/// Distillation from the pretrained teacher on broad unlabelled text.
pub fn general_distillation(
    teacher: (&Encoder, &ParamStore),
    student: (&Encoder, &mut ParamStore),
    unlabeled: &[Vec<usize>],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    distill(teacher, student, unlabeled, cfg)
}

/// Distillation from the finetuned teacher on the task corpora's text.
pub fn task_distillation(
    teacher: (&Encoder, &ParamStore),
    student: (&Encoder, &mut ParamStore),
    task_text: &[Vec<usize>],
    cfg: &DistillConfig,
) -> Result<DistillOutcome> {
    distill(teacher, student, task_text, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::model::ENCODER_PREFIX;

    fn cfg(layers: usize, d: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: layers,
            hidden_size: d,
            num_heads: 2,
            ffn_size: 2 * d,
            vocab_size: 20,
            max_seq_len: 16,
            dropout_rate: 0.1,
        }
    }

    #[test]
    fn uniform_map() {
        assert_eq!(layer_mapping(2, 6).unwrap(), alloc::vec![3, 6]);
        assert_eq!(layer_mapping(3, 3).unwrap(), alloc::vec![1, 2, 3]);
        assert_eq!(layer_mapping(4, 12).unwrap(), alloc::vec![3, 6, 9, 12]);
        assert!(matches!(layer_mapping(4, 6), Err(Error::Config(_))));
        let c = DistillConfig { layer_map: Some(alloc::vec![2, 2]), ..Default::default() };
        assert!(resolve_layer_map(&c, 2, 6).is_err());
        let c = DistillConfig { layer_map: Some(alloc::vec![2, 5]), ..Default::default() };
        assert_eq!(resolve_layer_map(&c, 2, 6).unwrap(), alloc::vec![2, 5]);
    }

    #[test]
    fn hand_examples() {
        let hs = Tensor::from_rows(&[&[1.0, 0.0]]);
        let w = Tensor::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let ht = Tensor::zeros(&[1, 3]);
        assert!((hidden_distill_loss(&hs, &ht, &w).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        // per-head MSEs 0.1 and 0.3 on 1×1 maps
        let a = Tensor::new(alloc::vec![2, 1, 1], alloc::vec![0.0, 0.0]).unwrap();
        let b = Tensor::new(alloc::vec![2, 1, 1], alloc::vec![math::sqrt(0.1), math::sqrt(0.3)]).unwrap();
        assert!((attention_distill_loss(&a, &b).unwrap() - 0.2).abs() < 1e-12);
        let c = Tensor::zeros(&[3, 1, 1]);
        assert!(matches!(attention_distill_loss(&a, &c), Err(Error::Config(_))));
    }

    #[test]
    fn orthonormal_rows() {
        let p = init_projections(3, 5, 1, false, ProjectionInit::Orthonormal, 4).unwrap();
        let w = p.get(p.find("proj.layer1").unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..5).map(|k| w.data()[i * 5 + k] * w.data()[j * 5 + k]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_distillation_is_a_fixed_point() {
        let mut t_store = ParamStore::new();
        let enc = Encoder::init(cfg(2, 8), &mut t_store, ENCODER_PREFIX, 3).unwrap();
        let mut s_store = t_store.clone();
        let corpus: Vec<Vec<usize>> = (0..6).map(|i| (0..3 + i).map(|j| 2 + (i * 7 + j) % 18).collect()).collect();
        let dc = DistillConfig { steps: 20, batch_size: 3, projection_init: ProjectionInit::Identity, ..Default::default() };
        let before = t_store.clone();
        let out = distill((&enc, &t_store), (&enc, &mut s_store), &corpus, &dc).unwrap();
        assert!(out.losses.iter().all(|&l| l == 0.0));
        assert_eq!(s_store, t_store);
        assert_eq!(t_store, before);
    }

    #[test]
    fn distillation_reduces_loss() {
        let mut t_store = ParamStore::new();
        let t_enc = Encoder::init(cfg(4, 12), &mut t_store, ENCODER_PREFIX, 3).unwrap();
        let mut s_store = ParamStore::new();
        let s_enc = Encoder::init(cfg(2, 8), &mut s_store, ENCODER_PREFIX, 4).unwrap();
        let corpus: Vec<Vec<usize>> = (0..12).map(|i| (0..4 + i % 5).map(|j| 2 + (i * 5 + j * 3) % 18).collect()).collect();
        let dc = DistillConfig { steps: 150, batch_size: 4, adam: AdamConfig { lr: 5e-3, ..Default::default() }, ..Default::default() };
        let out = distill((&t_enc, &t_store), (&s_enc, &mut s_store), &corpus, &dc).unwrap();
        assert!(out.final_loss(10) < 0.5 * out.losses[0], "{} vs {}", out.final_loss(10), out.losses[0]);
    }
}
