//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward pass. Nodes only reference earlier nodes, so walking the
//! tape backwards is a valid reverse topological order.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Additive logit applied to masked attention keys.
pub const ATTENTION_MASK_LOGIT: f64 = -1e9;

/// Layout of a batched multi-head attention computation over `[batch·seq × dim]` rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnLayout {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub dim: usize,
}

impl AttnLayout {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Precomputed gradient pieces of a batched linear-chain CRF negative log-likelihood.
#[derive(Clone, Debug)]
struct CrfGrads {
    emissions: Vec<f64>,
    transitions: Vec<f64>,
    start: Vec<f64>,
    end: Vec<f64>,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Detach,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRowBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    MulConst { x: Var, factors: Vec<f64> },
    Mul { a: Var, b: Var },
    Gelu { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    GatherRows { table: Var, rows: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { a: Var, b: Var },
    SliceCols { x: Var, start: usize },
    RowBlend { new: Var, prev: Var, keep_new: Vec<bool> },
    AttnScores { q: Var, k: Var, layout: AttnLayout, scale: f64 },
    AttnContext { probs: Var, v: Var, layout: AttnLayout },
    WeightedNll { log_probs: Var, targets: Vec<usize>, weights: Vec<f64> },
    WeightedSqErr { a: Var, b: Var, weights: Vec<f64> },
    Sum { x: Var },
    CrfNll { emissions: Var, transitions: Var, start: Var, end: Var, grads: CrfGrads },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The recording context for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Contiguous block of leaves created by [`Tape::bind`].
#[derive(Clone, Copy, Debug)]
pub struct Bound {
    offset: usize,
    len: usize,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        debug_assert!(id.index() < self.len);
        Var(self.offset + id.index())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when nothing flowed into `v`.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Gradients for every parameter of a bound store, in store order.
    pub fn for_bound(&self, bound: &Bound) -> Vec<Tensor> {
        (0..bound.len)
            .map(|i| self.tensor(Var(bound.offset + i)))
            .collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `c = alpha·A·B + beta·c` over strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |r: usize, cc: usize, rs: usize, cs: usize| (r - 1) * rs + (cc - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len(), "gemm: A view out of bounds");
        assert!(last(k, n, rsb, csb) < b.len(), "gemm: B view out of bounds");
    }
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: C view out of bounds");
    // SAFETY: all three strided views were bounds-checked above, and `c` is a
    // unique borrow that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[inline]
fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const K: f64 = 0.044_715;
    let u = C * (x + K * x * x * x);
    let t = math::tanh(u);
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (y, dy)
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = math::exp(s - max);
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Places every tensor of `store` on the tape as consecutive leaves.
    pub fn bind(&mut self, store: &ParamStore, trainable: bool) -> Bound {
        let offset = self.nodes.len();
        for (_, t) in store.iter() {
            if trainable {
                self.param(t.clone());
            } else {
                self.constant(t.clone());
            }
        }
        Bound {
            offset,
            len: store.len(),
        }
    }

    /// Copy of `x` that passes no gradient back.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node {
            value,
            op: Op::Detach,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, ta.data(), (k, 1), tb.data(), (n, 1), 0.0, &mut out, (n, 1));
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b }, rg, "matmul")
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Add { a, b }, rg, "add")
    }

    /// Adds a `[n]` bias to every row of `[..×n]`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.last_dim();
        if tb.rank() != 1 || tb.len() != n || tx.rank() == 0 {
            return Err(shape_err("add_row_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (r, b) in row.iter_mut().zip(tb.data()) {
                *r += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        self.push(value, Op::AddRowBias { x, bias }, rg, "add_row_bias")
    }

    /// `x·Wᵀ`-free affine map: `x·w + b` with `w: [in×out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let tx = self.value(x);
        let value = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * factor).collect())?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Scale { x, factor }, rg, "scale")
    }

    /// Elementwise product with a constant tensor of factors (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        if factors.len() != tx.len() {
            return Err(Error::Shape {
                op: "mul_const",
                left: tx.shape().to_vec(),
                right: vec![factors.len()],
            });
        }
        let data = tx.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::MulConst { x, factors }, rg, "mul_const")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::Mul { a, b }, rg, "mul")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu_parts(v).0).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Gelu { x }, rg, "gelu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| math::tanh(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Tanh { x }, rg, "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Sigmoid { x }, rg, "sigmoid")
    }

    /// Softmax along the trailing axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = softmax_rows(tx.data(), tx.last_dim());
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::Softmax { x }, rg, "softmax")
    }

    /// Log-softmax along the trailing axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.last_dim();
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let lse = math::log_sum_exp(row);
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::LogSoftmax { x }, rg, "log_softmax")
    }

    /// Row-wise layer normalization with affine gain and bias over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            inv_std[r] = inv;
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                out[r * d + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
            "layer_norm",
        )
    }

    /// Selects rows of a 2-D table: `[V×n] → [len(rows)×n]`. Backward scatter-adds.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 || rows.is_empty() {
            return Err(Error::InvalidShape {
                shape: tt.shape().to_vec(),
                reason: "gather_rows needs a 2-D table and at least one row".into(),
            });
        }
        let (v, n) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * n);
        for (pos, &r) in rows.iter().enumerate() {
            if r >= v {
                return Err(Error::Label {
                    position: pos,
                    label: r,
                    classes: v,
                });
            }
            data.extend_from_slice(tt.row(r));
        }
        let value = Tensor::new(vec![rows.len(), n], data)?;
        let rg = self.rg(&[table]);
        self.push(
            value,
            Op::GatherRows {
                table,
                rows: rows.to_vec(),
            },
            rg,
            "gather_rows",
        )
    }

    /// Stacks 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or(Error::Usage("concat_rows of nothing".into()))?);
        let n = first.last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape()[1] != n {
                return Err(shape_err("concat_rows", first, t));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        let rg = self.rg(parts);
        self.push(
            value,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            rg,
            "concat_rows",
        )
    }

    /// `[m×p] ‖ [m×q] → [m×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[0] != tb.shape()[0] {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let (m, p, q) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut data = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::new(vec![m, p + q], data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, Op::ConcatCols { a, b }, rg, "concat_cols")
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || start >= end || end > tx.shape()[1] {
            return Err(Error::InvalidShape {
                shape: tx.shape().to_vec(),
                reason: alloc::format!("cannot slice columns {start}..{end}"),
            });
        }
        let m = tx.shape()[0];
        let mut data = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            data.extend_from_slice(&tx.row(r)[start..end]);
        }
        let value = Tensor::new(vec![m, end - start], data)?;
        let rg = self.rg(&[x]);
        self.push(value, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    /// Per-row select: row `r` comes from `new` when `keep_new[r]`, else from `prev`.
    pub fn row_blend(&mut self, new: Var, prev: Var, keep_new: &[bool]) -> Result<Var> {
        let (tn, tp) = (self.value(new), self.value(prev));
        if tn.shape() != tp.shape() || tn.rows() != keep_new.len() {
            return Err(shape_err("row_blend", tn, tp));
        }
        let n = tn.last_dim();
        let mut data = Vec::with_capacity(tn.len());
        for (r, &k) in keep_new.iter().enumerate() {
            data.extend_from_slice(if k { tn.row(r) } else { tp.row(r) });
        }
        let value = Tensor::new(tn.shape().to_vec(), data)?;
        debug_assert_eq!(value.len(), keep_new.len() * n);
        let rg = self.rg(&[new, prev]);
        self.push(
            value,
            Op::RowBlend {
                new,
                prev,
                keep_new: keep_new.to_vec(),
            },
            rg,
            "row_blend",
        )
    }

    /// Scaled dot-product logits per head: `[B·T×d] × [B·T×d] → [B·h × T × T]`.
    ///
    /// `key_valid[b·T + j]` false adds [`ATTENTION_MASK_LOGIT`] to column `j` of sequence `b`.
    pub fn attention_scores(&mut self, q: Var, k: Var, layout: AttnLayout, key_valid: &[bool]) -> Result<Var> {
        let (tq, tk) = (self.value(q), self.value(k));
        let AttnLayout { batch, heads, seq, dim } = layout;
        let want = [batch * seq, dim];
        if tq.shape() != want || tk.shape() != want || dim % heads != 0 || key_valid.len() != batch * seq {
            return Err(shape_err("attention_scores", tq, tk));
        }
        let dh = layout.head_dim();
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut out = vec![0.0; batch * heads * seq * seq];
        for b in 0..batch {
            for h in 0..heads {
                let qo = b * seq * dim + h * dh;
                let so = (b * heads + h) * seq * seq;
                gemm(
                    seq,
                    dh,
                    seq,
                    scale,
                    &tq.data()[qo..],
                    (dim, 1),
                    &tk.data()[qo..],
                    (1, dim),
                    0.0,
                    &mut out[so..so + seq * seq],
                    (seq, 1),
                );
                for i in 0..seq {
                    for j in 0..seq {
                        if !key_valid[b * seq + j] {
                            out[so + i * seq + j] += ATTENTION_MASK_LOGIT;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch * heads, seq, seq], out)?;
        let rg = self.rg(&[q, k]);
        self.push(value, Op::AttnScores { q, k, layout, scale }, rg, "attention_scores")
    }

    /// Mixes value rows by attention probabilities: `[B·h×T×T], [B·T×d] → [B·T×d]`.
    pub fn attention_context(&mut self, probs: Var, v: Var, layout: AttnLayout) -> Result<Var> {
        let (tp, tv) = (self.value(probs), self.value(v));
        let AttnLayout { batch, heads, seq, dim } = layout;
        if tp.shape() != [batch * heads, seq, seq] || tv.shape() != [batch * seq, dim] {
            return Err(shape_err("attention_context", tp, tv));
        }
        let dh = layout.head_dim();
        let mut out = vec![0.0; batch * seq * dim];
        for b in 0..batch {
            for h in 0..heads {
                let po = (b * heads + h) * seq * seq;
                let vo = b * seq * dim + h * dh;
                gemm(
                    seq,
                    seq,
                    dh,
                    1.0,
                    &tp.data()[po..po + seq * seq],
                    (seq, 1),
                    &tv.data()[vo..],
                    (dim, 1),
                    0.0,
                    &mut out[vo..],
                    (dim, 1),
                );
            }
        }
        let value = Tensor::new(vec![batch * seq, dim], out)?;
        let rg = self.rg(&[probs, v]);
        self.push(value, Op::AttnContext { probs, v, layout }, rg, "attention_context")
    }

    /// `−Σₜ wₜ · log_probs[t, targets[t]]`; rows with zero weight are ignored entirely.
    pub fn weighted_nll(&mut self, log_probs: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let lp = self.value(log_probs);
        let c = lp.last_dim();
        if lp.rank() != 2 || targets.len() != lp.rows() || weights.len() != lp.rows() {
            return Err(Error::Shape {
                op: "weighted_nll",
                left: lp.shape().to_vec(),
                right: vec![targets.len(), weights.len()],
            });
        }
        let mut loss = 0.0;
        for (t, (&y, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            if y >= c {
                return Err(Error::Label {
                    position: t,
                    label: y,
                    classes: c,
                });
            }
            loss -= w * lp.data()[t * c + y];
        }
        let rg = self.rg(&[log_probs]);
        self.push(
            Tensor::scalar(loss),
            Op::WeightedNll {
                log_probs,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
            "weighted_nll",
        )
    }

    /// `Σᵢ wᵢ · (aᵢ − bᵢ)²`.
    pub fn weighted_sq_err(&mut self, a: Var, b: Var, weights: Vec<f64>) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || weights.len() != ta.len() {
            return Err(shape_err("weighted_sq_err", ta, tb));
        }
        let loss = ta
            .data()
            .iter()
            .zip(tb.data())
            .zip(&weights)
            .map(|((x, y), w)| w * (x - y) * (x - y))
            .sum();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::scalar(loss), Op::WeightedSqErr { a, b, weights }, rg, "weighted_sq_err")
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).len();
        self.weighted_sq_err(a, b, vec![1.0 / n as f64; n])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Batched linear-chain CRF negative log-likelihood.
    ///
    /// `emissions` is `[rows×K]`; `spans[i] = (first_row, len)` picks sequence `i`, whose gold
    /// path is `labels[first_row..first_row+len]`. The result is `Σᵢ weights[i]·(log Z_i − score_i)`.
    pub fn crf_nll(
        &mut self,
        emissions: Var,
        transitions: Var,
        start: Var,
        end: Var,
        spans: &[(usize, usize)],
        labels: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let (te, tt, ts, tn) = (
            self.value(emissions),
            self.value(transitions),
            self.value(start),
            self.value(end),
        );
        let k = te.last_dim();
        if te.rank() != 2 || tt.shape() != [k, k] || ts.shape() != [k] || tn.shape() != [k] {
            return Err(shape_err("crf_nll", te, tt));
        }
        if labels.len() != te.rows() || spans.len() != weights.len() {
            return Err(Error::Usage("crf_nll: labels/spans/weights disagree with emissions".into()));
        }
        let mut grads = CrfGrads {
            emissions: vec![0.0; te.len()],
            transitions: vec![0.0; k * k],
            start: vec![0.0; k],
            end: vec![0.0; k],
        };
        let mut loss = 0.0;
        for (&(first, len), &w) in spans.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            if len == 0 || first + len > te.rows() {
                return Err(Error::Usage("crf_nll: span out of range".into()));
            }
            let em = &te.data()[first * k..(first + len) * k];
            let gold = &labels[first..first + len];
            for (t, &y) in gold.iter().enumerate() {
                if y >= k {
                    return Err(Error::Label {
                        position: first + t,
                        label: y,
                        classes: k,
                    });
                }
            }
            let stats = crate::heads::crf::forward_backward(em, tt.data(), ts.data(), tn.data(), k);
            let score = crate::heads::crf::path_score(em, tt.data(), ts.data(), tn.data(), k, gold);
            loss += w * (stats.log_z - score);
            let ge = &mut grads.emissions[first * k..(first + len) * k];
            for (g, m) in ge.iter_mut().zip(&stats.unary) {
                *g += w * m;
            }
            for (g, m) in grads.transitions.iter_mut().zip(&stats.pairwise) {
                *g += w * m;
            }
            for j in 0..k {
                grads.start[j] += w * stats.unary[j];
                grads.end[j] += w * stats.unary[(len - 1) * k + j];
            }
            ge_sub_gold(ge, gold, k, w);
            grads.start[gold[0]] -= w;
            grads.end[gold[len - 1]] -= w;
            for t in 1..len {
                grads.transitions[gold[t - 1] * k + gold[t]] -= w;
            }
        }
        let rg = self.rg(&[emissions, transitions, start, end]);
        self.push(
            Tensor::scalar(loss),
            Op::CrfNll {
                emissions,
                transitions,
                start,
                end,
                grads,
            },
            rg,
            "crf_nll",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Usage(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    gemm(m, n, k, 1.0, g, (n, 1), tb.data(), (1, n), 1.0, ga, (k, 1));
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    gemm(k, m, n, 1.0, ta.data(), (1, k), g, (n, 1), 1.0, gb, (n, 1));
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(*v) {
                        let gv = accumulate(&mut grads[v.0], g.len());
                        for (x, y) in gv.iter_mut().zip(g) {
                            *x += y;
                        }
                    }
                }
            }
            Op::AddRowBias { x, bias } => {
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                if self.wants(*bias) {
                    let n = out.last_dim();
                    let gb = accumulate(&mut grads[bias.0], n);
                    for row in g.chunks_exact(n) {
                        for (a, b) in gb.iter_mut().zip(row) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for (a, b) in gx.iter_mut().zip(g) {
                        *a += b * factor;
                    }
                }
            }
            Op::MulConst { x, factors } => {
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for ((a, b), f) in gx.iter_mut().zip(g).zip(factors) {
                        *a += b * f;
                    }
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], g.len());
                    for ((d, gg), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *d += gg * y;
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], g.len());
                    for ((d, gg), x) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *d += gg * x;
                    }
                }
            }
            Op::Gelu { x } => {
                let tx = self.value(*x);
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, gg), &v) in gx.iter_mut().zip(g).zip(tx.data()) {
                    *d += gg * gelu_parts(v).1;
                }
            }
            Op::Tanh { x } => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, gg), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *d += gg * (1.0 - y * y);
                }
            }
            Op::Sigmoid { x } => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, gg), y) in gx.iter_mut().zip(g).zip(out.data()) {
                    *d += gg * y * (1.0 - y);
                }
            }
            Op::Softmax { x } => {
                let n = out.last_dim();
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((dx, gr), yr) in gx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.data().chunks_exact(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gg), y) in dx.iter_mut().zip(gr).zip(yr) {
                        *d += y * (gg - dot);
                    }
                }
            }
            Op::LogSoftmax { x } => {
                let n = out.last_dim();
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((dx, gr), yr) in gx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.data().chunks_exact(n)) {
                    let total: f64 = gr.iter().sum();
                    for ((d, gg), y) in dx.iter_mut().zip(gr).zip(yr) {
                        *d += gg - math::exp(*y) * total;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.last_dim();
                let tg = self.value(*gain);
                if self.wants(*gain) {
                    let gg = accumulate(&mut grads[gain.0], d);
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for c in 0..d {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                }
                if self.wants(*bias) {
                    let gb = accumulate(&mut grads[bias.0], d);
                    for gr in g.chunks_exact(d) {
                        for c in 0..d {
                            gb[c] += gr[c];
                        }
                    }
                }
                if self.wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, ((dx, gr), hr)) in gx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(xhat.chunks_exact(d))
                        .enumerate()
                    {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..d {
                            dxhat[c] = gr[c] * tg.data()[c];
                            mean_d += dxhat[c];
                            mean_dh += dxhat[c] * hr[c];
                        }
                        mean_d /= d as f64;
                        mean_dh /= d as f64;
                        for c in 0..d {
                            dx[c] += inv_std[r] * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                }
            }
            Op::GatherRows { table, rows } => {
                let tt = self.value(*table);
                let n = tt.last_dim();
                let gt = accumulate(&mut grads[table.0], tt.len());
                for (gr, &r) in g.chunks_exact(n).zip(rows) {
                    for (d, v) in gt[r * n..(r + 1) * n].iter_mut().zip(gr) {
                        *d += v;
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.wants(*p) {
                        let gp = accumulate(&mut grads[p.0], len);
                        for (d, v) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *d += v;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { a, b } => {
                let (pa, pb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let w = pa + pb;
                if self.wants(*a) {
                    let ga = accumulate(&mut grads[a.0], out.rows() * pa);
                    for (dr, gr) in ga.chunks_exact_mut(pa).zip(g.chunks_exact(w)) {
                        for (d, v) in dr.iter_mut().zip(&gr[..pa]) {
                            *d += v;
                        }
                    }
                }
                if self.wants(*b) {
                    let gb = accumulate(&mut grads[b.0], out.rows() * pb);
                    for (dr, gr) in gb.chunks_exact_mut(pb).zip(g.chunks_exact(w)) {
                        for (d, v) in dr.iter_mut().zip(&gr[pa..]) {
                            *d += v;
                        }
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let tx = self.value(*x);
                let (n, w) = (tx.last_dim(), out.last_dim());
                let gx = accumulate(&mut grads[x.0], tx.len());
                for (dr, gr) in gx.chunks_exact_mut(n).zip(g.chunks_exact(w)) {
                    for (d, v) in dr[*start..*start + w].iter_mut().zip(gr) {
                        *d += v;
                    }
                }
            }
            Op::RowBlend { new, prev, keep_new } => {
                let n = out.last_dim();
                for (v, pick) in [(new, true), (prev, false)] {
                    if self.wants(*v) {
                        let gv = accumulate(&mut grads[v.0], g.len());
                        for (r, &k) in keep_new.iter().enumerate() {
                            if k == pick {
                                for (d, x) in gv[r * n..(r + 1) * n].iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                    *d += x;
                                }
                            }
                        }
                    }
                }
            }
            Op::AttnScores { q, k, layout, scale } => {
                let AttnLayout { batch, heads, seq, dim } = *layout;
                let dh = layout.head_dim();
                let (tq, tk) = (self.value(*q), self.value(*k));
                for (target, other) in [(*q, tk), (*k, tq)] {
                    if !self.wants(target) {
                        continue;
                    }
                    // dQ = s·dS·K and dK = s·dSᵀ·Q
                    let transpose = target == *k;
                    let gt = accumulate(&mut grads[target.0], batch * seq * dim);
                    for b in 0..batch {
                        for h in 0..heads {
                            let so = (b * heads + h) * seq * seq;
                            let ro = b * seq * dim + h * dh;
                            let ds = &g[so..so + seq * seq];
                            let ds_strides = if transpose { (1, seq) } else { (seq, 1) };
                            gemm(
                                seq,
                                seq,
                                dh,
                                *scale,
                                ds,
                                ds_strides,
                                &other.data()[ro..],
                                (dim, 1),
                                1.0,
                                &mut gt[ro..],
                                (dim, 1),
                            );
                        }
                    }
                }
            }
            Op::AttnContext { probs, v, layout } => {
                let AttnLayout { batch, heads, seq, dim } = *layout;
                let dh = layout.head_dim();
                let (tp, tv) = (self.value(*probs), self.value(*v));
                if self.wants(*probs) {
                    let gp = accumulate(&mut grads[probs.0], tp.len());
                    for b in 0..batch {
                        for h in 0..heads {
                            let po = (b * heads + h) * seq * seq;
                            let vo = b * seq * dim + h * dh;
                            gemm(
                                seq,
                                dh,
                                seq,
                                1.0,
                                &g[vo..],
                                (dim, 1),
                                &tv.data()[vo..],
                                (1, dim),
                                1.0,
                                &mut gp[po..po + seq * seq],
                                (seq, 1),
                            );
                        }
                    }
                }
                if self.wants(*v) {
                    let gv = accumulate(&mut grads[v.0], tv.len());
                    for b in 0..batch {
                        for h in 0..heads {
                            let po = (b * heads + h) * seq * seq;
                            let vo = b * seq * dim + h * dh;
                            gemm(
                                seq,
                                seq,
                                dh,
                                1.0,
                                &tp.data()[po..po + seq * seq],
                                (1, seq),
                                &g[vo..],
                                (dim, 1),
                                1.0,
                                &mut gv[vo..],
                                (dim, 1),
                            );
                        }
                    }
                }
            }
            Op::WeightedNll {
                log_probs,
                targets,
                weights,
            } => {
                let lp = self.value(*log_probs);
                let c = lp.last_dim();
                let gl = accumulate(&mut grads[log_probs.0], lp.len());
                for (t, (&y, &w)) in targets.iter().zip(weights).enumerate() {
                    if w != 0.0 {
                        gl[t * c + y] -= g[0] * w;
                    }
                }
            }
            Op::WeightedSqErr { a, b, weights } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                for (v, sign) in [(a, 1.0), (b, -1.0)] {
                    if !self.wants(*v) {
                        continue;
                    }
                    let gv = accumulate(&mut grads[v.0], ta.len());
                    for (((d, x), y), w) in gv.iter_mut().zip(ta.data()).zip(tb.data()).zip(weights) {
                        *d += sign * g[0] * 2.0 * w * (x - y);
                    }
                }
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                let gx = accumulate(&mut grads[x.0], n);
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::CrfNll {
                emissions,
                transitions,
                start,
                end,
                grads: cg,
            } => {
                for (v, src) in [
                    (emissions, &cg.emissions),
                    (transitions, &cg.transitions),
                    (start, &cg.start),
                    (end, &cg.end),
                ] {
                    if self.wants(*v) {
                        let gv = accumulate(&mut grads[v.0], src.len());
                        for (d, s) in gv.iter_mut().zip(src) {
                            *d += g[0] * s;
                        }
                    }
                }
            }
        }
    }
}

fn ge_sub_gold(ge: &mut [f64], gold: &[usize], k: usize, w: f64) {
    for (t, &y) in gold.iter().enumerate() {
        ge[t * k + y] -= w;
    }
}
