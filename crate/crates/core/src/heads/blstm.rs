//! Single-layer bidirectional LSTM followed by an affine output layer.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{truncated_normal, ParamId, ParamStore};
use crate::tape::{Bound, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::TokenBatch;

#[derive(Clone, Copy, Debug)]
struct Direction {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct Blstm {
    hidden: usize,
    fwd: Direction,
    bwd: Direction,
    out_w: ParamId,
    out_b: ParamId,
}

impl Blstm {
    pub fn param_shapes(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for dir in ["fwd", "bwd"] {
            out.push((format!("{prefix}blstm.{dir}.w_ih"), alloc::vec![in_dim, 4 * hidden]));
            out.push((format!("{prefix}blstm.{dir}.w_hh"), alloc::vec![hidden, 4 * hidden]));
            out.push((format!("{prefix}blstm.{dir}.b"), alloc::vec![4 * hidden]));
        }
        out.push((format!("{prefix}blstm.out.w"), alloc::vec![2 * hidden, out_dim]));
        out.push((format!("{prefix}blstm.out.b"), alloc::vec![out_dim]));
        out
    }

    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        for (name, shape) in Self::param_shapes(prefix, in_dim, hidden, out_dim) {
            let t = if shape.len() == 2 {
                truncated_normal(&shape, crate::math::sqrt(1.0 / shape[0] as f64), rng)
            } else if name.ends_with(".b") && !name.contains(".out.") {
                // forget-gate bias starts at 1
                let mut b = Tensor::zeros(&shape);
                b.data_mut()[hidden..2 * hidden].fill(1.0);
                b
            } else {
                Tensor::zeros(&shape)
            };
            store.add(name, t)?;
        }
        Self::attach(store, prefix, in_dim, hidden, out_dim)
    }

    pub fn attach(store: &ParamStore, prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        let ids = Self::param_shapes(prefix, in_dim, hidden, out_dim)
            .iter()
            .map(|(n, s)| store.expect(n, s))
            .collect::<Result<Vec<_>>>()?;
        let dir = |i: usize| Direction {
            w_ih: ids[i],
            w_hh: ids[i + 1],
            b: ids[i + 2],
        };
        Ok(Self {
            hidden,
            fwd: dir(0),
            bwd: dir(3),
            out_w: ids[6],
            out_b: ids[7],
        })
    }

    fn run_direction(
        &self,
        tape: &mut Tape,
        p: &Bound,
        x: Var,
        batch: &TokenBatch,
        dir: Direction,
        reverse: bool,
    ) -> Result<Var> {
        let (bsz, seq, h) = (batch.batch(), batch.seq, self.hidden);
        let xw = tape.linear(x, p.var(dir.w_ih), p.var(dir.b))?;
        let mut hs = tape.constant(Tensor::zeros(&[bsz, h]));
        let mut cs = tape.constant(Tensor::zeros(&[bsz, h]));
        let mut outputs: Vec<Var> = alloc::vec![hs; seq];
        let steps: Vec<usize> = if reverse { (0..seq).rev().collect() } else { (0..seq).collect() };
        for (n, &t) in steps.iter().enumerate() {
            let rows: Vec<usize> = (0..bsz).map(|b| b * seq + t).collect();
            let mut z = tape.gather_rows(xw, &rows)?;
            if n > 0 {
                let r = tape.matmul(hs, p.var(dir.w_hh))?;
                z = tape.add(z, r)?;
            }
            let i = tape.slice_cols(z, 0, h)?;
            let i = tape.sigmoid(i)?;
            let f = tape.slice_cols(z, h, 2 * h)?;
            let f = tape.sigmoid(f)?;
            let g = tape.slice_cols(z, 2 * h, 3 * h)?;
            let g = tape.tanh(g)?;
            let o = tape.slice_cols(z, 3 * h, 4 * h)?;
            let o = tape.sigmoid(o)?;
            let fc = tape.mul(f, cs)?;
            let ig = tape.mul(i, g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new)?;
            let h_new = tape.mul(o, tc)?;
            // padded steps carry the previous state through unchanged
            let live: Vec<bool> = batch.lengths.iter().map(|&len| t < len).collect();
            cs = tape.row_blend(c_new, cs, &live)?;
            hs = tape.row_blend(h_new, hs, &live)?;
            outputs[t] = hs;
        }
        // time-major [seq·batch × h] back to batch-major rows
        let stacked = tape.concat_rows(&outputs)?;
        let order: Vec<usize> = (0..bsz * seq).map(|r| (r % seq) * bsz + r / seq).collect();
        tape.gather_rows(stacked, &order)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, batch: &TokenBatch) -> Result<Var> {
        let f = self.run_direction(tape, p, x, batch, self.fwd, false)?;
        let b = self.run_direction(tape, p, x, batch, self.bwd, true)?;
        let both = tape.concat_cols(f, b)?;
        tape.linear(both, p.var(self.out_w), p.var(self.out_b))
    }
}
