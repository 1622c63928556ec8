use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{truncated_normal, ParamId, ParamStore};
use crate::tape::{Bound, Tape, Var};
use crate::tensor::Tensor;

/// Affine layers with GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

fn dims(in_dim: usize, hidden: usize, out_dim: usize, depth: usize) -> Vec<(usize, usize)> {
    (0..depth)
        .map(|i| {
            let a = if i == 0 { in_dim } else { hidden };
            let b = if i + 1 == depth { out_dim } else { hidden };
            (a, b)
        })
        .collect()
}

impl Mlp {
    pub const DEPTH: usize = 3;

    pub fn param_shapes(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Vec<(alloc::string::String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, (a, b)) in dims(in_dim, hidden, out_dim, Self::DEPTH).into_iter().enumerate() {
            out.push((format!("{prefix}mlp.l{i}.w"), alloc::vec![a, b]));
            out.push((format!("{prefix}mlp.l{i}.b"), alloc::vec![b]));
        }
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
            } else {
                Tensor::zeros(&shape)
            };
            store.add(name, t)?;
        }
        Self::attach(store, prefix, in_dim, hidden, out_dim)
    }

    pub fn attach(store: &ParamStore, prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Result<Self> {
        let shapes = Self::param_shapes(prefix, in_dim, hidden, out_dim);
        let ids = shapes
            .iter()
            .map(|(n, s)| store.expect(n, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: ids.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, p.var(w), p.var(b))?;
            if i + 1 < self.layers.len() {
                h = tape.gelu(h)?;
            }
        }
        Ok(h)
    }
}
