//! Adam with bias correction, plus global-norm clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one slot per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One Adam update of every tensor in `params` with the matching entry of `grads`.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - math::powi(cfg.beta1, t);
    let c2 = 1.0 - math::powi(cfg.beta2, t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        debug_assert_eq!(p.len(), g.len());
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= cfg.lr * mhat / (math::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>());
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::vector(vec![p])).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        adam_step(&mut s, &[Tensor::vector(vec![1.0])], &mut st, &cfg);
        let p = s.iter().next().unwrap().1.item();
        assert!((p - 0.9).abs() < 1e-7, "{p}");
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.37);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &[Tensor::vector(vec![0.0])], &mut st, &AdamConfig::default());
        }
        assert_eq!(s.iter().next().unwrap().1.item(), 0.37);
    }

    #[test]
    fn steps_are_reproducible() {
        let run = || {
            let mut s = scalar_store(2.0);
            let mut st = AdamState::new(&s);
            for g in [0.3, -1.1] {
                adam_step(&mut s, &[Tensor::vector(vec![g])], &mut st, &AdamConfig::default());
            }
            let bits = s.iter().next().unwrap().1.item().to_bits();
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_rescales() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
    }
}
