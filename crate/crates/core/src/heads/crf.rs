//! Linear-chain CRF scoring, forward-backward and Viterbi decoding.
//!
//! Emissions are row-major `[T×K]`, transitions `[K×K]` with `trans[i·K + j]` scoring
//! the move from label `i` to label `j`, plus per-label start and end scores.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, log_sum_exp};

/// Posterior statistics of one sequence.
#[derive(Clone, Debug)]
pub struct CrfStats {
    pub log_z: f64,
    /// `[T×K]` marginals `p(y_t = j)`.
    pub unary: Vec<f64>,
    /// `[K×K]` expected transition counts summed over time.
    pub pairwise: Vec<f64>,
}

/// Score of a fixed label path.
pub fn path_score(em: &[f64], trans: &[f64], start: &[f64], end: &[f64], k: usize, path: &[usize]) -> f64 {
    let mut s = start[path[0]] + em[path[0]];
    for t in 1..path.len() {
        s += trans[path[t - 1] * k + path[t]] + em[t * k + path[t]];
    }
    s + end[path[path.len() - 1]]
}

fn alphas(em: &[f64], trans: &[f64], start: &[f64], k: usize) -> Vec<f64> {
    let len = em.len() / k;
    let mut alpha = vec![0.0; len * k];
    for j in 0..k {
        alpha[j] = start[j] + em[j];
    }
    let mut buf = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            for i in 0..k {
                buf[i] = alpha[(t - 1) * k + i] + trans[i * k + j];
            }
            alpha[t * k + j] = log_sum_exp(&buf) + em[t * k + j];
        }
    }
    alpha
}

/// `log Σ_paths exp(score)` by the forward algorithm.
pub fn log_partition(em: &[f64], trans: &[f64], start: &[f64], end: &[f64], k: usize) -> f64 {
    let len = em.len() / k;
    let alpha = alphas(em, trans, start, k);
    let last: Vec<f64> = (0..k).map(|j| alpha[(len - 1) * k + j] + end[j]).collect();
    log_sum_exp(&last)
}

/// Forward-backward in log space.
pub fn forward_backward(em: &[f64], trans: &[f64], start: &[f64], end: &[f64], k: usize) -> CrfStats {
    let len = em.len() / k;
    let alpha = alphas(em, trans, start, k);
    let last: Vec<f64> = (0..k).map(|j| alpha[(len - 1) * k + j] + end[j]).collect();
    let log_z = log_sum_exp(&last);

    let mut beta = vec![0.0; len * k];
    beta[(len - 1) * k..].copy_from_slice(end);
    let mut buf = vec![0.0; k];
    for t in (0..len - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = trans[i * k + j] + em[(t + 1) * k + j] + beta[(t + 1) * k + j];
            }
            beta[t * k + i] = log_sum_exp(&buf);
        }
    }

    let unary = alpha.iter().zip(&beta).map(|(a, b)| exp(a + b - log_z)).collect();
    let mut pairwise = vec![0.0; k * k];
    for t in 1..len {
        for i in 0..k {
            for j in 0..k {
                pairwise[i * k + j] += exp(
                    alpha[(t - 1) * k + i] + trans[i * k + j] + em[t * k + j] + beta[t * k + j] - log_z,
                );
            }
        }
    }
    CrfStats { log_z, unary, pairwise }
}

/// Highest-scoring path. Among equal scores the lower label wins at the latest
/// position where candidate paths differ.
pub fn viterbi(em: &[f64], trans: &[f64], start: &[f64], end: &[f64], k: usize) -> Vec<usize> {
    let len = em.len() / k;
    assert!(len >= 1, "viterbi on an empty sequence");
    let mut delta: Vec<f64> = (0..k).map(|j| start[j] + em[j]).collect();
    let mut back = vec![0usize; len * k];
    let mut next = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + trans[j];
            for i in 1..k {
                let s = delta[i] + trans[i * k + j];
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            back[t * k + j] = best;
            next[j] = best_score + em[t * k + j];
        }
        core::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best_score = delta[0] + end[0];
    for j in 1..k {
        let s = delta[j] + end[j];
        if s > best_score {
            last = j;
            best_score = s;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for t in (1..len).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_transitions_decode_per_position_argmax() {
        let em = [0.1, 0.9, 0.0, 0.0, 2.0, 1.0, 0.5, 0.5, -1.0, -2.0, 3.0, 3.0];
        let z = [0.0; 16];
        let path = viterbi(&em, &z, &[0.0; 4], &[0.0; 4], 4);
        assert_eq!(path, vec![1, 0, 2]);
    }

    #[test]
    fn single_position_marginals_are_softmax() {
        let em = [1.0, 2.0, 0.5, -1.0];
        let stats = forward_backward(&em, &[0.0; 16], &[0.0; 4], &[0.0; 4], 4);
        let lse = log_sum_exp(&em);
        for j in 0..4 {
            assert!((stats.unary[j] - exp(em[j] - lse)).abs() < 1e-15);
        }
        assert!((stats.log_z - lse).abs() < 1e-15);
    }
}
