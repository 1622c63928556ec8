//! Finite-difference verification of analytic gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct InputReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// `|a − n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the tape gradient of the scalar function `f` at `inputs` with central differences.
///
/// `f` must be deterministic. A mismatch is reported, not raised; errors come only from `f` itself.
pub fn grad_check<F>(f: F, inputs: &[Tensor], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut point: Vec<Tensor> = inputs.to_vec();
    let mut reports = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.tensor(v).into_data();
        let mut numeric = Vec::with_capacity(analytic.len());
        for e in 0..inputs[i].len() {
            let x0 = inputs[i].data()[e];
            point[i].data_mut()[e] = x0 + FD_STEP;
            let up = eval(&point)?;
            point[i].data_mut()[e] = x0 - FD_STEP;
            let down = eval(&point)?;
            point[i].data_mut()[e] = x0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        let mut report = InputReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            analytic,
            numeric,
        };
        for (e, (a, n)) in report.analytic.iter().zip(&report.numeric).enumerate() {
            let rel = relative_error(*a, *n);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = e;
            }
            report.max_abs_error = report.max_abs_error.max((a - n).abs());
        }
        reports.push(report);
    }
    Ok(GradCheckReport { inputs: reports, tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::vector(alloc::vec![0.3, -1.2, 4.0]);
        let r = grad_check(|t, v| t.sum(v[0]), &[x], 1e-9).unwrap();
        assert_eq!(r.inputs[0].analytic, alloc::vec![1.0; 3]);
        assert!(r.max_rel_error() < 1e-9);
        assert!(r.passed());
    }

    #[test]
    fn broken_backward_is_flagged() {
        // x ⊙ detach(x) has value x² but an analytic gradient of x instead of 2x.
        let x = Tensor::vector(alloc::vec![0.5, -1.5, 2.0]);
        let r = grad_check(
            |t, v| {
                let d = t.detach(v[0]);
                let y = t.mul(v[0], d)?;
                t.sum(y)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_error() > 0.4);
    }
}
