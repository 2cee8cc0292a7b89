//! Central finite-difference gradient checking.
//!
//! Uses only loss evaluations, so it is independent of the backward passes it
//! verifies.

use super::param::{ParamSlot, Parameterized};

/// A model with a deterministic scalar loss.
pub trait GradCheck: Parameterized {
    /// Loss at the current parameters; must not depend on gradient state.
    fn loss(&mut self) -> f64;
    /// Loss at the current parameters, leaving analytic gradients in the
    /// gradient buffers.
    fn loss_and_grads(&mut self) -> f64;
}

/// Gradients smaller than this are compared in absolute terms. Central
/// differences with a step near 1e-5 carry rounding noise of about 1e-11 per
/// unit of loss, far below this floor.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (block index, element index, analytic, numeric) of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn nudge<M: Parameterized + ?Sized>(model: &mut M, block: usize, index: usize, delta: f64) {
    let mut b = 0;
    model.visit_params(&mut |slot: ParamSlot<'_>| {
        if slot.grads.is_some() {
            if b == block {
                slot.values[index] += delta;
            }
            b += 1;
        }
    });
}

/// Compares every trainable gradient against `(L(p + h) - L(p - h)) / 2h`.
pub fn check_gradients<M: GradCheck + ?Sized>(model: &mut M, step: f64) -> GradReport {
    model.loss_and_grads();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |slot| {
        if let Some(g) = slot.grads {
            analytic.push(g.to_vec());
        }
    });

    let mut report = GradReport {
        n_checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
    };
    for (block, grads) in analytic.iter().enumerate() {
        for (index, &a) in grads.iter().enumerate() {
            nudge(model, block, index, step);
            let up = model.loss();
            nudge(model, block, index, -2.0 * step);
            let down = model.loss();
            nudge(model, block, index, step);
            let numeric = (up - down) / (2.0 * step);
            let rel = relative_error(a, numeric);
            report.n_checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((block, index, a, numeric));
            }
        }
    }
    report
}
