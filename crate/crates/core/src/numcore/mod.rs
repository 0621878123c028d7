//! Minimal differentiable tensor engine: dense `f64` tensors, a recording tape,
//! named parameters and the checkpoint format.

pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use params::{Init, ParamId, ParamSet, Parameter};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::Result;

/// Default clamp inside the logarithms of [`Tape::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Denominator floor for relative gradient error; below it the error is effectively absolute.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_REL_FLOOR)
}

/// Worst element found by [`finite_difference_check`].
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Parameters whose analytic gradient is identically zero.
    pub zero_grad_params: Vec<String>,
}

/// Compares the tape gradient of `loss_fn` against central differences for every
/// scalar of every parameter in `params`.
pub fn finite_difference_check<F>(
    params: &mut ParamSet,
    step: f64,
    mut loss_fn: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, params)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        zero_grad_params: Vec::new(),
    };
    let ids: Vec<ParamId> = params.iter().map(|(id, _)| id).collect();
    let mut eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = loss_fn(&mut tape, params)?;
        Ok(tape.value(loss).item())
    };
    for id in ids {
        let n = params.get(id).tensor.numel();
        let analytic_all = grads
            .get(id)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; n]);
        if analytic_all.iter().all(|&g| g == 0.0) {
            report.zero_grad_params.push(params.get(id).name.clone());
        }
        for (i, &analytic) in analytic_all.iter().enumerate() {
            let orig = params.get(id).tensor.data()[i];
            params.get_mut(id).tensor.data_mut()[i] = orig + step;
            let plus = eval(params)?;
            params.get_mut(id).tensor.data_mut()[i] = orig - step;
            let minus = eval(params)?;
            params.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let rel = relative_error(analytic, numeric);
            report.checked += 1;
            // NaN counts as worst and sticks.
            let worse =
                !report.max_rel_error.is_nan() && (rel.is_nan() || rel > report.max_rel_error);
            if worse || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = params.get(id).name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
