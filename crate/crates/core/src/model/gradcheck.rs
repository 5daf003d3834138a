use alloc::string::String;
use alloc::vec::Vec;

use super::{Model, ModelParams};
use crate::error::Result;
use crate::features::ModelInput;
use crate::labeling::DeltaBitmap;

/// Central-difference step.
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(tensor name, relative error)` in parameter order.
    pub per_tensor: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Compares `analytic` with central finite differences of the sample loss.
///
/// Relative error per tensor is `‖a − n‖ / max(‖a‖, ‖n‖)` (0 when both
/// vanish).
pub fn compare_gradients(
    model: &Model,
    input: &ModelInput,
    label: &DeltaBitmap,
    analytic: &ModelParams,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut probe = model.clone();
    let names = model.params.tensor_names();
    let count = names.len();
    let mut per_tensor = Vec::with_capacity(count);
    for (t, name) in names.into_iter().enumerate() {
        let len = model.params.tensors()[t].len();
        let a = analytic.tensors()[t].as_slice().to_vec();
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for (i, &ai) in a.iter().enumerate().take(len) {
            let orig = model.params.tensors()[t].as_slice()[i];
            probe.params.tensors_mut()[t].as_mut_slice()[i] = orig + STEP;
            let up = probe.loss(input, label)?;
            probe.params.tensors_mut()[t].as_mut_slice()[i] = orig - STEP;
            let down = probe.loss(input, label)?;
            probe.params.tensors_mut()[t].as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            diff2 += (ai - numeric) * (ai - numeric);
            a2 += ai * ai;
            n2 += numeric * numeric;
        }
        let scale = libm::sqrt(a2.max(n2));
        let rel = if scale == 0.0 {
            0.0
        } else {
            libm::sqrt(diff2) / scale
        };
        per_tensor.push((name, rel));
    }
    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_tensor,
        max_relative_error,
        tolerance,
    })
}

/// Checks the backward pass of `model` on one sample.
pub fn gradient_check(
    model: &Model,
    input: &ModelInput,
    label: &DeltaBitmap,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = model.gradient(input, label)?.grads;
    compare_gradients(model, input, label, &analytic, tolerance)
}
