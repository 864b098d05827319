//! Central finite-difference verification of [`ModelWeights::backward`].

use super::model::ModelWeights;
use super::{mse_grad, mse_loss, Tensor4};
use crate::Result;

/// Smallest step tried when a perturbation flips a rectifier.
const MIN_STEP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_relative_error: f64,
    /// Location `(tensor, element)` of the worst error.
    pub worst_at: (usize, usize),
    /// Parameters whose step had to shrink below `step` because `±step`
    /// changed which rectifiers were active.
    pub refined_steps: usize,
}

/// Compares every analytic gradient of the squared-error loss against
/// `(L(w+h) − L(w−h)) / 2h`.
///
/// A central difference straddling a ReLU kink measures a blend of two
/// slopes, so when `w ± h` changes the activation pattern the step is cut
/// by 10× until the pattern holds (down to 1e-7). Relative error is
/// `|fd − an| / max(|fd|, |an|, 1e-6)`.
pub fn gradient_check(model: &ModelWeights<f64>, input: &Tensor4<f64>, target: &Tensor4<f64>, step: f64) -> Result<GradCheckReport> {
    let (out, tape) = model.forward(input)?;
    let base_pattern = tape.activation_pattern();
    let analytic = model.backward(&tape, &mse_grad(&out, target)?)?;
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let eval = |w: &ModelWeights<f64>| -> Result<(f64, Vec<bool>)> {
        let (o, tp) = w.forward(input)?;
        Ok((mse_loss(&o, target)?, tp.activation_pattern()))
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport { checked: 0, worst_relative_error: 0.0, worst_at: (0, 0), refined_steps: 0 };
    for (ti, g) in grads.iter().enumerate() {
        for (e, &an) in g.iter().enumerate() {
            let orig = probe.tensors()[ti][e];
            let mut h = step;
            let fd = loop {
                probe.tensors_mut()[ti][e] = orig + h;
                let (up, pu) = eval(&probe)?;
                probe.tensors_mut()[ti][e] = orig - h;
                let (down, pd) = eval(&probe)?;
                probe.tensors_mut()[ti][e] = orig;
                if (pu == base_pattern && pd == base_pattern) || h / 10.0 < MIN_STEP {
                    break (up - down) / (2.0 * h);
                }
                h /= 10.0;
            };
            if h < step {
                report.refined_steps += 1;
            }
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > report.worst_relative_error {
                report.worst_relative_error = rel;
                report.worst_at = (ti, e);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
