//! Central finite-difference verification of analytic gradients.

use super::params::{check_aligned, Parameters};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-4;
/// Coordinates whose gradient magnitude is below this are not compared.
pub const GRAD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub compared: usize,
    pub skipped: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares `grads` against the fourth-order central difference
/// `(8(f(p+h) - f(p-h)) - (f(p+2h) - f(p-2h))) / 12h` along every scalar
/// coordinate of `params`. `f` must be a pure function of the parameters.
pub fn check_gradients<P, F>(params: &P, grads: &[Tensor], f: F, step: f64) -> Result<GradcheckReport>
where
    P: Parameters + Clone,
    F: Fn(&P) -> Result<f64>,
{
    check_aligned(params, grads)?;
    let names = params.param_names();
    let mut probe = params.clone();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        compared: 0,
        skipped: 0,
    };
    for (ti, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let orig = params.tensors()[ti].data()[i];
            let mut at = |k: f64| {
                probe.tensors_mut()[ti].data_mut()[i] = orig + k * step;
                f(&probe)
            };
            let (p1, m1, p2, m2) = (at(1.0)?, at(-1.0)?, at(2.0)?, at(-2.0)?);
            probe.tensors_mut()[ti].data_mut()[i] = orig;

            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
            let analytic = g.data()[i];
            if analytic.abs().max(numeric.abs()) <= GRAD_FLOOR {
                report.skipped += 1;
                continue;
            }
            report.compared += 1;
            let err = relative_error(analytic, numeric);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst = Some((names[ti].clone(), i));
            }
        }
    }
    Ok(report)
}
