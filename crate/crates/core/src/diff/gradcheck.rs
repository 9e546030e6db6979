//! Central finite-difference verification of reverse-mode gradients.

use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, element)` with the largest error.
    pub worst: Option<(usize, usize)>,
    /// Coordinates where the function or a gradient was not finite.
    pub non_finite: Vec<(usize, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `f` at `params`.
pub fn grad_check<S: Scalar>(
    params: &[Tensor<S>],
    analytic: &[Tensor<S>],
    f: impl Fn(&[Tensor<S>]) -> Result<S>,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let coords: Vec<(usize, usize)> = params.iter().enumerate().flat_map(|(i, p)| (0..p.len()).map(move |j| (i, j))).collect();
    grad_check_at(params, analytic, f, epsilon, &coords)
}

/// [`grad_check`] restricted to `(parameter, element)` coordinates.
pub fn grad_check_at<S: Scalar>(
    params: &[Tensor<S>],
    analytic: &[Tensor<S>],
    f: impl Fn(&[Tensor<S>]) -> Result<S>,
    epsilon: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::default();
    let mut probe = params.to_vec();
    let eps = S::lit(epsilon);
    for &(pi, j) in coords {
        let original = params[pi].data()[j];
        probe[pi].data_mut()[j] = original + eps;
        let plus = f(&probe)?.as_f64();
        probe[pi].data_mut()[j] = original - eps;
        let minus = f(&probe)?.as_f64();
        probe[pi].data_mut()[j] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[pi].data()[j].as_f64();
        report.checked += 1;
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite.push((pi, j));
            continue;
        }
        let err = relative_error(a, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((pi, j));
        }
    }
    Ok(report)
}
