/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms, since round-off in the finite difference dominates below it.
const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter index where `max_rel_error` occurred.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `analytic` against central finite differences of `loss` around
/// `params`. The relative error of one coordinate is
/// `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], mut loss: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: params.len(),
    };
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + FD_STEP;
        let plus = loss(&probe);
        probe[i] = orig - FD_STEP;
        let minus = loss(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_rel_error || rel.is_nan() {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report
}
