use crate::error::{Error, Result};

/// Relative errors below this floor use an absolute denominator, so that
/// coordinates whose true gradient is ~0 do not report spurious failures.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct CoordinateMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub failing: Vec<CoordinateMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, on `coords` (all coordinates when `None`).
///
/// `loss` receives the perturbed parameter vector. The unperturbed
/// `params` are restored before returning.
pub fn finite_difference_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };

    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        failing: Vec::new(),
    };
    for &index in coords {
        let original = probe[index];
        probe[index] = original + eps;
        let plus = loss(&probe);
        probe[index] = original - eps;
        let minus = loss(&probe);
        probe[index] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::LossNotEvaluable { index });
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let rel = relative_error(analytic[index], numeric);
        report.checked += 1;
        report.max_relative_error = report.max_relative_error.max(rel);
        if rel > tol {
            report.failing.push(CoordinateMismatch {
                index,
                analytic: analytic[index],
                numeric,
                relative_error: rel,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let report =
            finite_difference_check(|w| w[0] * w[0], &[3.0], &[6.0], 1e-5, 1e-6, None).unwrap();
        assert!(report.passed());
        assert!(report.max_relative_error * 6.0 < 1e-6);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let report =
            finite_difference_check(|w| w[0] * w[0] + w[1], &[1.0, 0.0], &[2.0, 3.0], 1e-5, 1e-6, None)
                .unwrap();
        assert_eq!(report.failing.len(), 1);
        assert_eq!(report.failing[0].index, 1);
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let err = finite_difference_check(|w| w[0].ln(), &[0.0], &[1.0], 1e-5, 1e-6, None);
        assert!(matches!(err, Err(Error::LossNotEvaluable { index: 0 })));
    }

    #[test]
    fn step_range_is_enforced() {
        assert!(finite_difference_check(|w| w[0], &[0.0], &[1.0], 1e-2, 1e-6, None).is_err());
    }
}
