//! Central-difference gradient checking.

use crate::scalar::Scalar;

/// Denominator floor of the relative error. Coordinates whose analytic and
/// numeric gradients are both below this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Worst-case merge of two reports.
    pub fn merge(self, other: GradReport) -> GradReport {
        let checked = self.checked + other.checked;
        let mut worst = if other.max_rel_error > self.max_rel_error {
            other.clone()
        } else {
            self.clone()
        };
        worst.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        worst.checked = checked;
        worst
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` against the sixth-order central difference
/// `(45Δ₁ - 9Δ₂ + Δ₃) / 60ε`, with `Δₖ = L(x+kε) - L(x-kε)`, at every
/// coordinate of `point`. `loss` must be a pure function of its argument.
///
/// The higher-order stencil lets ε stay large enough that float32 rounding
/// in the forward pass does not swamp the difference.
pub fn grad_check<T, F>(point: &[T], analytic: &[T], loss: F, eps: T) -> GradReport
where
    T: Scalar,
    F: FnMut(&[T]) -> f64,
{
    let all: Vec<usize> = (0..point.len()).collect();
    grad_check_indices(point, analytic, &all, loss, eps)
}

/// [`grad_check`] restricted to a subset of coordinates.
pub fn grad_check_indices<T, F>(
    point: &[T],
    analytic: &[T],
    indices: &[usize],
    mut loss: F,
    eps: T,
) -> GradReport
where
    T: Scalar,
    F: FnMut(&[T]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length");
    let mut x = point.to_vec();
    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: 0,
    };
    for &i in indices {
        let orig = x[i];
        let mut eval_at = |offset: T| {
            x[i] = orig + offset;
            // the perturbation actually applied after rounding
            let applied = x[i].as_f64() - orig.as_f64();
            (loss(&x), applied)
        };
        let mut diffs = [0.0f64; 3];
        let mut h = 0.0;
        for (k, d) in diffs.iter_mut().enumerate() {
            let step = eps * T::lit((k + 1) as f64);
            let (plus, hp) = eval_at(step);
            let (minus, hm) = eval_at(-step);
            *d = plus - minus;
            h += (hp - hm) / (2.0 * (k + 1) as f64) / 3.0;
        }
        x[i] = orig;
        let numeric = (45.0 * diffs[0] - 9.0 * diffs[1] + diffs[2]) / (60.0 * h);
        let a = analytic[i].as_f64();
        let rel = relative_error(a, numeric);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_passes() {
        let x = [0.5f32, -1.5, 2.0];
        let analytic: Vec<f32> = x.iter().map(|v| 3.0 * v * v).collect();
        let r = grad_check(&x, &analytic, |p| p.iter().map(|&v| (v as f64).powi(3)).sum(), 1e-2f32);
        assert!(r.passes(1e-3), "{r:?}");
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn wrong_gradient_fails() {
        let x = [0.5f32, -1.5];
        let r = grad_check(&x, &[1.0, 1.0], |p| p.iter().map(|&v| v as f64).sum::<f64>() * 2.0, 1e-2f32);
        assert!(!r.passes(1e-3));
    }
}
