//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates the function being differentiated, so it
//! is independent of the backward rules it is used to validate.

pub const DEFAULT_STEP: f64 = 1e-6;

/// Gradients smaller than this are compared in absolute rather than
/// relative terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_difference<F>(f: &mut F, x: &[f64], index: usize, step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    probe[index] = x[index] + step;
    let plus = f(&probe);
    probe[index] = x[index] - step;
    let minus = f(&probe);
    (plus - minus) / (2.0 * step)
}

/// Compares `analytic` against central differences of `f` at `x`, over
/// `indices` (or every coordinate when `None`).
pub fn check_gradient<F>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    indices: Option<&[usize]>,
) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in indices {
        let numeric = central_difference(&mut f, x, i, step);
        let err = relative_error(analytic[i], numeric);
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient() {
        let f = |x: &[f64]| x[0] * x[0] * x[1] + x[1].powi(3);
        let x = [0.7, -1.3];
        let analytic = [2.0 * x[0] * x[1], x[0] * x[0] + 3.0 * x[1] * x[1]];
        let r = check_gradient(f, &x, &analytic, DEFAULT_STEP, None);
        assert_eq!(r.checked, 2);
        assert!(r.passes(1e-8), "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0].sin();
        let r = check_gradient(f, &[0.4], &[0.4_f64.sin()], DEFAULT_STEP, None);
        assert!(!r.passes(1e-4));
    }
}
