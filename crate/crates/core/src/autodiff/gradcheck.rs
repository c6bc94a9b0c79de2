//! Central finite-difference checks of analytic gradients.

use crate::scalar::{lit, Scalar};

use super::Tensor;

/// Relative error with denominator `max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub tensor: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst: Option<GradCheckEntry>,
    pub failures: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

/// Compares `analytic[t][e]` against a five-point central difference with
/// step `eps` for every element of every tensor in `inputs`. `f` must be a pure function of
/// the tensors it is handed.
pub fn check_gradients<T, F>(
    inputs: &mut [Tensor<T>],
    analytic: &[Vec<T>],
    eps: f64,
    tolerance: f64,
    mut f: F,
) -> GradCheckReport
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> T,
{
    assert_eq!(inputs.len(), analytic.len(), "one analytic gradient per input");
    let mut report = GradCheckReport::default();
    let h: T = lit(eps);
    #[allow(clippy::needless_range_loop)]
    for t in 0..inputs.len() {
        assert_eq!(inputs[t].len(), analytic[t].len(), "gradient length of input {t}");
        for e in 0..inputs[t].len() {
            let orig = inputs[t].data()[e];
            let mut at = |k: f64| {
                inputs[t].data_mut()[e] = orig + h * lit(k);
                f(inputs).to_f64_lossy()
            };
            let (p2, p1, m1, m2) = (at(2.0), at(1.0), at(-1.0), at(-2.0));
            inputs[t].data_mut()[e] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = analytic[t][e].to_f64_lossy();
            let entry = GradCheckEntry { tensor: t, element: e, analytic: a, numeric, rel_err: relative_error(a, numeric) };
            report.checked += 1;
            if entry.rel_err > tolerance {
                report.failures.push(entry.clone());
            }
            if report.worst.as_ref().is_none_or(|w| entry.rel_err > w.rel_err) {
                report.worst = Some(entry);
            }
        }
    }
    report
}
