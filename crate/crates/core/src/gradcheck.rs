//! Central finite-difference gradient oracle.
//!
//! Only calls the model's loss; never the analytic backward it is checking.

use crate::tensor::DenseMatrix;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Denominator floor for entries whose true gradient is (near) zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_error: f64,
    /// `(tensor index, flat entry index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub fn entry_rel_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares `analytic[t]` against central differences of `loss` taken over
/// every entry of every tensor returned by `params`.
pub fn check_gradients<T, P, L>(
    model: &T,
    mut params: P,
    loss: L,
    analytic: &[DenseMatrix],
    step: f64,
) -> GradCheckReport
where
    T: Clone,
    P: FnMut(&mut T) -> Vec<&mut DenseMatrix>,
    L: Fn(&T) -> f64,
{
    let mut probe = model.clone();
    let shapes: Vec<(usize, usize)> = params(&mut probe).iter().map(|p| p.shape()).collect();
    assert_eq!(shapes.len(), analytic.len(), "gradient tensor count");
    for (s, a) in shapes.iter().zip(analytic) {
        assert_eq!(*s, a.shape(), "gradient shape");
    }

    let mut report = GradCheckReport {
        entries: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for (t, &(rows, cols)) in shapes.iter().enumerate() {
        for e in 0..rows * cols {
            let original = params(&mut probe)[t].data()[e];
            params(&mut probe)[t].data_mut()[e] = original + step;
            let plus = loss(&probe);
            params(&mut probe)[t].data_mut()[e] = original - step;
            let minus = loss(&probe);
            params(&mut probe)[t].data_mut()[e] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[t].data()[e];
            let err = entry_rel_error(a, numeric);
            report.entries += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((t, e, a, numeric));
            }
        }
    }
    report
}

/// `Σ upstream ⊙ h`, the scalar whose gradient w.r.t. `h` is `upstream`.
pub fn contraction(upstream: &DenseMatrix, h: &DenseMatrix) -> f64 {
    assert_eq!(upstream.shape(), h.shape());
    upstream.data().iter().zip(h.data()).map(|(g, v)| g * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Quad(DenseMatrix);

    #[test]
    fn quadratic_gradient() {
        // L = Σ w², dL/dw = 2w
        let w = DenseMatrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]);
        let model = Quad(w.clone());
        let analytic = vec![w.scale(2.0)];
        let report = check_gradients(
            &model,
            |m: &mut Quad| vec![&mut m.0],
            |m| m.0.data().iter().map(|v| v * v).sum(),
            &analytic,
            DEFAULT_STEP,
        );
        assert_eq!(report.entries, 4);
        assert!(report.passes(1e-8), "{report:?}");
    }

    #[test]
    fn wrong_gradient_detected() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0]]);
        let analytic = vec![w.scale(3.0)];
        let report = check_gradients(
            &Quad(w),
            |m: &mut Quad| vec![&mut m.0],
            |m| m.0.data().iter().map(|v| v * v).sum(),
            &analytic,
            DEFAULT_STEP,
        );
        assert!(!report.passes(DEFAULT_TOLERANCE));
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(entry_rel_error(0.0, 0.0), 0.0);
        assert!((entry_rel_error(1e-9, 0.0) - 1e-5).abs() < 1e-12);
        assert!((entry_rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
