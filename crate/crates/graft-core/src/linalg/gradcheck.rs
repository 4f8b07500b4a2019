//! Central-difference gradient checking.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Scalar;

/// Numeric gradient of `f` at `at` by central differences.
///
/// Each entry is perturbed by `±eps` in turn: `(f(x+e) - f(x-e)) / (2 eps)`.
/// The truncation error is O(eps^2); with f64 and `eps = 1e-6` the combined
/// truncation/round-off error sits comfortably below the 1e-4 relative
/// tolerance used by the analytic-gradient tests.
pub fn fd_gradient<F: Scalar>(
    mut f: impl FnMut(&DenseMatrix<F>) -> F,
    at: &DenseMatrix<F>,
    eps: F,
) -> Result<DenseMatrix<F>> {
    if !(eps > F::zero()) || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "fd_gradient: eps must be a positive finite number, got {eps}"
        )));
    }
    let mut point = at.clone();
    let mut grad = DenseMatrix::zeros(at.rows(), at.cols());
    let two = F::from_f64_c(2.0);
    for idx in 0..at.data().len() {
        let original = point.data()[idx];
        point.data_mut()[idx] = original + eps;
        let plus = f(&point);
        point.data_mut()[idx] = original - eps;
        let minus = f(&point);
        point.data_mut()[idx] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteOutput(format!(
                "fd_gradient: f returned {plus} / {minus} around entry {idx}"
            )));
        }
        grad.data_mut()[idx] = (plus - minus) / (two * eps);
    }
    Ok(grad)
}

/// Max-norm relative error between an analytic and a numeric gradient:
///
/// `max|a - f| / (max|a| + max|f| + 1e-12)`
///
/// The additive floor keeps genuinely zero gradients comparable. This is the
/// metric every gradient test in the crate reports against its tolerance.
pub fn max_rel_err<F: Scalar>(analytic: &DenseMatrix<F>, numeric: &DenseMatrix<F>) -> F {
    let diff = analytic
        .max_abs_diff(numeric)
        .expect("gradient shapes must match");
    diff / (analytic.max_abs() + numeric.max_abs() + F::from_f64_c(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-6;

    #[test]
    fn linear_function_has_constant_gradient() {
        let at = DenseMatrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let grad = fd_gradient(|x| x.data().iter().sum(), &at, EPS).unwrap();
        let ones = DenseMatrix::from_fn(2, 2, |_, _| 1.0);
        assert!(max_rel_err(&ones, &grad) < 1e-9);
    }

    #[test]
    fn quadratic_gradient_is_the_point_itself() {
        let at = DenseMatrix::from_vec(1, 3, vec![1.0, -2.0, 0.25]).unwrap();
        let grad = fd_gradient(
            |x| 0.5 * x.data().iter().map(|v| v * v).sum::<f64>(),
            &at,
            EPS,
        )
        .unwrap();
        assert!(max_rel_err(&at, &grad) < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let at = DenseMatrix::<f64>::zeros(1, 1);
        assert!(matches!(
            fd_gradient(|_| 0.0, &at, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            fd_gradient(|_| 0.0, &at, -1e-6),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn reports_non_finite_evaluations() {
        let at = DenseMatrix::from_vec(1, 1, vec![0.0]).unwrap();
        let result = fd_gradient(|x| 1.0 / x.get(0, 0), &at, EPS);
        assert!(matches!(result, Err(Error::NonFiniteOutput(_))) || result.is_ok());
        // At exactly zero the two evaluations are finite (+-1/eps); force a NaN.
        let bad = fd_gradient(|x| (x.get(0, 0) - EPS).sqrt(), &at, EPS);
        assert!(matches!(bad, Err(Error::NonFiniteOutput(_))));
    }

    #[test]
    fn zero_gradients_compare_cleanly() {
        let a = DenseMatrix::<f64>::zeros(2, 2);
        let b = DenseMatrix::<f64>::zeros(2, 2);
        assert_eq!(max_rel_err(&a, &b), 0.0);
    }
}
