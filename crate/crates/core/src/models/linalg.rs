//! Tiny dense solver for the Newton steps: Cholesky on symmetric
//! positive-definite systems of model-coefficient size.

use crate::scalar::Real;

/// Solve `a * x = b` for symmetric positive-definite `a` (row-major, d x d).
/// Returns `None` when the factorization hits a non-positive pivot.
pub fn solve_spd<T: Real>(a: &[T], b: &[T], d: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(b.len(), d);
    // Lower-triangular factor, row-major.
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s = s - l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= T::zero() {
                    return None;
                }
                l[i * d + j] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    // Forward solve L y = b.
    let mut y = vec![T::zero(); d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[i * d + k] * y[k];
        }
        y[i] = s / l[i * d + i];
    }
    // Back solve L^T x = y.
    let mut x = vec![T::zero(); d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in (i + 1)..d {
            s = s - l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    Some(x)
}
