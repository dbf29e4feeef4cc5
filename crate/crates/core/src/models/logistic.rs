//! L2-penalized logistic regression fit by full-batch gradient descent with
//! backtracking line search.
//!
//! The objective is the mean negative log-likelihood plus `lambda * |w|^2`
//! with the intercept unpenalized. Armijo backtracking guarantees the loss
//! trace is non-increasing.

use super::ModelError;
use crate::models::matrix::FeatureMatrix;
use crate::scalar::Real;

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T = crate::Scalar> {
    pub intercept: T,
    pub weights: Vec<T>,
}

impl<T: Real> LogisticModel<T> {
    /// Probability of the positive class for one (standardized) feature row.
    pub fn proba(&self, row: &[T]) -> T {
        sigmoid(self.score(row))
    }

    pub fn score(&self, row: &[T]) -> T {
        let mut z = self.intercept;
        for (&w, &v) in self.weights.iter().zip(row) {
            z = z + w * v;
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOptions<T> {
    pub l2: T,
    /// Relative loss-change stopping tolerance.
    pub tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for GdOptions<T> {
    fn default() -> Self {
        GdOptions {
            l2: T::of(1e-4),
            tol: T::of(1e-8),
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GdReport<T> {
    pub iterations: usize,
    /// Penalized loss after every accepted step, starting at the initial loss.
    pub loss_trace: Vec<T>,
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + e^z), computed without overflow.
fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Mean NLL + lambda * sum(weights^2); the intercept is unpenalized.
pub fn penalized_loss<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u8],
    intercept: T,
    weights: &[T],
    l2: T,
) -> T {
    let n = T::of_usize(x.n);
    let mut total = T::zero();
    for i in 0..x.n {
        let mut z = intercept;
        for (&w, &v) in weights.iter().zip(x.row(i)) {
            z = z + w * v;
        }
        let yi = if y[i] != 0 { T::one() } else { T::zero() };
        total = total + softplus(z) - yi * z;
    }
    let penalty: T = weights.iter().map(|&w| w * w).sum();
    total / n + l2 * penalty
}

/// Analytic gradient of [`penalized_loss`]: (d/d intercept, d/d weights).
pub fn penalized_grad<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u8],
    intercept: T,
    weights: &[T],
    l2: T,
) -> (T, Vec<T>) {
    let n = T::of_usize(x.n);
    let mut g0 = T::zero();
    let mut g = vec![T::zero(); weights.len()];
    for i in 0..x.n {
        let row = x.row(i);
        let mut z = intercept;
        for (&w, &v) in weights.iter().zip(row) {
            z = z + w * v;
        }
        let yi = if y[i] != 0 { T::one() } else { T::zero() };
        let resid = sigmoid(z) - yi;
        g0 = g0 + resid;
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = *gj + resid * v;
        }
    }
    g0 = g0 / n;
    let two = T::of(2.0);
    for (gj, &w) in g.iter_mut().zip(weights) {
        *gj = *gj / n + two * l2 * w;
    }
    (g0, g)
}

/// Fit from a zero initialization. Requires both classes present.
pub fn fit_logistic<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u8],
    opts: &GdOptions<T>,
) -> Result<(LogisticModel<T>, GdReport<T>), ModelError> {
    assert_eq!(x.n, y.len(), "labels must match rows");
    let pos = y.iter().filter(|&&v| v != 0).count();
    if pos == 0 || pos == y.len() {
        return Err(ModelError::SingleClass {
            positives: pos,
            total: y.len(),
        });
    }

    let mut intercept = T::zero();
    let mut weights = vec![T::zero(); x.d];
    let mut loss = penalized_loss(x, y, intercept, weights.as_slice(), opts.l2);
    let mut trace = vec![loss];
    let mut step = T::one();
    let mut iterations = 0;

    for iter in 0..opts.max_iters {
        if !loss.is_finite() {
            return Err(ModelError::Divergence { iteration: iter });
        }
        let (g0, g) = penalized_grad(x, y, intercept, &weights, opts.l2);
        let g2 = g0 * g0 + g.iter().map(|&v| v * v).sum::<T>();
        if g2 == T::zero() {
            break;
        }
        step = (step * T::of(2.0)).min(T::of(1e8));
        let c = T::of(ARMIJO_C);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand_i = intercept - step * g0;
            let cand_w: Vec<T> = weights.iter().zip(&g).map(|(&w, &gj)| w - step * gj).collect();
            let cand_loss = penalized_loss(x, y, cand_i, &cand_w, opts.l2);
            if cand_loss.is_finite() && cand_loss <= loss - c * step * g2 {
                accepted = Some((cand_i, cand_w, cand_loss));
                break;
            }
            step = step / T::of(2.0);
        }
        let Some((new_i, new_w, new_loss)) = accepted else {
            break; // No productive step remains at this scale.
        };
        iterations = iter + 1;
        let rel = (loss - new_loss) / loss.abs().max(T::of(f64::MIN_POSITIVE));
        intercept = new_i;
        weights = new_w;
        loss = new_loss;
        trace.push(loss);
        if rel < opts.tol {
            break;
        }
    }

    Ok((
        LogisticModel { intercept, weights },
        GdReport {
            iterations,
            loss_trace: trace,
        },
    ))
}
