//! Zero-inflated Poisson regression fit by EM, plus the plain Poisson fit it
//! nests.
//!
//! The zero state is intercept-only: a constant mixing probability `pi` of
//! producing a structural zero, otherwise Poisson with rate
//! `lambda_i = exp(x_i . beta)`. The E-step assigns each observed zero the
//! responsibility `pi / (pi + (1 - pi) e^{-lambda_i})`; the M-step updates
//! `pi` to the mean responsibility and `beta` by weighted-Poisson Newton
//! steps. Newton steps are only accepted when they do not decrease the
//! weighted objective, which makes the EM a generalized EM and keeps the
//! observed-data log-likelihood monotone.

use super::ModelError;
use crate::models::linalg::solve_spd;
use crate::models::matrix::FeatureMatrix;
use crate::scalar::Real;

const PI_FLOOR: f64 = 1e-12;
const NEWTON_MAX: usize = 50;
const NEWTON_STEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ZipModel<T = crate::Scalar> {
    /// Zero-state probability, strictly inside (0, 1).
    pub pi: T,
    /// Poisson coefficients; `coef[0]` is the intercept.
    pub coef: Vec<T>,
}

impl<T: Real> ZipModel<T> {
    pub fn rate(&self, row: &[T]) -> T {
        linear_score(&self.coef, row).exp()
    }

    /// Exceedance probability P(y >= 1) = (1 - pi)(1 - e^{-lambda}).
    pub fn proba(&self, row: &[T]) -> T {
        (T::one() - self.pi) * (T::one() - (-self.rate(row)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions<T> {
    /// Absolute log-likelihood change stopping tolerance.
    pub tol: T,
    pub max_rounds: usize,
}

impl<T: Real> Default for EmOptions<T> {
    fn default() -> Self {
        EmOptions {
            tol: T::of(1e-8),
            max_rounds: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmReport<T> {
    pub rounds: usize,
    /// Observed-data log-likelihood after every round, starting at the
    /// initial value.
    pub loglik_trace: Vec<T>,
}

fn linear_score<T: Real>(coef: &[T], row: &[T]) -> T {
    let mut z = coef[0];
    for (&c, &v) in coef[1..].iter().zip(row) {
        z = z + c * v;
    }
    z
}

/// ln(y!) as a running sum; exact for the small counts cells carry.
fn ln_factorial<T: Real>(y: u32) -> T {
    let mut acc = T::zero();
    for k in 2..=y {
        acc = acc + T::of_usize(k as usize).ln();
    }
    acc
}

/// Observed-data log-likelihood of a ZIP model.
pub fn zip_loglik<T: Real>(x: &FeatureMatrix<T>, y: &[u32], pi: T, coef: &[T]) -> T {
    let mut total = T::zero();
    for i in 0..x.n {
        let s = linear_score(coef, x.row(i));
        let lambda = s.exp();
        if y[i] == 0 {
            total = total + (pi + (T::one() - pi) * (-lambda).exp()).ln();
        } else {
            let yi = T::of_usize(y[i] as usize);
            total = total + (T::one() - pi).ln() + yi * s - lambda - ln_factorial(y[i]);
        }
    }
    total
}

/// Plain Poisson log-likelihood (the pi = 0 limit of [`zip_loglik`]).
pub fn poisson_loglik<T: Real>(x: &FeatureMatrix<T>, y: &[u32], coef: &[T]) -> T {
    let mut total = T::zero();
    for i in 0..x.n {
        let s = linear_score(coef, x.row(i));
        let yi = T::of_usize(y[i] as usize);
        total = total + yi * s - s.exp() - ln_factorial(y[i]);
    }
    total
}

/// Weighted Poisson objective sum w_i (y_i s_i - lambda_i); constants in y!
/// drop out of the inner maximization.
fn weighted_poisson_objective<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u32],
    w: &[T],
    coef: &[T],
) -> T {
    let mut total = T::zero();
    for i in 0..x.n {
        let s = linear_score(coef, x.row(i));
        let yi = T::of_usize(y[i] as usize);
        total = total + w[i] * (yi * s - s.exp());
    }
    total
}

/// Newton ascent on the weighted Poisson log-likelihood, with step halving so
/// the objective never decreases. Mutates `coef` in place.
fn newton_weighted_poisson<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u32],
    w: &[T],
    coef: &mut Vec<T>,
) -> Result<(), ModelError> {
    let d = coef.len();
    let mut obj = weighted_poisson_objective(x, y, w, coef);
    for iter in 0..NEWTON_MAX {
        if !obj.is_finite() {
            return Err(ModelError::Divergence { iteration: iter });
        }
        let mut grad = vec![T::zero(); d];
        let mut hess = vec![T::zero(); d * d];
        for i in 0..x.n {
            let row = x.row(i);
            let s = linear_score(coef, row);
            let lambda = s.exp();
            let yi = T::of_usize(y[i] as usize);
            let gw = w[i] * (yi - lambda);
            let hw = w[i] * lambda;
            grad[0] = grad[0] + gw;
            hess[0] = hess[0] + hw;
            for a in 0..row.len() {
                grad[a + 1] = grad[a + 1] + gw * row[a];
                let ha = hw * row[a];
                hess[a + 1] = hess[a + 1] + ha;
                for b in 0..=a {
                    hess[(a + 1) * d + (b + 1)] = hess[(a + 1) * d + (b + 1)] + ha * row[b];
                }
            }
        }
        // Mirror the lower triangle (row 0 column already accumulated).
        for a in 0..d {
            for b in (a + 1)..d {
                hess[a * d + b] = hess[b * d + a];
            }
        }
        let Some(delta) = solve_spd(&hess, &grad, d) else {
            break; // Hessian not positive definite at negligible curvature.
        };
        let max_step = delta.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if max_step < T::of(NEWTON_STEP_TOL) {
            break;
        }
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<T> = coef
                .iter()
                .zip(&delta)
                .map(|(&c, &dv)| c + t * dv)
                .collect();
            let cand_obj = weighted_poisson_objective(x, y, w, &cand);
            if cand_obj.is_finite() && cand_obj >= obj {
                *coef = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            t = t / T::of(2.0);
        }
        if !accepted || max_step * t < T::of(NEWTON_STEP_TOL) {
            break;
        }
    }
    Ok(())
}

/// Fit the ZIP model by EM. Counts must include at least one zero and one
/// positive observation.
pub fn fit_zip<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u32],
    opts: &EmOptions<T>,
) -> Result<(ZipModel<T>, EmReport<T>), ModelError> {
    assert_eq!(x.n, y.len(), "counts must match rows");
    let zeros = y.iter().filter(|&&v| v == 0).count();
    if zeros == 0 || zeros == y.len() {
        return Err(ModelError::SingleClass {
            positives: y.len() - zeros,
            total: y.len(),
        });
    }

    let mean_y =
        y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
    let mut coef = vec![T::zero(); x.d + 1];
    coef[0] = T::of(mean_y.max(1e-3)).ln();
    let mut pi = T::of((zeros as f64 / y.len() as f64 * 0.5).clamp(1e-3, 1.0 - 1e-3));

    let mut loglik = zip_loglik(x, y, pi, &coef);
    let mut trace = vec![loglik];
    let mut rounds = 0;

    let mut resp = vec![T::zero(); x.n];
    let mut weights = vec![T::one(); x.n];
    for round in 0..opts.max_rounds {
        if !loglik.is_finite() {
            return Err(ModelError::Divergence { iteration: round });
        }
        // E-step: responsibility of the zero state for observed zeros.
        for i in 0..x.n {
            resp[i] = if y[i] == 0 {
                let lambda = linear_score(&coef, x.row(i)).exp();
                pi / (pi + (T::one() - pi) * (-lambda).exp())
            } else {
                T::zero()
            };
            weights[i] = T::one() - resp[i];
        }
        // M-step: closed-form pi, Newton for beta.
        let mean_resp = resp.iter().copied().sum::<T>() / T::of_usize(x.n);
        pi = mean_resp.max(T::of(PI_FLOOR)).min(T::of(1.0 - PI_FLOOR));
        newton_weighted_poisson(x, y, &weights, &mut coef)?;

        let new_loglik = zip_loglik(x, y, pi, &coef);
        rounds = round + 1;
        let change = (new_loglik - loglik).abs();
        loglik = new_loglik;
        trace.push(loglik);
        if change < opts.tol {
            break;
        }
    }

    Ok((
        ZipModel { pi, coef },
        EmReport {
            rounds,
            loglik_trace: trace,
        },
    ))
}

/// Plain Poisson regression by unweighted Newton; returns coefficients and
/// the fitted log-likelihood.
pub fn fit_poisson<T: Real>(
    x: &FeatureMatrix<T>,
    y: &[u32],
) -> Result<(Vec<T>, T), ModelError> {
    assert_eq!(x.n, y.len(), "counts must match rows");
    let mean_y =
        y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64;
    let mut coef = vec![T::zero(); x.d + 1];
    coef[0] = T::of(mean_y.max(1e-3)).ln();
    let weights = vec![T::one(); x.n];
    newton_weighted_poisson(x, y, &weights, &mut coef)?;
    let ll = poisson_loglik(x, y, &coef);
    Ok((coef, ll))
}
