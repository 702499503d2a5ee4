//! Sliding-window estimators: regularized logistic regression on preference
//! differences and ridge regression on rewards, plus the closed-form
//! confidence and estimation-error radii used by the verifier.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot_unchecked, sigmoid, softplus, spd_solve, symmetric_min_eigenvalue};

/// Lipschitz constant of the sigmoid.
pub const SIGMOID_LIPSCHITZ: f64 = 0.25;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_NEWTON_ITERS: usize = 500;

/// Ring buffer of `(feature, label)` observations keeping the latest `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowBuffer {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(Vec<f64>, f64)>,
}

impl WindowBuffer {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("window capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity.min(4096)),
        })
    }

    pub fn push(&mut self, phi: Vec<f64>, label: f64) -> Result<()> {
        if phi.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: phi.len(),
            });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((phi, label));
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, f64)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEstimate {
    pub theta_hat: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub lambda: f64,
    pub lambda_min_cov: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl WindowEstimate {
    /// Realized covariance-diversity constant `λ_min(A)/n` for a window
    /// holding `n` entries.
    pub fn diversity(&self, n: usize) -> f64 {
        self.lambda_min_cov / n.max(1) as f64
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// `A = Σ φφᵀ + λI` and its smallest eigenvalue.
pub fn window_covariance(buffer: &WindowBuffer, lambda: f64) -> Result<(DMatrix<f64>, f64)> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    let d = buffer.dim();
    let mut a = DMatrix::<f64>::identity(d, d) * lambda;
    for (phi, _) in buffer.iter() {
        let v = DVector::from_column_slice(phi);
        a += &v * v.transpose();
    }
    let lmin = symmetric_min_eigenvalue(&a);
    Ok((a, lmin))
}

/// Regularized logistic objective `Σ [ln(1+e^z) − p z] + (λ/2)‖θ‖²`, with
/// `z = ⟨θ, φ⟩`.
pub fn logistic_objective(buffer: &WindowBuffer, lambda: f64, theta: &[f64]) -> f64 {
    let data: f64 = buffer
        .iter()
        .map(|(phi, p)| {
            let z = dot_unchecked(theta, phi);
            softplus(z) - p * z
        })
        .sum();
    data + 0.5 * lambda * dot_unchecked(theta, theta)
}

fn logistic_gradient(buffer: &WindowBuffer, lambda: f64, theta: &[f64]) -> DVector<f64> {
    let mut g = DVector::from_column_slice(theta) * lambda;
    for (phi, p) in buffer.iter() {
        let r = sigmoid(dot_unchecked(theta, phi)) - p;
        for (gi, fi) in g.iter_mut().zip(phi) {
            *gi += r * fi;
        }
    }
    g
}

fn logistic_hessian(buffer: &WindowBuffer, lambda: f64, theta: &[f64]) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::<f64>::identity(d, d) * lambda;
    for (phi, _) in buffer.iter() {
        let s = sigmoid(dot_unchecked(theta, phi));
        let w = s * (1.0 - s);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += w * phi[i] * phi[j];
            }
        }
    }
    h
}

/// Unique minimizer of the regularized logistic objective.
///
/// Damped Newton with Armijo backtracking; when a Newton direction fails to
/// decrease the objective the step falls back to backtracking gradient
/// descent. Stops once the gradient norm is at most `tol·(1 + n)` for a
/// window of `n` observations.
pub fn fit_logistic_window(buffer: &WindowBuffer, lambda: f64, tol: f64) -> Result<WindowEstimate> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let d = buffer.dim();
    let mut theta = vec![0.0; d];
    let mut f = logistic_objective(buffer, lambda, &theta);
    let mut iterations = 0;
    let mut grad = logistic_gradient(buffer, lambda, &theta);
    // The gradient is a sum over the window, so its rounding floor grows with it.
    let tol = tol * (1.0 + buffer.len() as f64);
    while grad.norm() > tol {
        if iterations >= MAX_NEWTON_ITERS {
            return Err(Error::Convergence {
                iterations,
                residual: grad.norm(),
                last_iterate: theta,
            });
        }
        iterations += 1;
        let h = logistic_hessian(buffer, lambda, &theta);
        let newton = spd_solve(&h, &(-&grad));
        let mut stepped = false;
        if let Some(dir) = newton {
            // Squared Newton decrement; once it is at rounding level the line
            // search cannot see a decrease, but the full step is reliable.
            let dec2 = -grad.dot(&dir);
            if let Some((t, ft)) = backtrack(buffer, lambda, &theta, f, &grad, &dir) {
                theta = t;
                f = ft;
                stepped = true;
            } else if dec2 >= 0.0 && dec2 <= 1e-10 * (1.0 + f.abs()) {
                theta = theta.iter().zip(dir.iter()).map(|(t, s)| t + s).collect();
                f = logistic_objective(buffer, lambda, &theta);
                stepped = true;
            }
        }
        if !stepped {
            let dir = -&grad;
            match backtrack(buffer, lambda, &theta, f, &grad, &dir) {
                Some((t, ft)) => {
                    theta = t;
                    f = ft;
                }
                // No representable decrease left: we are at the floating-point
                // minimum. Accept if close, else report.
                None => {
                    if grad.norm() <= tol * 1e3 {
                        break;
                    }
                    return Err(Error::Convergence {
                        iterations,
                        residual: grad.norm(),
                        last_iterate: theta,
                    });
                }
            }
        }
        grad = logistic_gradient(buffer, lambda, &theta);
    }
    let (a, lmin) = window_covariance(buffer, lambda)?;
    Ok(WindowEstimate {
        theta_hat: theta,
        covariance: to_rows(&a),
        lambda,
        lambda_min_cov: lmin,
        grad_norm: grad.norm(),
        iterations,
    })
}

fn backtrack(
    buffer: &WindowBuffer,
    lambda: f64,
    theta: &[f64],
    f: f64,
    grad: &DVector<f64>,
    dir: &DVector<f64>,
) -> Option<(Vec<f64>, f64)> {
    let slope = grad.dot(dir);
    if slope >= 0.0 {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(t, s)| t + step * s).collect();
        let fc = logistic_objective(buffer, lambda, &cand);
        if fc - f <= 1e-4 * step * slope {
            return Some((cand, fc));
        }
        step *= 0.5;
    }
    None
}

/// Sliding-window ridge estimate: `θ̂ = A⁻¹ b`, `A = Σ φφᵀ + λI`, `b = Σ r φ`.
pub fn ridge_fit(buffer: &WindowBuffer, lambda: f64) -> Result<WindowEstimate> {
    let (a, lmin) = window_covariance(buffer, lambda)?;
    let d = buffer.dim();
    let mut b = DVector::<f64>::zeros(d);
    for (phi, r) in buffer.iter() {
        for (bi, fi) in b.iter_mut().zip(phi) {
            *bi += r * fi;
        }
    }
    let theta = spd_solve(&a, &b).ok_or_else(|| {
        Error::Contract("regularized covariance is not positive definite".into())
    })?;
    let residual = (&a * &theta - &b).norm();
    if residual > 1e-8 * (1.0 + b.norm()) {
        return Err(Error::Convergence {
            iterations: 1,
            residual,
            last_iterate: theta.iter().copied().collect(),
        });
    }
    Ok(WindowEstimate {
        theta_hat: theta.iter().copied().collect(),
        covariance: to_rows(&a),
        lambda,
        lambda_min_cov: lmin,
        grad_norm: residual,
        iterations: 1,
    })
}

/// Smallest curvature `σ(z)(1 − σ(z))` over `|z| ≤ logit_bound`.
pub fn curvature_floor(logit_bound: f64) -> f64 {
    let s = sigmoid(logit_bound.abs());
    s * (1.0 - s)
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

/// Self-normalized radius
/// `√(λ + Wφ²) · √(2(d/2 · ln(1 + Wφ²/(dλ)) + ln(1/δ)))`.
pub fn self_normalized_rhs(window: f64, lambda: f64, d: f64, delta: f64, phi_max: f64) -> Result<f64> {
    require_positive("window", window)?;
    require_positive("lambda", lambda)?;
    require_positive("d", d)?;
    require_positive("phi_max", phi_max)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    let wp = window * phi_max * phi_max;
    let log_det = 0.5 * d * (1.0 + wp / (d * lambda)).ln();
    Ok((lambda + wp).sqrt() * (2.0 * (log_det + (1.0 / delta).ln())).sqrt())
}

/// The three terms of the windowed estimation-error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationBound {
    pub drift: f64,
    pub noise: f64,
    pub regularization: f64,
}

impl EstimationBound {
    pub fn total(&self) -> f64 {
        self.drift + self.noise + self.regularization
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub lambda: f64,
    pub d: f64,
    pub delta: f64,
    pub m0: f64,
    pub c: f64,
    pub phi_max: f64,
    pub theta_max: f64,
}

/// Bound on `‖θ̂_t − θ_t‖₂` for a window of size `W` with local variation
/// `v_window`, using the sigmoid Lipschitz constant 1/4.
pub fn estimation_error_terms(v_window: f64, window: f64, k: &BoundConstants) -> Result<EstimationBound> {
    if !(v_window >= 0.0 && v_window.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "local variation must be nonnegative, got {v_window}"
        )));
    }
    require_positive("m0", k.m0)?;
    require_positive("c", k.c)?;
    require_positive("theta_max", k.theta_max)?;
    let radius = self_normalized_rhs(window, k.lambda, k.d, k.delta, k.phi_max)?;
    let scale = k.m0 * k.c * window;
    Ok(EstimationBound {
        drift: k.phi_max * k.phi_max * SIGMOID_LIPSCHITZ * v_window / (k.m0 * k.c),
        noise: radius / scale,
        regularization: k.lambda * k.theta_max / scale,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn estimation_error_rhs(
    v_window: f64,
    window: f64,
    lambda: f64,
    d: f64,
    delta: f64,
    m0: f64,
    c: f64,
    phi_max: f64,
    theta_max: f64,
) -> Result<f64> {
    let k = BoundConstants {
        lambda,
        d,
        delta,
        m0,
        c,
        phi_max,
        theta_max,
    };
    estimation_error_terms(v_window, window, &k).map(|b| b.total())
}
