//! Damped Newton ascent for weighted multinomial logistic objectives
//!
//! ```text
//! L(theta) = sum_t w_t sum_c q_tc log softmax_c(z_t . theta_c)
//! ```
//!
//! with the last class pinned at `theta_{C-1} = 0`. Both M-step
//! sub-problems have this form: the gate uses soft labels `q = r` and unit
//! weights, an expert uses one-hot labels weighted by its responsibilities.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numeric::softmax_in_place;

/// Rows per reduction chunk. Fixed so sums do not depend on thread count.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    pub max_inner: usize,
    /// Ridge added to the negative Hessian before factorization.
    pub damping: f64,
    pub line_search_shrink: f64,
    pub armijo: f64,
    pub grad_tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_inner: 50,
            damping: 1e-8,
            line_search_shrink: 0.5,
            armijo: 1e-4,
            grad_tol: 1e-8,
        }
    }
}

/// Borrowed view of one weighted soft-label problem.
pub struct SoftmaxProblem<'a> {
    /// Row-major `n x p` design.
    pub features: &'a [f64],
    pub p: usize,
    /// Row-major `n x classes` soft labels.
    pub targets: &'a [f64],
    /// Per-row weights; `None` means all ones.
    pub weights: Option<&'a [f64]>,
    pub classes: usize,
    /// Coordinates of `theta` held fixed during [`maximize`](Self::maximize).
    pub frozen: Option<&'a [bool]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub iterations: usize,
    pub accepted_steps: usize,
    pub grad_norm: f64,
    pub objective: f64,
    /// Set when no step could be accepted while the gradient was still
    /// above tolerance.
    pub stalled: bool,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    neg_hess: Option<DMatrix<f64>>,
}

impl<'a> SoftmaxProblem<'a> {
    pub fn n(&self) -> usize {
        self.features.len() / self.p
    }

    /// Number of free parameters, `(classes - 1) * p`.
    pub fn dim(&self) -> usize {
        (self.classes - 1) * self.p
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta, false, false).value
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.evaluate(theta, true, false).grad.iter().copied().collect()
    }

    fn evaluate(&self, theta: &[f64], want_grad: bool, want_hess: bool) -> Eval {
        let n = self.n();
        let m = self.dim();
        let chunks: Vec<Eval> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|ci| {
                let start = ci * CHUNK;
                self.evaluate_rows(theta, start, (start + CHUNK).min(n), want_grad, want_hess)
            })
            .collect();
        let mut total = Eval {
            value: 0.0,
            grad: DVector::zeros(if want_grad { m } else { 0 }),
            neg_hess: want_hess.then(|| DMatrix::zeros(m, m)),
        };
        for part in chunks {
            total.value += part.value;
            if want_grad {
                total.grad += part.grad;
            }
            if let (Some(h), Some(ph)) = (total.neg_hess.as_mut(), part.neg_hess) {
                *h += ph;
            }
        }
        total
    }

    fn evaluate_rows(&self, theta: &[f64], start: usize, end: usize, want_grad: bool, want_hess: bool) -> Eval {
        let (p, c_all) = (self.p, self.classes);
        let free = c_all - 1;
        let m = free * p;
        let mut value = 0.0;
        let mut grad = DVector::zeros(if want_grad { m } else { 0 });
        let mut hess = want_hess.then(|| DMatrix::zeros(m, m));
        let mut probs = vec![0.0; c_all];
        for t in start..end {
            let z = &self.features[t * p..(t + 1) * p];
            let q = &self.targets[t * c_all..(t + 1) * c_all];
            let w = self.weights.map_or(1.0, |w| w[t]);
            if w == 0.0 {
                continue;
            }
            for c in 0..free {
                probs[c] = crate::numeric::dot(z, &theta[c * p..(c + 1) * p]);
            }
            probs[free] = 0.0;
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + probs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let mut q_total = 0.0;
            for c in 0..c_all {
                if q[c] != 0.0 {
                    value += w * q[c] * (probs[c] - lse);
                }
                q_total += q[c];
            }
            if !(want_grad || want_hess) {
                continue;
            }
            softmax_in_place(&mut probs);
            if want_grad {
                for c in 0..free {
                    let coef = w * (q[c] - q_total * probs[c]);
                    for (j, zj) in z.iter().enumerate() {
                        grad[c * p + j] += coef * zj;
                    }
                }
            }
            if let Some(h) = hess.as_mut() {
                let scale = w * q_total;
                for c in 0..free {
                    for e in c..free {
                        let cov = if c == e { probs[c] * (1.0 - probs[c]) } else { -probs[c] * probs[e] };
                        let coef = scale * cov;
                        if coef == 0.0 {
                            continue;
                        }
                        for j in 0..p {
                            for l in 0..p {
                                h[(c * p + j, e * p + l)] += coef * z[j] * z[l];
                            }
                        }
                    }
                }
            }
        }
        if let Some(h) = hess.as_mut() {
            // mirror the upper block triangle
            for row in 0..m {
                for col in 0..row {
                    h[(row, col)] = h[(col, row)];
                }
            }
        }
        Eval {
            value,
            grad,
            neg_hess: hess,
        }
    }

    /// Gradient and Hessian restricted to the unfrozen coordinates; frozen
    /// rows and columns become identity so the Newton step there is zero.
    fn evaluate_masked(&self, theta: &[f64]) -> Eval {
        let mut eval = self.evaluate(theta, true, true);
        if let Some(mask) = self.frozen {
            let h = eval.neg_hess.as_mut().expect("hessian requested");
            for (j, &fixed) in mask.iter().enumerate() {
                if fixed {
                    eval.grad[j] = 0.0;
                    h.row_mut(j).fill(0.0);
                    h.column_mut(j).fill(0.0);
                    h[(j, j)] = 1.0;
                }
            }
        }
        eval
    }

    /// Maximizes the objective in place, warm-started from `theta`.
    pub fn maximize(&self, theta: &mut [f64], cfg: &NewtonConfig) -> NewtonOutcome {
        let mut current = self.evaluate_masked(theta);
        let mut outcome = NewtonOutcome {
            iterations: 0,
            accepted_steps: 0,
            grad_norm: current.grad.norm(),
            objective: current.value,
            stalled: false,
        };
        let mut trial = vec![0.0; theta.len()];
        while outcome.iterations < cfg.max_inner && outcome.grad_norm > cfg.grad_tol {
            outcome.iterations += 1;
            let neg_hess = current.neg_hess.take().expect("hessian requested");
            let Some(step) = newton_direction(neg_hess, &current.grad, cfg.damping) else {
                outcome.stalled = true;
                break;
            };
            let slope = current.grad.dot(&step);
            // Newton decrement below double-precision resolution of the
            // objective: the line search cannot see progress, so take the
            // full step only if it shrinks the gradient.
            if slope <= 1e-15 * (1.0 + current.value.abs()) {
                for (t, (th, s)) in trial.iter_mut().zip(theta.iter().zip(step.iter())) {
                    *t = th + s;
                }
                let polished = self.evaluate_masked(&trial);
                let grad_norm = polished.grad.norm();
                if polished.value.is_finite() && grad_norm < outcome.grad_norm {
                    theta.copy_from_slice(&trial);
                    outcome.accepted_steps += 1;
                    outcome.grad_norm = grad_norm;
                    outcome.objective = polished.value;
                }
                break;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-12 {
                for (t, (th, s)) in trial.iter_mut().zip(theta.iter().zip(step.iter())) {
                    *t = th + alpha * s;
                }
                let value = self.objective(&trial);
                if value.is_finite() && value >= current.value + cfg.armijo * alpha * slope {
                    accepted = Some(value);
                    break;
                }
                alpha *= cfg.line_search_shrink;
            }
            if accepted.is_none() {
                outcome.stalled = outcome.accepted_steps == 0;
                break;
            }
            theta.copy_from_slice(&trial);
            outcome.accepted_steps += 1;
            current = self.evaluate_masked(theta);
            outcome.grad_norm = current.grad.norm();
            outcome.objective = current.value;
        }
        outcome
    }
}

/// Solves `(H + damping I) step = grad` for the PSD matrix `H`, raising the
/// ridge until the Cholesky factorization succeeds.
fn newton_direction(neg_hess: DMatrix<f64>, grad: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let scale = (0..neg_hess.nrows())
        .map(|i| neg_hess[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut ridge = damping;
    for _ in 0..12 {
        let mut h = neg_hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += ridge;
        }
        if let Some(chol) = h.cholesky() {
            let step = chol.solve(grad);
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_problem() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        // three classes, features (1, x)
        let xs = [0.0, 0.1, 0.3, 0.4, 0.55, 0.6, 0.8, 0.9, 1.0, 0.25];
        let labels = [0usize, 1, 0, 2, 1, 2, 1, 0, 2, 2];
        let features: Vec<f64> = xs.iter().flat_map(|&x| [1.0, x]).collect();
        let targets: Vec<f64> = labels
            .iter()
            .flat_map(|&y| (0..3).map(move |c| if c == y { 1.0 } else { 0.0 }))
            .collect();
        let weights = vec![0.2, 1.0, 0.7, 0.4, 0.9, 1.0, 0.3, 0.6, 0.8, 0.5];
        (features, targets, weights)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (f, q, w) = toy_problem();
        let prob = SoftmaxProblem {
            features: &f,
            p: 2,
            targets: &q,
            weights: Some(&w),
            classes: 3,
            frozen: None,
        };
        let theta = [0.3, -0.7, 1.1, 0.4];
        let g = prob.gradient(&theta);
        let h = 1e-5;
        for j in 0..theta.len() {
            let mut up = theta;
            let mut dn = theta;
            up[j] += h;
            dn[j] -= h;
            let fd = (prob.objective(&up) - prob.objective(&dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-7 * (1.0 + g[j].abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn newton_reaches_a_stationary_point() {
        let (f, q, w) = toy_problem();
        let prob = SoftmaxProblem {
            features: &f,
            p: 2,
            targets: &q,
            weights: Some(&w),
            classes: 3,
            frozen: None,
        };
        let mut theta = vec![0.0; 4];
        let before = prob.objective(&theta);
        let out = prob.maximize(&mut theta, &NewtonConfig::default());
        assert!(out.objective > before);
        assert!(out.grad_norm < 1e-8, "{out:?}");
        assert!(!out.stalled);
    }

    #[test]
    fn zero_inner_iterations_leave_parameters_alone() {
        let (f, q, w) = toy_problem();
        let prob = SoftmaxProblem {
            features: &f,
            p: 2,
            targets: &q,
            weights: Some(&w),
            classes: 3,
            frozen: None,
        };
        let mut theta = vec![0.1, 0.2, 0.3, 0.4];
        let cfg = NewtonConfig {
            max_inner: 0,
            ..NewtonConfig::default()
        };
        prob.maximize(&mut theta, &cfg);
        assert_eq!(theta, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let (f, q, w) = toy_problem();
        let mask = [false, true, false, false];
        let prob = SoftmaxProblem {
            features: &f,
            p: 2,
            targets: &q,
            weights: Some(&w),
            classes: 3,
            frozen: Some(&mask),
        };
        let mut theta = vec![0.0, 0.25, 0.0, 0.0];
        let out = prob.maximize(&mut theta, &NewtonConfig::default());
        assert_eq!(theta[1], 0.25);
        assert!(out.accepted_steps > 0);
        let g = prob.gradient(&theta);
        assert!(g[0].abs() < 1e-8 && g[2].abs() < 1e-8 && g[3].abs() < 1e-8, "{out:?} {g:?}");
    }
}
