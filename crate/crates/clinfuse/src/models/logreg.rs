//! L2-regularized logistic regression minimized by damped Newton steps
//! to a 1e-6 gradient-norm tolerance. Full-batch and deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_shapes, sigmoid, ModelError};

const GRAD_TOL: f64 = 1e-6;
const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub c: f64,
}

impl LogRegModel {
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let z: f64 =
            self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + self.intercept;
        sigmoid(z)
    }

    /// L2 norm of the objective gradient at the stored parameters.
    pub fn gradient_norm(&self, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        let (grad, _) = gradient(&self.weights, self.intercept, rows, labels, self.c);
        grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Objective: mean log-loss plus `||w||^2 / (2 C n)`; the intercept is
/// not penalized, so `C -> 0` drives weights to zero and the intercept to
/// the base-rate log-odds.
fn objective(weights: &[f64], intercept: f64, rows: &[Vec<f64>], labels: &[u8], c: f64) -> f64 {
    let n = rows.len() as f64;
    let lambda = 1.0 / (c * n);
    let mut loss = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        let z: f64 = weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + intercept;
        let margin = if y == 1 { z } else { -z };
        // ln(1 + e^(-margin)), stable for large |margin|.
        loss += if margin > 0.0 {
            (-margin).exp().ln_1p()
        } else {
            -margin + margin.exp().ln_1p()
        };
    }
    loss / n + 0.5 * lambda * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient over `[w..., b]` plus per-sample probabilities.
fn gradient(
    weights: &[f64],
    intercept: f64,
    rows: &[Vec<f64>],
    labels: &[u8],
    c: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = weights.len();
    let lambda = 1.0 / (c * n);
    let mut grad = vec![0.0; d + 1];
    let mut probs = Vec::with_capacity(rows.len());
    for (row, &y) in rows.iter().zip(labels) {
        let z: f64 = weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>() + intercept;
        let p = sigmoid(z);
        probs.push(p);
        let residual = (p - y as f64) / n;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += residual * x;
        }
        grad[d] += residual;
    }
    for (g, w) in grad.iter_mut().zip(weights) {
        *g += lambda * w;
    }
    (grad, probs)
}

/// Train by Newton iterations with Armijo backtracking; stops when the
/// gradient norm falls to 1e-6. The `_seed` argument exists for trainer
/// interface uniformity; the method has no random state.
pub fn train_logreg(
    rows: &[Vec<f64>],
    labels: &[u8],
    c: f64,
    _seed: u64,
) -> Result<LogRegModel, ModelError> {
    check_shapes(rows, labels)?;
    let d = rows[0].len();
    let n = rows.len() as f64;
    let lambda = 1.0 / (c * n);
    let mut weights = vec![0.0; d];
    let mut intercept = 0.0;

    for _ in 0..MAX_ITERATIONS {
        let (grad, probs) = gradient(&weights, intercept, rows, labels, c);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= GRAD_TOL {
            break;
        }

        // Hessian over [w..., b]: X^T S X / n with lambda on the weight
        // diagonal; a small ridge keeps the solve well-posed.
        let mut hessian = DMatrix::<f64>::zeros(d + 1, d + 1);
        for (row, &p) in rows.iter().zip(&probs) {
            let s = (p * (1.0 - p)).max(1e-12) / n;
            for i in 0..d {
                for j in i..d {
                    hessian[(i, j)] += s * row[i] * row[j];
                }
                hessian[(i, d)] += s * row[i];
            }
            hessian[(d, d)] += s;
        }
        for i in 0..d {
            hessian[(i, i)] += lambda + 1e-12;
        }
        hessian[(d, d)] += 1e-12;
        hessian.fill_lower_triangle_with_upper_triangle();

        let grad_vec = DVector::from_column_slice(&grad);
        let step = match hessian.clone().cholesky() {
            Some(chol) => chol.solve(&grad_vec),
            None => grad_vec.clone(), // gradient step fallback
        };

        // Backtracking line search on the full objective.
        let base = objective(&weights, intercept, rows, labels, c);
        let directional: f64 = grad_vec.dot(&step);
        let mut alpha = 1.0;
        loop {
            let trial_w: Vec<f64> =
                weights.iter().zip(step.iter()).map(|(w, s)| w - alpha * s).collect();
            let trial_b = intercept - alpha * step[d];
            let trial = objective(&trial_w, trial_b, rows, labels, c);
            if trial <= base - 1e-4 * alpha * directional || alpha < 1e-10 {
                weights = trial_w;
                intercept = trial_b;
                break;
            }
            alpha *= 0.5;
        }
    }
    Ok(LogRegModel { weights, intercept, c })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            rows.push(vec![i as f64 * 0.1, 1.0]);
            labels.push(0);
            rows.push(vec![3.0 + i as f64 * 0.1, -1.0]);
            labels.push(1);
        }
        (rows, labels)
    }

    #[test]
    fn separable_data_trains_to_perfect_accuracy() {
        let (rows, labels) = separable();
        let model = train_logreg(&rows, &labels, 10.0, 0).unwrap();
        let correct = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &y)| u8::from(model.predict_proba(r) >= 0.5) == y)
            .count();
        assert_eq!(correct, rows.len());
    }

    #[test]
    fn strong_penalty_recovers_base_rate_intercept() {
        // Closed-form oracle: with weights forced to zero the optimal
        // intercept is the log-odds of the base rate.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            rows.push(vec![(i % 17) as f64, (i % 5) as f64]);
            labels.push(u8::from(i % 4 == 0)); // base rate 0.25
        }
        let model = train_logreg(&rows, &labels, 1e-9, 0).unwrap();
        let weight_norm: f64 = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(weight_norm < 1e-4, "weights {:?}", model.weights);
        let base_rate = 0.25;
        let oracle = (base_rate / (1.0 - base_rate)).ln();
        assert!((model.intercept - oracle).abs() < 1e-3, "{} vs {oracle}", model.intercept);
    }

    #[test]
    fn gradient_norm_at_optimum_meets_tolerance() {
        let (rows, labels) = separable();
        let model = train_logreg(&rows, &labels, 1.0, 0).unwrap();
        assert!(model.gradient_norm(&rows, &labels) <= 1e-6);
    }

    #[test]
    fn zero_weight_model_outputs_sigmoid_intercept() {
        let model = LogRegModel { weights: vec![0.0, 0.0], intercept: -0.3, c: 1.0 };
        for row in [[0.0, 0.0], [5.0, -2.0], [100.0, 3.0]] {
            assert!((model.predict_proba(&row) - sigmoid(-0.3)).abs() < 1e-15);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(matches!(train_logreg(&rows, &[1, 1], 1.0, 0), Err(ModelError::SingleClass)));
    }
}
