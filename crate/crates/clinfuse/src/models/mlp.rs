//! Feed-forward network (ReLU hidden layers, sigmoid output) trained by
//! mini-batch gradient descent on the weighted binary cross-entropy
//! `-(1/N) sum [w1 y ln p + w0 (1-y) ln(1-p)]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_shapes, sigmoid, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Negative / positive class weights; `None` means inverse-frequency
    /// `w1 = N/(2 N_pos)`, `w0 = N/(2 N_neg)`.
    pub w0: Option<f64>,
    pub w1: Option<f64>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![32],
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 32,
            w0: None,
            w1: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `out x in` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MLPModel {
    pub layers: Vec<Layer>,
    pub w0: f64,
    pub w1: f64,
    pub config: MlpConfig,
}

const PROB_CLIP: f64 = 1e-12;

/// Weighted BCE for one prediction, probabilities clipped away from 0/1.
pub fn wbce_loss(y: u8, p: f64, w0: f64, w1: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(w1 * y as f64 * p.ln() + w0 * (1.0 - y as f64) * (1.0 - p).ln())
}

impl MLPModel {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weights[0].len()
    }

    fn forward_trace(&self, row: &[f64]) -> (Vec<Vec<f64>>, f64) {
        // activations[l] is the input of layer l; last entry is the
        // final hidden activation feeding the output unit.
        let mut activations = vec![row.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let mut z: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.bias)
                .map(|(w, b)| w.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
                .collect();
            if l < last {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
                activations.push(z);
            } else {
                return (activations, sigmoid(z[0]));
            }
        }
        unreachable!("network has at least one layer")
    }

    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        self.forward_trace(row).1
    }

    /// Mean weighted BCE over a dataset.
    pub fn loss_on(&self, rows: &[Vec<f64>], labels: &[u8]) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(x, &y)| wbce_loss(y, self.predict_proba(x), self.w0, self.w1))
            .sum();
        total / rows.len() as f64
    }

    /// Backpropagated gradients of the single-sample weighted BCE, shaped
    /// like the layers.
    pub fn gradients_on(&self, row: &[f64], y: u8) -> Vec<Layer> {
        let (activations, p) = self.forward_trace(row);
        let p_clipped = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        // dL/dz at the sigmoid output for weighted BCE.
        let mut delta =
            vec![self.w1 * y as f64 * (p_clipped - 1.0) + self.w0 * (1.0 - y as f64) * p_clipped];

        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|layer| Layer {
                weights: layer.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
                bias: vec![0.0; layer.bias.len()],
            })
            .collect();

        for l in (0..self.layers.len()).rev() {
            let input = &activations[l];
            for (j, &d) in delta.iter().enumerate() {
                grads[l].bias[j] = d;
                for (gi, xi) in grads[l].weights[j].iter_mut().zip(input) {
                    *gi = d * xi;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through the ReLU of the previous layer.
            let prev_out = &activations[l];
            let mut next_delta = vec![0.0; prev_out.len()];
            for (j, &d) in delta.iter().enumerate() {
                for (i, nd) in next_delta.iter_mut().enumerate() {
                    *nd += d * self.layers[l].weights[j][i];
                }
            }
            for (nd, &a) in next_delta.iter_mut().zip(prev_out) {
                if a <= 0.0 {
                    *nd = 0.0;
                }
            }
            delta = next_delta;
        }
        grads
    }
}

fn xavier_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> f64 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (rng.gen::<f64>() * 2.0 - 1.0) * bound
}

/// Build a seeded network without training (epoch 0 state).
pub fn init_mlp(input_dim: usize, config: &MlpConfig, w0: f64, w1: f64) -> MLPModel {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sizes = vec![input_dim];
    sizes.extend(&config.hidden);
    sizes.push(1);
    let layers: Vec<Layer> = sizes
        .windows(2)
        .map(|pair| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            Layer {
                weights: (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| xavier_init(&mut rng, fan_in, fan_out)).collect())
                    .collect(),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    MLPModel { layers, w0, w1, config: config.clone() }
}

/// Train with seeded shuffling and initialization; per-epoch loss is
/// logged and non-finite loss aborts with `Diverged`.
pub fn train_mlp(
    rows: &[Vec<f64>],
    labels: &[u8],
    config: &MlpConfig,
) -> Result<MLPModel, ModelError> {
    check_shapes(rows, labels)?;
    let n = rows.len();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = n - n_pos;
    let w1 = config.w1.unwrap_or(n as f64 / (2.0 * n_pos as f64));
    let w0 = config.w0.unwrap_or(n as f64 / (2.0 * n_neg as f64));

    let mut model = init_mlp(rows[0].len(), config, w0, w1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let mut batch_grads: Option<Vec<Layer>> = None;
            for &i in batch {
                let grads = model.gradients_on(&rows[i], labels[i]);
                match &mut batch_grads {
                    None => batch_grads = Some(grads),
                    Some(acc) => {
                        for (al, gl) in acc.iter_mut().zip(&grads) {
                            for (aw, gw) in al.weights.iter_mut().zip(&gl.weights) {
                                for (a, g) in aw.iter_mut().zip(gw) {
                                    *a += g;
                                }
                            }
                            for (ab, gb) in al.bias.iter_mut().zip(&gl.bias) {
                                *ab += gb;
                            }
                        }
                    }
                }
            }
            let scale = config.learning_rate / batch.len() as f64;
            let grads = batch_grads.expect("non-empty batch");
            for (layer, grad) in model.layers.iter_mut().zip(&grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&grad.weights) {
                    for (wi, gi) in w.iter_mut().zip(gw) {
                        *wi -= scale * gi;
                    }
                }
                for (b, gb) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= scale * gb;
                }
            }
        }
        let loss = model.loss_on(rows, labels);
        log::debug!("mlp epoch {}/{}: wbce {:.6}", epoch + 1, config.epochs, loss);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_wbce_fixture() {
        // Direct evaluation of the loss formula: y=1, p=0.5, w1=2, N=1
        // gives 2 ln 2.
        let loss = wbce_loss(1, 0.5, 1.0, 2.0);
        assert!((loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn unit_weights_reduce_to_plain_bce() {
        for (y, p) in [(1u8, 0.7), (0u8, 0.2), (1u8, 0.01)] {
            let weighted = wbce_loss(y, p, 1.0, 1.0);
            let plain = -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln());
            assert!((weighted - plain).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_positive_unless_perfect() {
        assert!(wbce_loss(1, 0.999, 1.0, 1.0) > 0.0);
        assert!(wbce_loss(0, 0.001, 1.0, 1.0) > 0.0);
    }

    fn toy_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..150 {
            let y = u8::from(rng.gen::<f64>() < 0.35);
            rows.push(vec![
                y as f64 * 1.4 + rng.gen::<f64>() * 0.8,
                rng.gen::<f64>(),
                -(y as f64) + rng.gen::<f64>(),
            ]);
            labels.push(y);
        }
        (rows, labels)
    }

    #[test]
    fn training_reduces_loss_on_fixture() {
        let (rows, labels) = toy_problem(6);
        let config = MlpConfig { hidden: vec![8], epochs: 25, seed: 2, ..Default::default() };
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let w1 = rows.len() as f64 / (2.0 * n_pos as f64);
        let w0 = rows.len() as f64 / (2.0 * (rows.len() - n_pos) as f64);
        let initial = init_mlp(rows[0].len(), &config, w0, w1).loss_on(&rows, &labels);
        let trained = train_mlp(&rows, &labels, &config).unwrap();
        let final_loss = trained.loss_on(&rows, &labels);
        assert!(final_loss < initial, "{final_loss} !< {initial}");
    }

    #[test]
    fn training_is_deterministic() {
        let (rows, labels) = toy_problem(7);
        let config = MlpConfig { hidden: vec![6], epochs: 5, seed: 11, ..Default::default() };
        let a = train_mlp(&rows, &labels, &config).unwrap();
        let b = train_mlp(&rows, &labels, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for trial in 0..10 {
            let config = MlpConfig {
                hidden: vec![4, 3],
                seed: 100 + trial,
                ..Default::default()
            };
            let mut model = init_mlp(5, &config, 0.7, 1.8);
            // Perturb biases so ReLU kinks are unlikely at the probe point.
            for layer in model.layers.iter_mut() {
                for b in layer.bias.iter_mut() {
                    *b = rng.gen::<f64>() * 0.2 + 0.05;
                }
            }
            let x: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y = u8::from(trial % 2 == 0);
            let grads = model.gradients_on(&x, y);

            let h = 1e-6;
            for l in 0..model.layers.len() {
                for j in 0..model.layers[l].weights.len() {
                    for i in 0..model.layers[l].weights[j].len() {
                        let mut plus = model.clone();
                        plus.layers[l].weights[j][i] += h;
                        let mut minus = model.clone();
                        minus.layers[l].weights[j][i] -= h;
                        let numeric = (wbce_loss(y, plus.predict_proba(&x), 0.7, 1.8)
                            - wbce_loss(y, minus.predict_proba(&x), 0.7, 1.8))
                            / (2.0 * h);
                        let analytic = grads[l].weights[j][i];
                        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                        assert!(
                            ((analytic - numeric) / denom).abs() <= 1e-4,
                            "layer {l} w[{j}][{i}]: {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn epoch_zero_returns_seeded_init() {
        let (rows, labels) = toy_problem(8);
        let config = MlpConfig { hidden: vec![4], epochs: 0, seed: 3, ..Default::default() };
        let trained = train_mlp(&rows, &labels, &config).unwrap();
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        let w1 = rows.len() as f64 / (2.0 * n_pos as f64);
        let w0 = rows.len() as f64 / (2.0 * (rows.len() - n_pos) as f64);
        let init = init_mlp(rows[0].len(), &config, w0, w1);
        assert_eq!(trained, init);
    }
}
