//! Linear and one-hidden-layer ReLU regressors trained by mini-batch SGD on
//! the loss `½·mean((ŷ - y)²)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            epochs: 200,
        }
    }
}

/// Runs `epochs` passes over shuffled mini-batches, calling `step` with the
/// batch indices.
fn for_each_batch(n: usize, config: &SgdConfig, rng: &mut ChaCha8Rng, mut step: impl FnMut(&[usize])) {
    let mut order: Vec<usize> = (0..n).collect();
    let batch = config.batch_size.max(1);
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            step(chunk);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Starts from zero weights.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], config: &SgdConfig, seed: u64) -> Self {
        let dim = xs.first().map_or(0, Vec::len);
        let mut model = Self::zeros(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grad = vec![0.0; dim];
        for_each_batch(xs.len(), config, &mut rng, |batch| {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_bias = 0.0;
            for &i in batch {
                let r = model.predict(&xs[i]) - ys[i];
                grad_bias += r;
                for (g, v) in grad.iter_mut().zip(&xs[i]) {
                    *g += r * v;
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            model.bias -= step * grad_bias;
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        });
        model
    }
}

/// `ŷ = w2 · relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReluNet {
    pub input_dim: usize,
    pub hidden: usize,
    /// Row-major `hidden × input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ReluNet {
    /// Every parameter drawn uniformly from `±1/√fan_in` of its layer.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let bound2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let mut draw =
            |bound: f64, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
        let w1 = draw(bound1, hidden * input_dim);
        let b1 = draw(bound1, hidden);
        let w2 = draw(bound2, hidden);
        let b2 = draw(bound2, 1)[0];
        Self {
            input_dim,
            hidden,
            w1,
            b1,
            w2,
            b2,
        }
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.pre_activations(x)
            .iter()
            .zip(&self.w2)
            .map(|(z, w)| w * z.max(0.0))
            .sum::<f64>()
            + self.b2
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters flattened as `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count");
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, rest) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    /// Loss `½·mean((ŷ - y)²)` over the selected rows and its gradient in
    /// [`Self::params`] order.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let n = rows.len() as f64;
        let mut grad = vec![0.0; self.param_count()];
        let (w1_len, b1_len) = (self.w1.len(), self.b1.len());
        let w2_off = w1_len + b1_len;
        let b2_off = w2_off + self.hidden;
        let mut loss = 0.0;
        for &i in rows {
            let x = &xs[i];
            let z = self.pre_activations(x);
            let y_hat = z.iter().zip(&self.w2).map(|(z, w)| w * z.max(0.0)).sum::<f64>() + self.b2;
            let r = y_hat - ys[i];
            loss += 0.5 * r * r / n;
            let r = r / n;
            grad[b2_off] += r;
            for j in 0..self.hidden {
                if z[j] <= 0.0 {
                    continue;
                }
                grad[w2_off + j] += r * z[j];
                let dz = r * self.w2[j];
                grad[w1_len + j] += dz;
                let row = &mut grad[j * self.input_dim..(j + 1) * self.input_dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dz * v;
                }
            }
        }
        (loss, grad)
    }

    pub fn fit(xs: &[Vec<f64>], ys: &[f64], hidden: usize, config: &SgdConfig, seed: u64) -> Self {
        let input_dim = xs.first().map_or(0, Vec::len);
        let mut net = Self::init(input_dim, hidden, seed);
        // Shuffling uses its own stream so it does not depend on the init draws.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut params = net.params();
        for_each_batch(xs.len(), config, &mut rng, |batch| {
            let (_, grad) = net.loss_and_gradient(xs, ys, batch);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= config.learning_rate * g;
            }
            net.set_params(&params);
        });
        net
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_recovers_planted_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x[0] - 0.25 * x[2] + 0.1).collect();
        let config = SgdConfig {
            learning_rate: 0.1,
            epochs: 300,
            ..Default::default()
        };
        let model = LinearModel::fit(&xs, &ys, &config, 7);
        assert!((model.weights[0] - 0.5).abs() < 1e-3, "{model:?}");
        assert!((model.weights[2] + 0.25).abs() < 1e-3);
        assert!((model.bias - 0.1).abs() < 1e-3);
        assert_eq!(model, LinearModel::fit(&xs, &ys, &config, 7));
    }

    #[test]
    fn hand_computed_forward_pass() {
        // Two hidden units; the zero input leaves only the bias path:
        // relu(0.5) * 2 + relu(-1) * 3 + 0.25 = 1.25.
        let net = ReluNet {
            input_dim: 2,
            hidden: 2,
            w1: vec![1.0, -1.0, 0.5, 0.5],
            b1: vec![0.5, -1.0],
            w2: vec![2.0, 3.0],
            b2: 0.25,
        };
        assert_eq!(net.predict(&[0.0, 0.0]), 1.25);
        // z = [1 - 2 + 0.5, 0.5 + 1 - 1] = [-0.5, 0.5] -> 0 * 2 + 0.5 * 3 + 0.25
        assert_eq!(net.predict(&[1.0, 2.0]), 1.75);
    }

    #[test]
    fn params_round_trip() {
        let mut net = ReluNet::init(4, 3, 9);
        let params = net.params();
        assert_eq!(params.len(), 4 * 3 + 3 + 3 + 1);
        let shifted: Vec<f64> = params.iter().map(|p| p + 1.0).collect();
        net.set_params(&shifted);
        assert_eq!(net.params(), shifted);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let net = ReluNet::init(16, 100, 3);
        assert!(net.w1.iter().chain(&net.b1).all(|w| w.abs() <= 0.25));
        assert!(net.w2.iter().all(|w| w.abs() <= 0.1));
    }

    #[test]
    fn relu_net_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].abs()).collect();
        let rows: Vec<usize> = (0..xs.len()).collect();
        let before = ReluNet::init(4, 100, 5).loss_and_gradient(&xs, &ys, &rows).0;
        let net = ReluNet::fit(&xs, &ys, 100, &SgdConfig::default(), 5);
        let after = net.loss_and_gradient(&xs, &ys, &rows).0;
        assert!(after < 0.5 * before, "{before} -> {after}");
    }
}
