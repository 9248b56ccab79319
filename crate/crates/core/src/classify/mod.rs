//! Trainable probes: a linear softmax classifier for language
//! identification and a one-hidden-layer regressor for quality estimation,
//! both trained by seeded mini-batch gradient descent with early stopping.

mod langid;
mod qe;
mod stats;

pub use langid::{
    load_langid, predict_lang, save_langid, softmax_loss_and_gradient, train_langid, LabeledVector,
    LinearSoftmaxModel, SoftmaxGradient,
};
pub use qe::{
    load_qe_samples, load_regressor, mlp_loss_and_gradient, qe_cosine_score, save_regressor,
    train_qe, MlpGradient, MlpRegressor, QeAux, QeInputMode, QeSample, QeVariant, HIDDEN_WIDTH,
};
pub use stats::{mean_squared_error, pearson};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 64,
            patience: 5,
            max_epochs: 100,
            momentum: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// Training loss after each epoch.
    pub train_loss: Vec<f64>,
    /// Validation accuracy (language ID) or MSE (QE) after each epoch.
    pub valid_metric: Vec<f64>,
}

/// Shuffled mini-batch order for one epoch.
pub(crate) struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    batch_size: usize,
}

impl Batches {
    pub(crate) fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Batches {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            batch_size: batch_size.max(1),
        }
    }

    pub(crate) fn epoch(&mut self) -> Vec<Vec<usize>> {
        self.order.shuffle(&mut self.rng);
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Plain gradient step with optional heavy-ball momentum.
pub(crate) fn step(params: &mut [f64], grad: &[f64], velocity: &mut [f64], cfg: &TrainConfig) {
    for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v - cfg.learning_rate * g;
        *p += *v;
    }
}
