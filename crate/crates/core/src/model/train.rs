use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParameters, OutputActivation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean Euclidean distance to the annotation-probability vector.
    Euclidean,
    /// Per-verb binary cross-entropy against a one-hot majority-vote target.
    LogisticOneHot,
}

impl LossKind {
    pub fn output_activation(self) -> OutputActivation {
        match self {
            LossKind::Euclidean => OutputActivation::LinearClamped,
            LossKind::LogisticOneHot => OutputActivation::BoundedUnit,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Euclidean => "euclidean",
            LossKind::LogisticOneHot => "logistic-onehot",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(LossKind::Euclidean),
            "logistic-onehot" | "logistic_onehot" => Ok(LossKind::LogisticOneHot),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs (0-based) at which the learning rate is divided by 10.
    #[serde(default)]
    pub lr_step_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Euclidean,
            architecture: Architecture::Linear,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            lr_step_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be a non-negative finite number");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if let Architecture::Hidden { units: 0 } = self.architecture {
            return bad("hidden layer needs at least one unit");
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = self.lr_step_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate / 10f64.powi(steps as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    /// Mean data loss over each epoch's batches, weighted by batch size.
    pub loss_trace: Vec<f64>,
}

fn is_one_hot(row: ndarray::ArrayView1<f64>) -> bool {
    row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
}

/// Mini-batch SGD with momentum:
/// `v <- momentum * v - lr * (grad + weight_decay * param)`, `param <- param + v`.
///
/// Rows are reshuffled every epoch from a generator seeded with
/// `config.seed`, which also drives initialisation, so a given
/// `(features, targets, config)` always yields the same parameters.
pub fn train(features: ArrayView2<f64>, targets: ArrayView2<f64>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let n = features.nrows();
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    if targets.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: targets.nrows(),
        });
    }
    if config.loss == LossKind::LogisticOneHot {
        if let Some(i) = targets.rows().into_iter().position(|r| !is_one_hot(r)) {
            return Err(Error::InvalidConfig(format!(
                "logistic one-hot loss needs one-hot targets; row {i} is not"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParameters::init(
        config.architecture,
        features.ncols(),
        targets.ncols(),
        config.loss.output_activation(),
        &mut rng,
    )?;
    let mut velocity = vec![0.0; params.n_params()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = features.select(Axis(0), idx);
            let y = targets.select(Axis(0), idx);
            let (loss, grad) = params.gradient(x.view(), y.view(), config.loss, config.weight_decay)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            epoch_loss += loss * idx.len() as f64;

            // gradient() already folds in weight_decay * param
            let mut flat = params.flatten();
            for ((p, v), g) in flat.iter_mut().zip(velocity.iter_mut()).zip(grad.flatten()) {
                *v = config.momentum * *v - lr * g;
                *p += *v;
            }
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            params.set_flat(&flat)?;
        }
        loss_trace.push(epoch_loss / n as f64);
    }
    Ok(TrainOutcome { params, loss_trace })
}
