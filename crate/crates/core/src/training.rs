//! SGD with momentum and weight decay, the step schedule, and the per-phase
//! training loop shared by the three phases.

use std::path::PathBuf;
use std::time::Instant;

use cgap2_tensor::{ParamStore, Scalar};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0001,
            lr_drop_epoch: 5,
            lr_drop_factor: 0.1,
            epochs: 15,
            batch_size: 32,
            seed: 7,
        }
    }
}

impl OptimConfig {
    pub fn classifier() -> Self {
        Self {
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("lr_drop_factor", self.lr_drop_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Single drop: `learning_rate` before `lr_drop_epoch`, scaled afterwards.
pub fn lr_schedule(config: &OptimConfig, epoch: usize) -> f64 {
    if epoch < config.lr_drop_epoch {
        config.learning_rate
    } else {
        config.learning_rate * config.lr_drop_factor
    }
}

/// `g = grad + wd·w; buf = momentum·buf + g; w -= lr·buf` on every trainable,
/// unfrozen parameter; gradients are cleared afterwards.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, config: &OptimConfig, lr: f64) -> Result<()> {
    if let Some((_, p)) = store.iter().find(|(_, p)| p.is_trainable() && p.value.grad().is_none()) {
        return Err(Error::Optimizer(format!("no gradient for unfrozen parameter {}", p.name)));
    }
    let (lr, mu, wd) = (T::lit(lr), T::lit(config.momentum), T::lit(config.weight_decay));
    for p in store.iter_mut() {
        let Some(grad) = p.value.take_grad() else { continue };
        if !p.is_trainable() {
            continue;
        }
        let mut values = std::mem::take(&mut p.momentum_buffer);
        for ((buf, w), g) in values.iter_mut().zip(p.value.data_mut()).zip(grad) {
            let g = g + wd * *w;
            *buf = mu * *buf + g;
            *w -= lr * *buf;
        }
        p.momentum_buffer = values;
    }
    Ok(())
}

/// The training phases and the stages each one updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Encoder and decoder on single-frame pose estimation.
    Pretrain,
    /// Temporal module only.
    Pose,
    /// Classifier only.
    Classifier,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Pretrain, Phase::Pose, Phase::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Pose => "pose",
            Phase::Classifier => "classifier",
        }
    }

    pub fn trainable(self) -> &'static [Stage] {
        match self {
            Phase::Pretrain => &[Stage::Encoder, Stage::Decoder],
            Phase::Pose => &[Stage::Temporal],
            Phase::Classifier => &[Stage::Classifier],
        }
    }

    /// Sets freeze flags for this phase.
    pub fn prepare<T: Scalar>(self, model: &mut Model<T>) {
        model.set_trainable(self.trainable());
    }

    /// Fails unless exactly this phase's stages are unfrozen.
    pub fn check<T: Scalar>(self, model: &Model<T>) -> Result<()> {
        for stage in Stage::PARTS {
            let want_trainable = self.trainable().contains(&stage);
            let frozen = model.is_frozen(stage);
            let unfrozen = model
                .store
                .iter()
                .filter(|(_, p)| p.name.starts_with(stage.prefix()))
                .all(|(_, p)| !p.frozen);
            if want_trainable && !unfrozen {
                return Err(Error::PhaseContract(format!(
                    "{} phase trains the {stage:?} stage but it is frozen",
                    self.name()
                )));
            }
            if !want_trainable && !frozen {
                return Err(Error::PhaseContract(format!(
                    "{} phase requires the {stage:?} stage frozen",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken by the end of this epoch.
    pub global_step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: Phase,
    /// What `val_metric` measures: `mpjpe_mm` or `accuracy`.
    pub metric: String,
    pub train_samples: usize,
    pub val_samples: usize,
    pub epochs: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,global_step,train_loss,val_loss,val_metric,lr,batch_size";

    /// One row per epoch. Wall time is left to the JSON form so the CSV is
    /// reproducible byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{},{}\n",
                e.epoch, e.global_step, e.train_loss, e.val_loss, e.val_metric, e.lr, e.batch_size
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn final_metric(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.val_metric)
    }
}

/// Validation loss and metric.
pub type Validation = (f64, f64);

/// Runs `opt.epochs` epochs over `train_len` samples in seeded shuffled
/// batches. `step` runs forward and backward on one batch, leaving gradients
/// on the store, and returns the batch loss; `validate` runs after every epoch.
pub fn run_epochs<T, S, V>(
    model: &mut Model<T>,
    phase: Phase,
    opt: &OptimConfig,
    train_len: usize,
    metric: &str,
    mut step: S,
    mut validate: V,
) -> Result<TrainReport>
where
    T: Scalar,
    S: FnMut(&mut Model<T>, &[usize]) -> Result<f64>,
    V: FnMut(&Model<T>) -> Result<(Validation, usize)>,
{
    opt.validate()?;
    phase.check(model)?;
    if train_len == 0 {
        return Err(Error::Data(format!("{} phase has no training samples", phase.name())));
    }
    let mut order: Vec<usize> = (0..train_len).collect();
    let mut epochs = Vec::with_capacity(opt.epochs);
    let mut global_step = 0;
    let mut val_samples = 0;
    for epoch in 0..opt.epochs {
        let started = Instant::now();
        let lr = lr_schedule(opt, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(opt.batch_size) {
            model.store.zero_grads();
            let loss = step(model, batch)?;
            if !loss.is_finite() {
                return Err(Error::Optimizer(format!(
                    "{} phase loss diverged at epoch {epoch}",
                    phase.name()
                )));
            }
            sgd_step(&mut model.store, opt, lr)?;
            total += loss * batch.len() as f64;
            global_step += 1;
        }
        let ((val_loss, val_metric), n) = validate(model)?;
        val_samples = n;
        epochs.push(EpochRecord {
            epoch,
            global_step,
            train_loss: total / train_len as f64,
            val_loss,
            val_metric,
            lr,
            batch_size: opt.batch_size,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport {
        phase,
        metric: metric.to_string(),
        train_samples: train_len,
        val_samples,
        epochs,
        checkpoint: None,
    })
}
