//! Noise-injected minibatch training with best-validation snapshotting.

use eit3d_core::dataset::{add_awgn_f32, Dataset};
use eit3d_core::seed::{derive_path, derive_seed, rng};
use eit3d_core::voxel::VoxelVolume;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adamw::{adamw_step, AdamState, AdamWConfig};
use crate::arch::Architecture;
use crate::model::{mse_loss, TnNet};
use crate::NetError;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;

/// Frames per call when computing the validation loss.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_noise_snr_db: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            betas: a.betas,
            eps: a.eps,
            epochs: 300,
            batch_size: 442,
            train_noise_snr_db: 35.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.eps > 0.0
            && self.betas.0 > 0.0
            && self.betas.0 < 1.0
            && self.betas.1 > 0.0
            && self.betas.1 < 1.0
            && self.epochs > 0
            && self.batch_size > 0
            && self.train_noise_snr_db.is_finite();
        if ok {
            Ok(())
        } else {
            Err(NetError::Config(format!("invalid training configuration {self:?}")))
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, betas: self.betas, eps: self.eps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Snapshot with the lowest validation loss.
    pub net: TnNet<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub config: TrainConfig,
}

/// Borrowed training material: frames, targets and the index splits.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub frames: &'a [Vec<f32>],
    pub targets: &'a [VoxelVolume],
    pub train: &'a [usize],
    pub validation: &'a [usize],
}

impl<'a> TrainData<'a> {
    pub fn from_dataset(ds: &'a Dataset) -> Self {
        Self {
            frames: &ds.frames,
            targets: &ds.volumes,
            train: &ds.meta.splits.train,
            validation: &ds.meta.splits.validation,
        }
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &i in idx {
            x.extend_from_slice(&self.frames[i]);
            y.extend_from_slice(&self.targets[i].data);
        }
        (x, y)
    }
}

/// Seed of the training noise added to the `slot`-th sample of batch
/// `batch` in epoch `epoch` (zero-based).
pub fn noise_seed(seed: u64, epoch: u64, batch: u64, slot: u64) -> u64 {
    derive_path(seed, &[NOISE_STREAM, epoch, batch, slot])
}

/// Eval-mode MSE over `idx` without noise.
pub fn evaluation_loss(net: &TnNet<f32>, data: &TrainData<'_>, idx: &[usize]) -> Result<f64, NetError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.gather(chunk);
        let out = net.forward(&x, chunk.len())?;
        sum += out.iter().zip(&y).map(|(&o, &t)| ((o - t) as f64).powi(2)).sum::<f64>();
        count += out.len();
    }
    Ok(sum / count.max(1) as f64)
}

/// Trains a freshly initialized network. `on_epoch` sees each record as
/// soon as the epoch finishes.
pub fn train_model(
    data: &TrainData<'_>,
    arch: &Architecture,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel, NetError> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(NetError::Config("training needs non-empty train and validation splits".into()));
    }
    if data.frames.len() != data.targets.len() {
        return Err(NetError::Config("frame and target counts differ".into()));
    }
    let mut net = TnNet::<f32>::init(arch, &mut rng(derive_seed(cfg.seed, INIT_STREAM)))?;
    let info = net.param_info();
    let mut state = AdamState::new(&info);
    let opt = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, TnNet<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let e = epoch as u64;
        let mut order = data.train.to_vec();
        order.shuffle(&mut rng(derive_path(cfg.seed, &[SHUFFLE_STREAM, e])));
        let mut train_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = b as u64;
            let mut x = Vec::with_capacity(idx.len() * arch.input_len);
            let mut y = Vec::with_capacity(idx.len() * net.output_len());
            for (k, &i) in idx.iter().enumerate() {
                let seed = noise_seed(cfg.seed, e, b, k as u64);
                let noisy = add_awgn_f32(&data.frames[i], cfg.train_noise_snr_db, seed)
                    .map_err(|err| NetError::Config(format!("noise on sample {i}: {err}")))?;
                x.extend_from_slice(&noisy);
                y.extend_from_slice(&data.targets[i].data);
            }
            let mut drop_rng = rng(derive_path(cfg.seed, &[DROPOUT_STREAM, e, b]));
            let (out, cache) = match net.forward_train(&x, idx.len(), &mut drop_rng) {
                Ok(v) => v,
                Err(NetError::NonFinite { layer }) => {
                    return Err(NetError::Diverged { epoch: epoch + 1, reason: format!("non-finite {layer}"), history })
                }
                Err(other) => return Err(other),
            };
            let (loss, grad) = mse_loss(&out, &y);
            let grads = net.backward(&cache, &grad)?;
            net.update_running_stats(&cache);
            let mut params = net.params_mut();
            adamw_step(&mut params, &info, &grads, &mut state, &opt)?;
            train_sum += loss as f64 * idx.len() as f64;
        }
        let validation_loss = match evaluation_loss(&net, data, data.validation) {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(NetError::NonFinite { .. }) => {
                return Err(NetError::Diverged { epoch: epoch + 1, reason: "validation loss is not finite".into(), history })
            }
            Err(other) => return Err(other),
        };
        let rec = EpochRecord { epoch: epoch + 1, train_loss: train_sum / order.len() as f64, validation_loss };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|(l, _, _)| validation_loss < *l) {
            best = Some((validation_loss, epoch + 1, net.clone()));
        }
    }
    let (_, best_epoch, net) = best.expect("at least one epoch ran");
    Ok(TrainedModel { net, history, best_epoch, config: cfg.clone() })
}

/// One-based epoch with the smallest validation loss (first on ties).
pub fn best_epoch(history: &[EpochRecord]) -> Option<usize> {
    history
        .iter()
        .fold(None::<&EpochRecord>, |b, r| match b {
            Some(x) if x.validation_loss <= r.validation_loss => Some(x),
            _ => Some(r),
        })
        .map(|r| r.epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_epoch_is_first_minimum() {
        let h: Vec<EpochRecord> = [3.0, 1.0, 2.0, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| EpochRecord { epoch: i + 1, train_loss: 0.0, validation_loss: v })
            .collect();
        assert_eq!(best_epoch(&h), Some(2));
        assert_eq!(best_epoch(&[]), None);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { betas: (1.0, 0.9), ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    }
}
