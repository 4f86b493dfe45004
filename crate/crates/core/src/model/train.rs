use log::{info, warn};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{forward, loss_and_grads, Mode};
use super::params::{Arch, TcnParams};
use crate::encoding::{sample_training_crops, TrainingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    /// Factor applied to the learning rate once `decay_after` epochs are done.
    pub lr_decay: f64,
    pub decay_after: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub huber_delta: f64,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            dropout: 0.1,
            lr: 1e-2,
            lr_decay: 0.3,
            decay_after: 10,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            huber_delta: 1.0,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr", self.lr),
            ("lr_decay", self.lr_decay),
            ("epochs", self.epochs as f64),
            ("eps", self.eps),
            ("huber_delta", self.huber_delta),
            ("bn_momentum", self.bn_momentum),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_after {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &TrainConfig) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        self.step += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / ((*v / c2).sqrt() + eps);
        }
    }
}

/// Stack crops into the `[3K, B * s]` input and `[4, B]` target matrices.
pub fn batch_matrices(set: &TrainingSet, indices: &[usize]) -> (Array2<f32>, Array2<f32>) {
    let (s, c) = (set.s, set.features());
    let b = indices.len();
    let mut x = Array2::zeros((c, b * s));
    let mut y = Array2::zeros((4, b));
    for (j, &i) in indices.iter().enumerate() {
        let crop = &set.crops[i];
        for t in 0..s {
            for f in 0..c {
                x[[f, j * s + t]] = crop.input[t * c + f];
            }
        }
        for o in 0..4 {
            y[[o, j]] = crop.target[o];
        }
    }
    (x, y)
}

/// Trained parameters and the mean training loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TcnParams<f32>,
    pub epoch_loss: Vec<f64>,
}

/// Train a freshly initialized network on `set`.
pub fn train<R: Rng>(set: &TrainingSet, arch: Arch, cfg: &TrainConfig, rng: &mut R) -> Result<TrainOutcome> {
    cfg.validate()?;
    arch.validate()?;
    if arch.keypoints != set.k {
        return Err(Error::Config(format!(
            "dataset has K = {} keypoints, architecture expects {}",
            set.k, arch.keypoints
        )));
    }
    if arch.receptive_field() != set.s {
        return Err(Error::Config(format!(
            "dataset windows have s = {} frames, the receptive field is {}",
            set.s,
            arch.receptive_field()
        )));
    }
    if set.is_empty() {
        return Err(Error::InvalidInput("dataset contains no crops".into()));
    }
    let mut params = TcnParams::<f32>::init(arch, rng)?;
    let batch_size = if set.len() < cfg.batch_size {
        warn!(
            "dataset has {} crops, fewer than one batch of {}; training on the full set",
            set.len(),
            cfg.batch_size
        );
        set.len()
    } else {
        cfg.batch_size
    };
    let full: Vec<usize> = (0..set.len()).collect();
    let batches = set.len().div_ceil(batch_size);
    let mut adam = Adam::new(params.num_params(), cfg);
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for _ in 0..batches {
            let indices = if batch_size == set.len() && set.len() < cfg.batch_size {
                full.clone()
            } else {
                sample_training_crops(set, batch_size, rng)
            };
            let (x, y) = batch_matrices(set, &indices);
            let g = loss_and_grads(
                &params,
                x.view(),
                indices.len(),
                y.view(),
                cfg.huber_delta as f32,
                Mode::Train {
                    dropout: cfg.dropout,
                    rng,
                },
            )?;
            params.update_running_stats(&g.stats, cfg.bn_momentum);
            adam.update(&mut params.values, &g.grads, lr);
            total += g.loss as f64;
        }
        let mean = total / batches as f64;
        info!("epoch {}/{}: loss {mean:.6} (lr {lr:.1e})", epoch + 1, cfg.epochs);
        epoch_loss.push(mean);
    }
    Ok(TrainOutcome { params, epoch_loss })
}

/// Mean Huber loss over the whole set in eval mode.
pub fn evaluate_loss(params: &TcnParams<f32>, set: &TrainingSet, delta: f64) -> Result<f64> {
    let mut total = 0.0;
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(256) {
        let (x, y) = batch_matrices(set, chunk);
        let out = forward(params, x.view(), chunk.len(), Mode::Eval)?;
        total += (&out - &y)
            .iter()
            .map(|&e| super::net::huber(e as f64, delta))
            .sum::<f64>();
    }
    Ok(total / (4 * set.len()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{assemble_multi_variant_dataset, EncodingConfig};
    use crate::types::{EventSet, EventTimeline, EventType, Keypoint, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_set() -> TrainingSet {
        let arch = small_arch();
        let cfg = EncodingConfig {
            s: arch.receptive_field(),
            t_max: 20,
            ..EncodingConfig::default()
        };
        let videos: Vec<Vec<Pose>> = (0..4)
            .map(|v| {
                (0..80)
                    .map(|t| {
                        let ph = (t + 3 * v) as f64 * 0.4;
                        Pose::new(vec![
                            Keypoint::new(ph.sin() * 10.0 + 50.0, 20.0, 0.9),
                            Keypoint::new(t as f64, ph.cos() * 5.0, 0.8),
                        ])
                    })
                    .collect()
            })
            .collect();
        let events: Vec<EventSet> = (0..4)
            .map(|v| {
                let mut e = EventSet::new(100.0);
                let begins: Vec<usize> = (0..80).filter(|t| (t + 3 * v) % 16 == 0).collect();
                let ends: Vec<usize> = (0..80).filter(|t| (t + 3 * v) % 16 == 5).collect();
                e.insert(EventTimeline::new(EventType::StepBegin, begins).unwrap());
                e.insert(EventTimeline::new(EventType::StepEnd, ends).unwrap());
                e
            })
            .collect();
        assemble_multi_variant_dataset(&[videos], &events, &cfg).unwrap()
    }

    fn small_arch() -> Arch {
        Arch {
            keypoints: 2,
            hidden: 16,
            ..Arch::default()
        }
    }

    #[test]
    fn loss_decreases() {
        let set = toy_set();
        assert!(set.len() >= 200);
        let cfg = TrainConfig {
            batch_size: 32,
            epochs: 6,
            decay_after: 4,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = TcnParams::<f32>::init(small_arch(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let before = evaluate_loss(&init, &set, 1.0).unwrap();
        let out = train(&set, small_arch(), &cfg, &mut rng).unwrap();
        let after = evaluate_loss(&out.params, &set, 1.0).unwrap();
        assert_eq!(out.epoch_loss.len(), 6);
        assert!(after < before, "{after} >= {before}");
        assert!(out.epoch_loss[5] < out.epoch_loss[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set();
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 2,
            ..TrainConfig::default()
        };
        let a = train(&set, small_arch(), &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = train(&set, small_arch(), &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_eq!(a.epoch_loss, b.epoch_loss);
    }

    #[test]
    fn small_dataset_trains_as_one_batch() {
        let set = toy_set();
        let cfg = TrainConfig {
            batch_size: 10_000,
            epochs: 1,
            ..TrainConfig::default()
        };
        let out = train(&set, small_arch(), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.epoch_loss.len(), 1);
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(9), 1e-2);
        assert!((cfg.lr_at(10) - 3e-3).abs() < 1e-15);
        assert!((cfg.lr_at(19) - 3e-3).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_arch() {
        let set = toy_set();
        let arch = Arch { keypoints: 3, ..small_arch() };
        assert!(train(&set, arch, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).is_err());
        assert!(TrainConfig { dropout: 1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
