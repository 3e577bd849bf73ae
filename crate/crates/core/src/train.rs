//! Fine-tuning loop: Adam on the noise-prediction objective with linear
//! warmup, gradient accumulation and optional Min-SNR weighting.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand::Rng;

use crate::denoiser::{Denoiser, NoisedExample, Trainable};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::lora::{self, Projection};
use crate::optim::Adam;
use crate::rng;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FineTuneMethod {
    /// Update every denoiser weight.
    #[default]
    Dreambooth,
    /// Freeze the base and train adapters on the Q/K/V projections.
    Lora { rank: usize, scale: f64 },
}

/// Settings that are carried through configs and checkpoints but have no
/// effect on the desk-scale trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoedSettings {
    pub resolution: (u32, u32),
    pub mixed_precision: alloc::string::String,
    pub use_8bit_adam: bool,
    pub gradient_checkpointing: bool,
    pub max_sequence_length: usize,
}

impl Default for EchoedSettings {
    fn default() -> Self {
        Self {
            resolution: (1024, 1024),
            mixed_precision: "fp16".to_string(),
            use_8bit_adam: true,
            gradient_checkpointing: true,
            max_sequence_length: crate::prompt::MAX_SEQUENCE_LENGTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gradient_accumulation_steps: usize,
    pub training_steps: usize,
    pub lr_warmup_steps: usize,
    pub lr_schedule: LrSchedule,
    pub snr_gamma: Option<f64>,
    pub text_encoder_lr: Option<f64>,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub method: FineTuneMethod,
    pub echoed: EchoedSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            gradient_accumulation_steps: 4,
            training_steps: 2000,
            lr_warmup_steps: 10,
            lr_schedule: LrSchedule::Constant,
            snr_gamma: Some(5.0),
            text_encoder_lr: Some(5e-6),
            batch_size: 1,
            rng_seed: 0,
            method: FineTuneMethod::Dreambooth,
            echoed: EchoedSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.gradient_accumulation_steps == 0 || self.batch_size == 0 {
            return bad("gradient_accumulation_steps and batch_size must be positive");
        }
        if matches!(self.snr_gamma, Some(g) if !(g > 0.0)) {
            return bad("snr_gamma must be positive");
        }
        if matches!(self.text_encoder_lr, Some(lr) if !(lr > 0.0)) {
            return bad("text_encoder_lr must be positive");
        }
        if let FineTuneMethod::Lora { rank, scale } = self.method {
            if rank == 0 || !scale.is_finite() {
                return bad("lora rank must be positive and scale finite");
            }
        }
        Ok(())
    }

    /// Learning rate for 1-based update `k`: ramps linearly to
    /// `learning_rate` over the warmup, then stays constant.
    pub fn learning_rate_at(&self, k: usize) -> f64 {
        if self.lr_warmup_steps == 0 || k >= self.lr_warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * k as f64 / self.lr_warmup_steps as f64
        }
    }

    pub fn trainable(&self) -> Trainable {
        match self.method {
            FineTuneMethod::Dreambooth => Trainable::Base,
            FineTuneMethod::Lora { .. } => Trainable::Adapters,
        }
    }
}

/// A training image with its conditioning vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub image: ImageGrid,
    pub cond: Vec<f64>,
}

/// Stateful optimizer loop over explicit micro-batches.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: Denoiser,
    config: TrainConfig,
    adam: Adam,
    updates: usize,
}

impl Trainer {
    /// Attaches fresh adapters first when the method is LoRA and the model
    /// has none on a projection.
    pub fn new(mut model: Denoiser, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if let FineTuneMethod::Lora { rank, scale } = config.method {
            let f = model.config().features;
            for p in Projection::ALL {
                if model.lora(p).is_none() {
                    let seed = config.rng_seed ^ (0x10ba_0000 + p as u64);
                    let mut adapter = lora::init_lora(p, f, f, rank, seed)?;
                    adapter.set_scale(scale);
                    model.attach_lora(adapter)?;
                }
            }
        }
        let adam = Adam::new(model.trainable_count(config.trainable()));
        Ok(Self {
            model,
            config,
            adam,
            updates: 0,
        })
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn into_model(self) -> Denoiser {
        self.model
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One optimizer update from the mean gradient over `batch`; returns
    /// the mean loss.
    pub fn update(&mut self, batch: &[NoisedExample<'_>], schedule: &NoiseSchedule) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mode = self.config.trainable();
        let mut grad_sum = alloc::vec![0.0; self.model.trainable_count(mode)];
        let mut loss_sum = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let (loss, grad) = self.model.loss_and_gradient(ex, schedule, self.config.snr_gamma, mode)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    update: self.updates + 1,
                    micro_batch: i,
                    t: ex.t,
                    loss,
                });
            }
            loss_sum += loss;
            grad_sum.iter_mut().zip(&grad).for_each(|(s, g)| *s += g);
        }
        let n = batch.len() as f64;
        grad_sum.iter_mut().for_each(|g| *g /= n);
        self.updates += 1;
        let lr = self.config.learning_rate_at(self.updates);
        self.adam.step(&mut self.model.trainable_slices_mut(mode), &grad_sum, lr);
        Ok(loss_sum / n)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub loss_history: Vec<f64>,
}

/// Runs `config.training_steps` updates. Each update draws
/// `gradient_accumulation_steps * batch_size` examples: a uniform dataset
/// index, a uniform step in `1..=T` and unit Gaussian noise, in that order,
/// from a ChaCha8 stream seeded with `config.rng_seed`.
pub fn train(model: Denoiser, dataset: &[TrainExample], schedule: &NoiseSchedule, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, dataset, schedule, config, |_, _| {})
}

/// [`train`] with a callback invoked after each update as `(update, loss)`.
pub fn train_with_progress(
    model: Denoiser,
    dataset: &[TrainExample],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let shape = model.config().image_shape();
    for ex in dataset {
        ex.image.ensure_shape(shape)?;
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut rng = rng::seeded(config.rng_seed);
    let draws = config.gradient_accumulation_steps * config.batch_size;
    let mut loss_history = Vec::with_capacity(config.training_steps);
    let (c, h, w) = shape;
    for _ in 0..config.training_steps {
        let mut picks = Vec::with_capacity(draws);
        for _ in 0..draws {
            let idx = rng.random_range(0..dataset.len());
            let t = rng.random_range(1..=schedule.num_steps());
            let eps = ImageGrid::gaussian(c, h, w, &mut rng)?;
            picks.push((idx, t, eps));
        }
        let batch: Vec<NoisedExample<'_>> = picks
            .iter()
            .map(|(idx, t, eps)| NoisedExample {
                x0: &dataset[*idx].image,
                t: *t,
                eps,
                cond: &dataset[*idx].cond,
            })
            .collect();
        let loss = trainer.update(&batch, schedule)?;
        loss_history.push(loss);
        progress(trainer.updates(), loss);
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            channels: 1,
            height: 4,
            width: 4,
            features: 4,
            time_dim: 4,
            cond_dim: 2,
        }
    }

    fn dataset() -> Vec<TrainExample> {
        (0..3)
            .map(|i| TrainExample {
                image: ImageGrid::from_fn(1, 4, 4, |_, y, x| ((x + y + i) % 3) as f64 - 1.0).unwrap(),
                cond: alloc::vec![i as f64, 1.0],
            })
            .collect()
    }

    #[test]
    fn warmup_ramps_then_holds() {
        let cfg = TrainConfig::default();
        assert!((cfg.learning_rate_at(1) - 1e-5).abs() < 1e-18);
        assert!((cfg.learning_rate_at(5) - 5e-5).abs() < 1e-18);
        assert_eq!(cfg.learning_rate_at(10), 1e-4);
        assert_eq!(cfg.learning_rate_at(2000), 1e-4);
        let none = TrainConfig { lr_warmup_steps: 0, ..cfg };
        assert_eq!(none.learning_rate_at(1), 1e-4);
    }

    #[test]
    fn defaults_follow_the_reference_hyperparameters() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.gradient_accumulation_steps, 4);
        assert_eq!(cfg.training_steps, 2000);
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.snr_gamma, Some(5.0));
        assert_eq!(cfg.text_encoder_lr, Some(5e-6));
        assert_eq!(cfg.echoed.resolution, (1024, 1024));
        assert_eq!(cfg.echoed.max_sequence_length, 100);
    }

    #[test]
    fn zero_steps_returns_input_parameters() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        let cfg = TrainConfig {
            training_steps: 0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &dataset(), &NoiseSchedule::default(), &cfg).unwrap();
        assert_eq!(out.model.params(), model.params());
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        let err = train(model, &[], &NoiseSchedule::default(), &TrainConfig::default()).unwrap_err();
        assert_eq!(err, Error::EmptyDataset);
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let cfg = TrainConfig {
            training_steps: 15,
            rng_seed: 42,
            ..TrainConfig::default()
        };
        let s = NoiseSchedule::default();
        let a = train(Denoiser::new(tiny(), 1).unwrap(), &dataset(), &s, &cfg).unwrap();
        let b = train(Denoiser::new(tiny(), 1).unwrap(), &dataset(), &s, &cfg).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_history.len(), 15);
    }

    #[test]
    fn lora_training_freezes_base_weights() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        let cfg = TrainConfig {
            training_steps: 5,
            learning_rate: 1e-2,
            method: FineTuneMethod::Lora { rank: 2, scale: 1.0 },
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &dataset(), &NoiseSchedule::default(), &cfg).unwrap();
        assert_eq!(out.model.params(), model.params());
        let b = out.model.lora(Projection::Query).unwrap().b();
        assert!(b.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        for cfg in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                gradient_accumulation_steps: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                snr_gamma: Some(-1.0),
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train(model.clone(), &dataset(), &NoiseSchedule::default(), &cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
