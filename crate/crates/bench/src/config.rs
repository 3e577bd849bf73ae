//! Bench configuration, read from TOML.
//!
//! Every key is optional; see `BenchConfig::default` for the defaults.
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use cropbench_core::denoiser::DenoiserConfig;
use cropbench_core::sample::{SampleConfig, DEFAULT_GUIDANCE_SCALE, DEFAULT_INFERENCE_STEPS};
use cropbench_core::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_NUM_STEPS};
use cropbench_core::telemetry::{Phase, Reading, DEFAULT_INTERVAL_S};
use cropbench_core::train::{EchoedSettings, FineTuneMethod, LrSchedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseName {
    Training,
    Inference,
}

impl From<PhaseName> for Phase {
    fn from(p: PhaseName) -> Self {
        match p {
            PhaseName::Training => Phase::Training,
            PhaseName::Inference => Phase::Inference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub variant: String,
    /// Phases run in order, each under its own trace.
    pub phases: Vec<PhaseName>,
    pub images_to_generate: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// One prompt per line; generation cycles through them.
    pub prompt_file: Option<PathBuf>,
    /// `identifier=class` lines.
    pub registry_file: Option<PathBuf>,
    /// Prompt paired with every training image.
    pub instance_prompt: String,
    pub train_manifest: Option<PathBuf>,
    /// Reference images for the perceptual score; defaults to the training
    /// manifest.
    pub real_manifest: Option<PathBuf>,
    /// Model for inference when no training phase runs; a fresh seeded
    /// network is used otherwise.
    pub checkpoint: Option<PathBuf>,
    pub telemetry: TelemetryConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalConfig,
    pub workload: Option<WorkloadConfig>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            variant: "toy".into(),
            phases: vec![PhaseName::Training, PhaseName::Inference],
            images_to_generate: 500,
            seed: 0,
            output_dir: "cropbench-out".into(),
            prompt_file: None,
            registry_file: None,
            instance_prompt: "a photo of nbd leaf disease".into(),
            train_manifest: None,
            real_manifest: None,
            checkpoint: None,
            telemetry: TelemetryConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalConfig::default(),
            workload: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    pub backend: BackendKind,
    pub interval_s: f64,
    /// Command used by the real backend.
    pub smi_program: PathBuf,
    /// Synthetic backend: replay these traces instead of a constant reading.
    pub replay_training: Option<PathBuf>,
    pub replay_inference: Option<PathBuf>,
    pub memory_mib: u64,
    pub power_w: f64,
    pub gpu_util_pct: u8,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Synthetic,
            interval_s: DEFAULT_INTERVAL_S,
            smi_program: "nvidia-smi".into(),
            replay_training: None,
            replay_inference: None,
            memory_mib: 10_000,
            power_w: 180.0,
            gpu_util_pct: 90,
        }
    }
}

impl TelemetryConfig {
    pub fn constant_reading(&self) -> Reading {
        Reading {
            memory_mib: self.memory_mib,
            power_w: self.power_w,
            gpu_util_pct: self.gpu_util_pct,
        }
    }

    pub fn replay_for(&self, phase: Phase) -> Option<&Path> {
        match phase {
            Phase::Training => self.replay_training.as_deref(),
            Phase::Inference => self.replay_inference.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub vocab_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        Self {
            channels: d.channels,
            height: d.height,
            width: d.width,
            features: d.features,
            time_dim: d.time_dim,
            cond_dim: d.cond_dim,
            num_steps: DEFAULT_NUM_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            vocab_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            channels: self.channels,
            height: self.height,
            width: self.width,
            features: self.features,
            time_dim: self.time_dim,
            cond_dim: self.cond_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Dreambooth,
    Lora,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: MethodName,
    pub learning_rate: f64,
    pub gradient_accumulation_steps: usize,
    pub training_steps: usize,
    pub lr_warmup_steps: usize,
    pub lr_scheduler: String,
    /// Non-positive disables Min-SNR weighting.
    pub snr_gamma: f64,
    pub text_encoder_lr: Option<f64>,
    pub batch_size: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub resolution: (u32, u32),
    pub mixed_precision: String,
    pub use_8bit_adam: bool,
    pub gradient_checkpointing: bool,
    pub max_sequence_length: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from_core(&TrainConfig::default())
    }
}

impl TrainSection {
    pub fn from_core(c: &TrainConfig) -> Self {
        let (method, lora_rank, lora_scale) = match c.method {
            FineTuneMethod::Dreambooth => (MethodName::Dreambooth, 4, 1.0),
            FineTuneMethod::Lora { rank, scale } => (MethodName::Lora, rank, scale),
        };
        Self {
            method,
            learning_rate: c.learning_rate,
            gradient_accumulation_steps: c.gradient_accumulation_steps,
            training_steps: c.training_steps,
            lr_warmup_steps: c.lr_warmup_steps,
            lr_scheduler: "constant".into(),
            snr_gamma: c.snr_gamma.unwrap_or(0.0),
            text_encoder_lr: c.text_encoder_lr,
            batch_size: c.batch_size,
            lora_rank,
            lora_scale,
            resolution: c.echoed.resolution,
            mixed_precision: c.echoed.mixed_precision.clone(),
            use_8bit_adam: c.echoed.use_8bit_adam,
            gradient_checkpointing: c.echoed.gradient_checkpointing,
            max_sequence_length: c.echoed.max_sequence_length,
        }
    }

    pub fn to_core(&self, seed: u64) -> Result<TrainConfig> {
        if self.lr_scheduler != "constant" {
            return Err(BenchError::Usage(format!("unsupported lr_scheduler `{}` (only `constant`)", self.lr_scheduler)));
        }
        let config = TrainConfig {
            learning_rate: self.learning_rate,
            gradient_accumulation_steps: self.gradient_accumulation_steps,
            training_steps: self.training_steps,
            lr_warmup_steps: self.lr_warmup_steps,
            lr_schedule: LrSchedule::Constant,
            snr_gamma: (self.snr_gamma > 0.0).then_some(self.snr_gamma),
            text_encoder_lr: self.text_encoder_lr,
            batch_size: self.batch_size,
            rng_seed: seed,
            method: match self.method {
                MethodName::Dreambooth => FineTuneMethod::Dreambooth,
                MethodName::Lora => FineTuneMethod::Lora {
                    rank: self.lora_rank,
                    scale: self.lora_scale,
                },
            },
            echoed: EchoedSettings {
                resolution: self.resolution,
                mixed_precision: self.mixed_precision.clone(),
                use_8bit_adam: self.use_8bit_adam,
                gradient_checkpointing: self.gradient_checkpointing,
                max_sequence_length: self.max_sequence_length,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub num_inference_steps: usize,
    pub guidance_scale: f64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            num_inference_steps: DEFAULT_INFERENCE_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
        }
    }
}

impl SampleSection {
    pub fn to_core(&self, seed: u64) -> SampleConfig {
        SampleConfig {
            num_inference_steps: self.num_inference_steps,
            guidance_scale: self.guidance_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Images are fitted to `size × size` before scoring.
    pub size: u32,
    pub extractor_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { size: 32, extractor_seed: 0 }
    }
}

/// Wraps an arbitrary command instead of the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Program and arguments. `CROPBENCH_OUT` and `CROPBENCH_PHASE` are set
    /// in its environment.
    pub command: Vec<String>,
    /// Where the command leaves generated images, relative to the output
    /// directory.
    #[serde(default = "default_images_dir")]
    pub images_dir: PathBuf,
}

fn default_images_dir() -> PathBuf {
    "images".into()
}

impl BenchConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut config: BenchConfig = toml::from_str(text).map_err(|e| BenchError::format(origin, e.to_string()))?;
        if let Some(dir) = origin.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.prompt_file,
            &mut self.registry_file,
            &mut self.train_manifest,
            &mut self.real_manifest,
            &mut self.checkpoint,
            &mut self.telemetry.replay_training,
            &mut self.telemetry.replay_inference,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn real_manifest(&self) -> Option<&Path> {
        self.real_manifest.as_deref().or(self.train_manifest.as_deref())
    }

    /// Checks cross-field requirements and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(BenchError::Usage("no phases configured".into()));
        }
        self.model.denoiser().validate()?;
        self.train.to_core(self.seed)?;
        cropbench_core::telemetry::check_interval(self.telemetry.interval_s)?;
        if self.eval.size < 8 {
            return Err(BenchError::Usage("eval.size must be at least 8".into()));
        }
        if let Some(w) = &self.workload {
            if w.command.is_empty() {
                return Err(BenchError::Usage("workload.command is empty".into()));
            }
        } else if self.phases.contains(&PhaseName::Training) && self.train_manifest.is_none() {
            return Err(BenchError::Usage("training with the toy model needs train_manifest".into()));
        }
        let files = [
            &self.prompt_file,
            &self.registry_file,
            &self.train_manifest,
            &self.real_manifest,
            &self.checkpoint,
            &self.telemetry.replay_training,
            &self.telemetry.replay_inference,
        ];
        for p in files.into_iter().flatten() {
            if !p.is_file() {
                return Err(BenchError::Usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_core() {
        let c = BenchConfig::default();
        assert_eq!(c.train.to_core(0).unwrap(), TrainConfig::default());
        assert_eq!(c.model.denoiser(), DenoiserConfig::default());
    }

    #[test]
    fn toml_round_trip_and_relative_paths() {
        let text = "variant = \"SD3.5M\"\nphases = [\"inference\"]\ntrain_manifest = \"data/m.tsv\"\n[train]\nmethod = \"lora\"\nlora_rank = 2\n[telemetry]\ninterval_s = 0.5\n";
        let c = BenchConfig::parse(text, Path::new("/cfg/bench.toml")).unwrap();
        assert_eq!(c.variant, "SD3.5M");
        assert_eq!(c.phases, [PhaseName::Inference]);
        assert_eq!(c.train_manifest.as_deref(), Some(Path::new("/cfg/data/m.tsv")));
        assert_eq!(c.output_dir, Path::new("/cfg/cropbench-out"));
        assert_eq!(c.train.to_core(1).unwrap().method, FineTuneMethod::Lora { rank: 2, scale: 1.0 });
        let again = BenchConfig::parse(&c.to_toml(), Path::new("bench.toml")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(BenchConfig::parse("varient = \"x\"", Path::new("b.toml")).is_err());
        assert!(BenchConfig::parse("[train]\nlr = 1", Path::new("b.toml")).is_err());
    }

    #[test]
    fn only_constant_scheduler() {
        let t = TrainSection {
            lr_scheduler: "cosine".into(),
            ..TrainSection::default()
        };
        assert!(matches!(t.to_core(0), Err(BenchError::Usage(_))));
    }
}
