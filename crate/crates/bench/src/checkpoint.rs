//! JSON checkpoints: network weights, adapters, schedule, the training
//! configuration and what is needed to embed prompts the same way again.

use std::path::Path;

use cropbench_core::denoiser::{Denoiser, LayerSpec};
use cropbench_core::lora::{LoraAdapter, Matrix, Projection};
use cropbench_core::prompt::IdentifierRegistry;
use cropbench_core::schedule::{make_schedule, NoiseSchedule};
use cropbench_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainSection};
use crate::error::{BenchError, IoContext, Result};

pub const CHECKPOINT_FORMAT: &str = "cropbench-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdapterRecord {
    target: String,
    rank: usize,
    d_in: usize,
    d_out: usize,
    scale: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    model: ModelConfig,
    layers: Vec<LayerRecord>,
    params: Vec<f64>,
    adapters: Vec<AdapterRecord>,
    train: TrainSection,
    seed: u64,
    registry: String,
    loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub model: Denoiser,
    pub train: TrainConfig,
    pub registry: IdentifierRegistry,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let m = &self.model_config;
        Ok(make_schedule(m.num_steps, m.beta_start, m.beta_end)?)
    }

    pub fn to_json(&self) -> String {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            model: self.model_config.clone(),
            layers: self
                .model
                .manifest()
                .iter()
                .map(|l| LayerRecord {
                    name: l.name.clone(),
                    shape: l.shape.clone(),
                    offset: l.offset,
                })
                .collect(),
            params: self.model.params().to_vec(),
            adapters: self
                .model
                .adapters()
                .map(|a| AdapterRecord {
                    target: a.target().tag().into(),
                    rank: a.rank(),
                    d_in: a.d_in(),
                    d_out: a.d_out(),
                    scale: a.scale(),
                    a: a.a().data().to_vec(),
                    b: a.b().data().to_vec(),
                })
                .collect(),
            train: TrainSection::from_core(&self.train),
            seed: self.train.rng_seed,
            registry: self.registry.to_text(),
            loss_history: self.loss_history.clone(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let bad = |m: String| BenchError::format(origin, m);
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported checkpoint format `{}`", file.format)));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| LayerSpec {
                name: l.name,
                shape: l.shape,
                offset: l.offset,
            })
            .collect();
        let mut model = Denoiser::from_parts(file.model.denoiser(), layers, file.params)?;
        for r in file.adapters {
            let target = Projection::from_tag(&r.target).ok_or_else(|| bad(format!("unknown adapter target `{}`", r.target)))?;
            let adapter = LoraAdapter::new(target, Matrix::new(r.d_in, r.rank, r.a)?, Matrix::new(r.rank, r.d_out, r.b)?, r.scale)?;
            model.attach_lora(adapter)?;
        }
        Ok(Self {
            model_config: file.model,
            model,
            train: file.train.to_core(file.seed)?,
            registry: IdentifierRegistry::parse(&file.registry)?,
            loss_history: file.loss_history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_json(&text, path)
    }
}
