//! `run_bench`: every configured phase under its own telemetry trace,
//! then evaluation and the report.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml          resolved configuration (hashed into provenance.json)
//! trace_<phase>.csv    telemetry, streamed while the phase runs
//! loss.csv             toy training only
//! checkpoint.json      toy training only
//! images/              generated images
//! lpips_pairs.csv      per-image perceptual scores
//! metrics.csv          one row per phase
//! report.txt
//! plots/*.svg
//! provenance.json
//! ```

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use cropbench_core::denoiser::Denoiser;
use cropbench_core::energy::summarize;
use cropbench_core::prompt::IdentifierRegistry;
use cropbench_core::schedule::make_schedule;
use cropbench_core::telemetry::{Phase, Trace};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{BackendKind, BenchConfig, TelemetryConfig, WorkloadConfig};
use crate::error::{BenchError, IoContext, Result};
use crate::report::{self, RunRecord};
use crate::sampler::{utc_now, Backend, NvidiaSmi, Sampler, SamplerOptions, SamplerStats, Synthetic};
use crate::trace_csv::{read_csv, TraceMeta};
use crate::workload::{self, GenerateJob, TrainJob};

pub const IMAGES_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProvenance {
    pub phase: String,
    pub trace_file: String,
    pub samples: usize,
    pub ticks: usize,
    pub stalled_reads: usize,
    pub failed_reads: usize,
    pub started_utc: String,
    pub finished_utc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub variant: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_utc: String,
    pub finished_utc: String,
    pub complete: bool,
    pub error: Option<String>,
    pub phases: Vec<PhaseProvenance>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub out_dir: PathBuf,
    pub records: Vec<RunRecord>,
    pub traces: Vec<Trace>,
    pub loss_history: Vec<f64>,
    pub provenance: Provenance,
}

impl BenchReport {
    pub fn complete(&self) -> bool {
        self.provenance.complete
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn backend_for(telemetry: &TelemetryConfig, variant: &str, phase: Phase) -> Result<Backend> {
    Ok(match telemetry.backend {
        BackendKind::Real => Backend::Real(NvidiaSmi {
            program: telemetry.smi_program.clone(),
        }),
        BackendKind::Synthetic => match telemetry.replay_for(phase) {
            Some(path) => {
                let meta = TraceMeta {
                    label: variant.to_string(),
                    interval_s: telemetry.interval_s,
                    phase,
                };
                Backend::Synthetic(Synthetic::Replay(read_csv(path, meta)?))
            }
            None => Backend::Synthetic(Synthetic::Constant(telemetry.constant_reading())),
        },
    })
}

/// Runs an external command to completion; nonzero exit is a workload
/// failure.
pub fn run_external(workload: &WorkloadConfig, out_dir: &Path, phase: Phase) -> Result<()> {
    let (program, args) = workload
        .command
        .split_first()
        .ok_or_else(|| BenchError::Usage("workload.command is empty".into()))?;
    let status = Command::new(program)
        .args(args)
        .env("CROPBENCH_OUT", out_dir)
        .env("CROPBENCH_PHASE", phase.as_str())
        .stdin(Stdio::null())
        .status()
        .map_err(|e| BenchError::Workload(format!("cannot start `{program}`: {e}")))?;
    if status.success() {
        Ok(())
    } else {
        Err(BenchError::Workload(format!("`{program}` exited with {status}")))
    }
}

struct Context<'a> {
    config: &'a BenchConfig,
    out: &'a Path,
    registry: IdentifierRegistry,
    prompts: Vec<String>,
    checkpoint: Option<Checkpoint>,
    threads: usize,
}

impl Context<'_> {
    /// Runs one phase; returns the number of images produced.
    fn run_phase(&mut self, phase: Phase) -> Result<u64> {
        let c = self.config;
        if let Some(w) = &c.workload {
            run_external(w, self.out, phase)?;
            return Ok(match phase {
                Phase::Training => 0,
                Phase::Inference => workload::list_images(&self.out.join(&w.images_dir))?.len() as u64,
            });
        }
        match phase {
            Phase::Training => {
                let manifest = c
                    .train_manifest
                    .as_deref()
                    .ok_or_else(|| BenchError::Usage("train_manifest is required for training".into()))?;
                let job = TrainJob {
                    model: &c.model,
                    train: c.train.to_core(c.seed)?,
                    manifest,
                    instance_prompt: &c.instance_prompt,
                    registry: &self.registry,
                    init_seed: c.seed,
                };
                let ckpt = workload::toy_train(&job, &self.out.join("loss.csv"))?;
                ckpt.save(&self.out.join("checkpoint.json"))?;
                self.checkpoint = Some(ckpt);
                Ok(0)
            }
            Phase::Inference => {
                let (model, model_cfg) = match &self.checkpoint {
                    Some(ck) => (ck.model.clone(), ck.model_config.clone()),
                    None => (Denoiser::new(c.model.denoiser(), c.seed)?, c.model.clone()),
                };
                let schedule = make_schedule(model_cfg.num_steps, model_cfg.beta_start, model_cfg.beta_end)?;
                let registry = self.checkpoint.as_ref().map_or(&self.registry, |ck| &ck.registry);
                let prompts = self
                    .prompts
                    .iter()
                    .map(|p| workload::embed(p, registry, &model_cfg))
                    .collect::<Result<Vec<_>>>()?;
                let job = GenerateJob {
                    model: &model,
                    schedule: &schedule,
                    prompts: &prompts,
                    count: c.images_to_generate,
                    sample: c.sample.to_core(c.seed),
                    threads: self.threads,
                };
                let images = workload::toy_generate(&job, &self.out.join(IMAGES_DIR))?;
                Ok(images.len() as u64)
            }
        }
    }

    fn images_dir(&self) -> PathBuf {
        match &self.config.workload {
            Some(w) => self.out.join(&w.images_dir),
            None => self.out.join(IMAGES_DIR),
        }
    }
}

fn phase_provenance(phase: Phase, trace_file: &str, trace: Option<&Trace>, stats: Option<SamplerStats>, started: String) -> PhaseProvenance {
    let stats = stats.unwrap_or_default();
    PhaseProvenance {
        phase: phase.to_string(),
        trace_file: trace_file.into(),
        samples: trace.map_or(0, Trace::len),
        ticks: stats.ticks,
        stalled_reads: stats.stalled,
        failed_reads: stats.failed,
        started_utc: started,
        finished_utc: utc_now(),
    }
}

/// Runs the configured phases and writes every artifact. A failing phase
/// stops the run but its partial trace and metrics are still written and
/// the report is marked incomplete. Errors are returned only for problems
/// that prevent a report altogether (bad config, backend unavailable, IO).
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let out = config.output_dir.as_path();
    std::fs::create_dir_all(out).at(out)?;
    let config_text = config.to_toml();
    std::fs::write(out.join("config.toml"), &config_text).at(out.join("config.toml"))?;
    let started_utc = utc_now();

    let registry = match &config.registry_file {
        Some(p) => workload::read_registry(p)?,
        None => IdentifierRegistry::new(),
    };
    let prompts = match &config.prompt_file {
        Some(p) => workload::read_prompts(p)?,
        None => vec![config.instance_prompt.clone()],
    };
    let checkpoint = config.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let mut ctx = Context {
        config,
        out,
        registry,
        prompts,
        checkpoint,
        threads: workload::default_threads(),
    };

    let mut records = Vec::new();
    let mut traces = Vec::new();
    let mut phases = Vec::new();
    let mut error: Option<String> = None;
    for &p in &config.phases {
        let phase: Phase = p.into();
        let trace_file = format!("trace_{phase}.csv");
        let backend = backend_for(&config.telemetry, &config.variant, phase)?;
        let options = SamplerOptions::new(config.variant.clone(), phase, config.telemetry.interval_s).csv(out.join(&trace_file));
        let phase_started = utc_now();
        let mut sampler = Sampler::start(backend, options)?;
        let result = ctx.run_phase(phase);
        let trace = sampler.stop();
        phases.push(phase_provenance(phase, &trace_file, trace.as_ref().ok(), sampler.stats(), phase_started));
        let images = match result {
            Ok(n) => n,
            Err(e) => {
                error = Some(format!("{phase}: {e}"));
                0
            }
        };
        match trace.and_then(|t| Ok((summarize(&t, images)?, t))) {
            Ok((metrics, t)) => {
                records.push(RunRecord {
                    phase,
                    metrics,
                    perceptual_score: None,
                    trace_file,
                });
                traces.push(t);
            }
            Err(e) => {
                error.get_or_insert_with(|| format!("{phase} telemetry: {e}"));
            }
        }
        if error.is_some() {
            break;
        }
    }

    if error.is_none() {
        if let Some(rec) = records.iter_mut().find(|r| r.phase == Phase::Inference) {
            let images = workload::list_images(&ctx.images_dir())?;
            if let (Some(real), false) = (config.real_manifest(), images.is_empty()) {
                match workload::evaluate(real, &images, config.eval.size, config.eval.extractor_seed, ctx.threads) {
                    Ok(eval) => {
                        workload::write_pairs_csv(&eval, &out.join("lpips_pairs.csv"), out)?;
                        rec.perceptual_score = Some(eval.score.mean);
                    }
                    Err(e) => error = Some(format!("evaluation: {e}")),
                }
            }
        }
    }

    report::write_report_files(out, &records, None)?;
    let plots = out.join("plots");
    std::fs::create_dir_all(&plots).at(&plots)?;
    for t in &traces {
        let p = plots.join(format!("trace_{}.svg", t.phase()));
        std::fs::write(&p, report::trace_svg(t)).at(&p)?;
    }

    let provenance = Provenance {
        tool: format!("cropbench {}", env!("CARGO_PKG_VERSION")),
        variant: config.variant.clone(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: config.seed,
        started_utc,
        finished_utc: utc_now(),
        complete: error.is_none(),
        error,
        phases,
    };
    let prov_path = out.join("provenance.json");
    std::fs::write(&prov_path, serde_json::to_string_pretty(&provenance).expect("serializes")).at(&prov_path)?;
    Ok(BenchReport {
        out_dir: out.to_path_buf(),
        records,
        traces,
        loss_history: ctx.checkpoint.map(|c| c.loss_history).unwrap_or_default(),
        provenance,
    })
}

/// Recomputes metrics from a run directory's persisted traces, with the
/// image counts and scores recorded in its `metrics.csv`.
pub fn recompute_records(run_dir: &Path, interval_s: f64) -> Result<Vec<RunRecord>> {
    let stored = report::read_metrics_csv(&run_dir.join("metrics.csv"))?;
    stored
        .into_iter()
        .map(|r| {
            let meta = TraceMeta {
                label: r.metrics.label.clone(),
                interval_s,
                phase: r.phase,
            };
            let trace = read_csv(&run_dir.join(&r.trace_file), meta)?;
            Ok(RunRecord {
                metrics: summarize(&trace, r.metrics.images_generated)?,
                ..r
            })
        })
        .collect()
}
