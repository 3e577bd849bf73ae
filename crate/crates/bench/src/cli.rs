//! `cropbench` command line.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 workload failure
//! (partial artifacts are left in place), 3 telemetry backend unavailable.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cropbench_core::dataset::{lint_combined, Source, View};
use cropbench_core::energy::summarize;
use cropbench_core::telemetry::Phase;

use crate::bench::{backend_for, run_bench, run_external};
use crate::checkpoint::Checkpoint;
use crate::config::{BackendKind, BenchConfig, PhaseName, WorkloadConfig};
use crate::dataset::{check_files, ingest, read_manifest, IngestOptions};
use crate::error::{BenchError, Result};
use crate::report::{self, RunRecord};
use crate::sampler::{Sampler, SamplerOptions};
use crate::trace_csv::{default_meta, read_csv};
use crate::workload::{self, GenerateJob, TrainJob};

#[derive(Debug, Parser)]
#[command(name = "cropbench", version, about = "Desk-scale benchmark harness for fine-tuned image generators")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Resize a directory of images into a manifest, or lint manifests.
    Prepare(PrepareArgs),
    /// Train the toy model without telemetry.
    Train,
    /// Generate images from a checkpoint without telemetry.
    Generate(GenerateArgs),
    /// Record a telemetry trace, optionally around a command.
    Monitor(MonitorArgs),
    /// Perceptual score of generated images against a manifest.
    Eval(EvalArgs),
    /// Combine run directories and trace files into one report.
    Report(ReportArgs),
    /// Run every configured phase under telemetry and write the report.
    Bench,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ViewArg {
    Canopy,
    CloseUp,
    UnderLeaf,
    Aerial,
}

impl From<ViewArg> for View {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Canopy => View::Canopy,
            ViewArg::CloseUp => View::CloseUp,
            ViewArg::UnderLeaf => View::UnderLeaf,
            ViewArg::Aerial => View::Aerial,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    Field,
    OpenAccess,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PhaseArg {
    Training,
    Inference,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Training => Phase::Training,
            PhaseArg::Inference => Phase::Inference,
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory of raw images.
    #[arg(long, required_unless_present = "lint")]
    pub source: Option<PathBuf>,
    /// Class label, optionally crop-qualified (`watermelon:anthracnose`).
    #[arg(long = "class", required_unless_present = "lint")]
    pub class_label: Option<String>,
    #[arg(long, value_enum, default_value = "close-up")]
    pub view: ViewArg,
    #[arg(long = "origin", value_enum, default_value = "field")]
    pub origin: SourceArg,
    /// Square target size in pixels.
    #[arg(long, default_value_t = 1024)]
    pub resolution: u32,
    /// Lint these manifests (as one training set) instead of ingesting.
    #[arg(long, num_args = 1..)]
    pub lint: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Defaults to the configured checkpoint, then `<out>/checkpoint.json`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[arg(long, value_enum, default_value = "inference")]
    pub phase: PhaseArg,
    #[arg(long)]
    pub interval: Option<f64>,
    /// Sample for this many seconds when no command is given.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    /// Use the synthetic backend regardless of the configuration.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub label: Option<String>,
    /// Command to run while sampling.
    #[arg(last = true)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference manifest; defaults to the configured one.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Directory of generated images; defaults to `<out>/images`.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories containing `metrics.csv`.
    pub runs: Vec<PathBuf>,
    /// Loose trace CSVs; the label is the file stem.
    #[arg(long = "trace")]
    pub traces: Vec<PathBuf>,
    /// Phase assigned to loose traces.
    #[arg(long, value_enum, default_value = "inference")]
    pub phase: PhaseArg,
    /// Image count assigned to loose traces.
    #[arg(long, default_value_t = 0)]
    pub images: u64,
    /// Variant the ratios are taken against.
    #[arg(long)]
    pub baseline: Option<String>,
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut config = match &cli.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn out_dir(config: &BenchConfig) -> Result<&Path> {
    let out = config.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    Ok(out)
}

fn prepare(cli: &Cli, args: &PrepareArgs) -> Result<()> {
    if !args.lint.is_empty() {
        let manifests = args.lint.iter().map(|p| read_manifest(p)).collect::<Result<Vec<_>>>()?;
        for (path, m) in args.lint.iter().zip(&manifests) {
            for problem in check_files(path, m) {
                println!("file: {problem}");
            }
        }
        let refs: Vec<_> = manifests.iter().collect();
        let violations = lint_combined(&refs);
        for v in &violations {
            println!("violation: {v}");
        }
        if violations.is_empty() {
            println!("no violations");
        }
        return Ok(());
    }
    let config = load_config(cli)?;
    let options = IngestOptions {
        class_label: args.class_label.clone().unwrap_or_default(),
        source: match args.origin {
            SourceArg::Field => Source::Field,
            SourceArg::OpenAccess => Source::OpenAccess,
        },
        view: args.view.into(),
        target_resolution: (args.resolution, args.resolution),
    };
    let source = args.source.as_deref().unwrap_or(Path::new("."));
    let outcome = ingest(source, out_dir(&config)?, &options)?;
    for (path, reason) in &outcome.failures {
        eprintln!("skipped {}: {reason}", path.display());
    }
    println!("{} images -> {}", outcome.manifest.len(), outcome.manifest_path.display());
    Ok(())
}

fn train(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    let manifest = config
        .train_manifest
        .as_deref()
        .ok_or_else(|| BenchError::Usage("train_manifest is not configured".into()))?;
    let registry = match &config.registry_file {
        Some(p) => workload::read_registry(p)?,
        None => Default::default(),
    };
    let out = out_dir(&config)?;
    let job = TrainJob {
        model: &config.model,
        train: config.train.to_core(config.seed)?,
        manifest,
        instance_prompt: &config.instance_prompt,
        registry: &registry,
        init_seed: config.seed,
    };
    let ckpt = workload::toy_train(&job, &out.join("loss.csv"))?;
    ckpt.save(&out.join("checkpoint.json"))?;
    if let Some(last) = ckpt.loss_history.last() {
        println!("{} updates, final loss {last:.5}", ckpt.loss_history.len());
    }
    Ok(())
}

fn generate(cli: &Cli, args: &GenerateArgs) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(&config)?;
    let path = args
        .checkpoint
        .clone()
        .or_else(|| config.checkpoint.clone())
        .unwrap_or_else(|| out.join("checkpoint.json"));
    let ckpt = Checkpoint::load(&path)?;
    let prompts = match &config.prompt_file {
        Some(p) => workload::read_prompts(p)?,
        None => vec![config.instance_prompt.clone()],
    };
    let conds = prompts
        .iter()
        .map(|p| workload::embed(p, &ckpt.registry, &ckpt.model_config))
        .collect::<Result<Vec<_>>>()?;
    let schedule = ckpt.schedule()?;
    let job = GenerateJob {
        model: &ckpt.model,
        schedule: &schedule,
        prompts: &conds,
        count: args.count.unwrap_or(config.images_to_generate),
        sample: config.sample.to_core(config.seed),
        threads: workload::default_threads(),
    };
    let paths = workload::toy_generate(&job, &out.join(crate::bench::IMAGES_DIR))?;
    println!("{} images -> {}", paths.len(), out.join(crate::bench::IMAGES_DIR).display());
    Ok(())
}

fn monitor(cli: &Cli, args: &MonitorArgs) -> Result<bool> {
    let mut config = load_config(cli)?;
    if args.synthetic {
        config.telemetry.backend = BackendKind::Synthetic;
    }
    let interval = args.interval.unwrap_or(config.telemetry.interval_s);
    let phase: Phase = args.phase.into();
    let label = args.label.clone().unwrap_or_else(|| config.variant.clone());
    let out = out_dir(&config)?;
    let trace_path = out.join(format!("trace_{phase}.csv"));
    let backend = backend_for(&config.telemetry, &label, phase)?;
    let mut sampler = Sampler::start(backend, SamplerOptions::new(label, phase, interval).csv(&trace_path))?;
    let result = if args.command.is_empty() {
        std::thread::sleep(Duration::from_secs_f64(args.duration.max(0.0)));
        Ok(())
    } else {
        let w = WorkloadConfig {
            command: args.command.clone(),
            images_dir: "images".into(),
        };
        run_external(&w, out, phase)
    };
    let trace = sampler.stop()?;
    println!("{} samples -> {}", trace.len(), trace_path.display());
    if trace.len() >= 2 {
        let m = summarize(&trace, 0)?;
        println!(
            "peak {} MiB, average {:.1} W, {:.4} kWh over {:.1} s",
            m.peak_memory_mib,
            m.avg_power_w,
            m.energy_kwh,
            trace.span_s()
        );
    }
    match result {
        Ok(()) => Ok(true),
        Err(e) => {
            eprintln!("{e}");
            Ok(false)
        }
    }
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let config = load_config(cli)?;
    let out = out_dir(&config)?;
    let real = args
        .real
        .clone()
        .or_else(|| config.real_manifest().map(Path::to_path_buf))
        .ok_or_else(|| BenchError::Usage("no reference manifest (--real)".into()))?;
    let images_dir = args.images.clone().unwrap_or_else(|| out.join(crate::bench::IMAGES_DIR));
    let images = workload::list_images(&images_dir)?;
    let size = args.size.unwrap_or(config.eval.size);
    let result = workload::evaluate(&real, &images, size, config.eval.extractor_seed, workload::default_threads())?;
    workload::write_pairs_csv(&result, &out.join("lpips_pairs.csv"), out)?;
    println!("perceptual score {:.2} over {} images", result.score.mean, images.len());
    Ok(())
}

fn report_cmd(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let config = load_config(cli)?;
    let mut records: Vec<RunRecord> = Vec::new();
    let mut traces = Vec::new();
    for dir in &args.runs {
        for mut r in report::read_metrics_csv(&dir.join("metrics.csv"))? {
            let meta = crate::trace_csv::TraceMeta {
                label: r.metrics.label.clone(),
                interval_s: config.telemetry.interval_s,
                phase: r.phase,
            };
            let trace_path = dir.join(&r.trace_file);
            if let Ok(t) = read_csv(&trace_path, meta) {
                traces.push(t);
            }
            r.trace_file = trace_path.display().to_string();
            records.push(r);
        }
    }
    for path in &args.traces {
        let trace = read_csv(path, default_meta(path, args.phase.into()))?;
        records.push(RunRecord {
            phase: trace.phase(),
            metrics: summarize(&trace, args.images)?,
            perceptual_score: None,
            trace_file: path.display().to_string(),
        });
        traces.push(trace);
    }
    if let Some(b) = &args.baseline {
        if !records.iter().any(|r| r.variant() == b) {
            return Err(cropbench_core::Error::BaselineMissing(b.clone()).into());
        }
    }
    let out = out_dir(&config)?;
    report::write_report_files(out, &records, args.baseline.as_deref())?;
    if !traces.is_empty() {
        let plots = out.join("plots");
        std::fs::create_dir_all(&plots).map_err(|e| BenchError::io(&plots, e))?;
        for t in &traces {
            let p = plots.join(format!("trace_{}_{}.svg", sanitize(t.label()), t.phase()));
            std::fs::write(&p, report::trace_svg(t)).map_err(|e| BenchError::io(&p, e))?;
        }
    }
    print!("{}", report::render_text(&records, args.baseline.as_deref()));
    Ok(())
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn bench(cli: &Cli) -> Result<bool> {
    let config = load_config(cli)?;
    let report = run_bench(&config)?;
    print!("{}", report::render_text(&report.records, None));
    if let Some(e) = &report.provenance.error {
        eprintln!("incomplete run: {e}");
    }
    println!("artifacts in {}", report.out_dir.display());
    Ok(report.complete())
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Cmd::Prepare(a) => prepare(cli, a).map(|_| true),
        Cmd::Train => train(cli).map(|_| true),
        Cmd::Generate(a) => generate(cli, a).map(|_| true),
        Cmd::Monitor(a) => monitor(cli, a),
        Cmd::Eval(a) => eval(cli, a).map(|_| true),
        Cmd::Report(a) => report_cmd(cli, a).map(|_| true),
        Cmd::Bench => bench(cli),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

#[allow(dead_code)]
fn _phase_name_is_exhaustive(p: PhaseName) -> Phase {
    p.into()
}
