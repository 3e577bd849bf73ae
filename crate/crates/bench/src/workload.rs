//! The toy diffusion workload and its evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cropbench_core::denoiser::Denoiser;
use cropbench_core::grid::ImageGrid;
use cropbench_core::lpips::{corpus_score_from_features, CorpusScore, FeatureExtractor};
use cropbench_core::prompt::{embed_prompt, parse_prompt, IdentifierRegistry};
use cropbench_core::sample::{sample, SampleConfig};
use cropbench_core::schedule::NoiseSchedule;
use cropbench_core::train::{train_with_progress, TrainConfig, TrainExample};
use image::DynamicImage;

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::dataset::{fit, read_manifest, resolve};
use crate::error::{BenchError, IoContext, Result};
use crate::imageio;

/// Non-empty lines that are not `#` comments.
pub fn read_prompts(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).at(path)?;
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    if prompts.is_empty() {
        return Err(BenchError::format(path, "no prompts"));
    }
    Ok(prompts)
}

pub fn read_registry(path: &Path) -> Result<IdentifierRegistry> {
    let text = fs::read_to_string(path).at(path)?;
    IdentifierRegistry::parse(&text).map_err(|e| BenchError::format(path, e.to_string()))
}

pub fn embed(prompt: &str, registry: &IdentifierRegistry, model: &ModelConfig) -> Result<Vec<f64>> {
    let ast = parse_prompt(prompt, registry)?;
    Ok(embed_prompt(&ast, model.vocab_seed, model.cond_dim))
}

/// Loads an image file fitted to `width × height` as a `[-1, 1]` grid.
pub fn load_fitted(path: &Path, size: (u32, u32)) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|source| BenchError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(imageio::to_grid(&fit(&DynamicImage::into_rgb8(img), size)))
}

fn manifest_images(manifest_path: &Path, size: (u32, u32)) -> Result<Vec<ImageGrid>> {
    let manifest = read_manifest(manifest_path)?;
    if manifest.is_empty() {
        return Err(cropbench_core::Error::EmptyDataset.into());
    }
    manifest.entries.iter().map(|e| load_fitted(&resolve(manifest_path, e), size)).collect()
}

pub struct TrainJob<'a> {
    pub model: &'a ModelConfig,
    pub train: TrainConfig,
    pub manifest: &'a Path,
    pub instance_prompt: &'a str,
    pub registry: &'a IdentifierRegistry,
    pub init_seed: u64,
}

/// Trains the toy denoiser on a manifest; every image is paired with the
/// instance prompt. Per-update losses go to `loss_csv` as they happen.
pub fn toy_train(job: &TrainJob<'_>, loss_csv: &Path) -> Result<Checkpoint> {
    let m = job.model;
    if m.channels != 3 {
        return Err(BenchError::Usage("the toy workload trains on RGB images (channels = 3)".into()));
    }
    let images = manifest_images(job.manifest, (m.width as u32, m.height as u32))?;
    let cond = embed(job.instance_prompt, job.registry, m)?;
    let dataset: Vec<TrainExample> = images.into_iter().map(|image| TrainExample { image, cond: cond.clone() }).collect();
    let model = Denoiser::new(m.denoiser(), job.init_seed)?;
    let schedule = cropbench_core::schedule::make_schedule(m.num_steps, m.beta_start, m.beta_end)?;
    let mut log = std::io::BufWriter::new(fs::File::create(loss_csv).at(loss_csv)?);
    writeln!(log, "update,loss").at(loss_csv)?;
    let mut log_err = None;
    let outcome = train_with_progress(model, &dataset, &schedule, &job.train, |k, loss| {
        if log_err.is_none() {
            log_err = writeln!(log, "{k},{loss}").err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(BenchError::io(loss_csv, e));
    }
    log.flush().at(loss_csv)?;
    Ok(Checkpoint {
        model_config: m.clone(),
        model: outcome.model,
        train: job.train.clone(),
        registry: job.registry.clone(),
        loss_history: outcome.loss_history,
    })
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| BenchError::format(path, e.to_string()))?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| BenchError::format(path, e.to_string()))?;
            r.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| BenchError::format(path, "bad loss row"))
        })
        .collect()
}

pub struct GenerateJob<'a> {
    pub model: &'a Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub prompts: &'a [Vec<f64>],
    pub count: usize,
    pub sample: SampleConfig,
    pub threads: usize,
}

/// File name of the `i`-th generated image.
pub fn image_name(i: usize) -> String {
    format!("generated_{i:04}.png")
}

/// Generates `count` images, cycling through the prompts. Image `i` uses
/// seed `sample.seed + i`, so results do not depend on the thread count.
pub fn toy_generate(job: &GenerateJob<'_>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let shape = job.model.config().image_shape();
    let uncond = vec![0.0; job.model.config().cond_dim];
    let threads = job.threads.clamp(1, job.count.max(1));
    let paths: Vec<PathBuf> = (0..job.count).map(|i| out_dir.join(image_name(i))).collect();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..threads)
            .map(|w| {
                let (uncond, paths) = (&uncond, &paths);
                scope.spawn(move || -> Result<()> {
                    for i in (w..job.count).step_by(threads) {
                        let cfg = SampleConfig {
                            seed: job.sample.seed.wrapping_add(i as u64),
                            ..job.sample
                        };
                        let cond = &job.prompts[i % job.prompts.len()];
                        let img = sample(job.model, shape, job.schedule, cond, uncond, &cfg)?;
                        imageio::save_grid(&img, &paths[i])?;
                    }
                    Ok(())
                })
            })
            .collect();
        workers
            .into_iter()
            .try_for_each(|h| h.join().map_err(|_| BenchError::Workload("generation thread panicked".into()))?)
    })?;
    Ok(paths)
}

/// Image files in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    Ok(out)
}

fn features(extractor: &FeatureExtractor, images: &[ImageGrid], threads: usize) -> Result<Vec<Vec<ImageGrid>>> {
    let chunk = images.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = images
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|i| extractor.extract(i)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for h in handles {
            out.extend(h.join().map_err(|_| BenchError::Workload("feature thread panicked".into()))??);
        }
        Ok(out)
    })
}

pub struct Evaluation {
    pub score: CorpusScore,
    pub real: Vec<PathBuf>,
    pub synthetic: Vec<PathBuf>,
}

/// Perceptual corpus score of generated images against a reference
/// manifest, both fitted to `size × size`.
pub fn evaluate(real_manifest: &Path, synthetic: &[PathBuf], size: u32, extractor_seed: u64, threads: usize) -> Result<Evaluation> {
    let manifest = read_manifest(real_manifest)?;
    let real_paths: Vec<PathBuf> = manifest.entries.iter().map(|e| resolve(real_manifest, e)).collect();
    let load = |paths: &[PathBuf]| paths.iter().map(|p| load_fitted(p, (size, size))).collect::<Result<Vec<_>>>();
    let extractor = FeatureExtractor::seeded((3, size as usize, size as usize), extractor_seed)?;
    let real_f = features(&extractor, &load(&real_paths)?, threads)?;
    let synth_f = features(&extractor, &load(synthetic)?, threads)?;
    Ok(Evaluation {
        score: corpus_score_from_features(&extractor, &real_f, &synth_f)?,
        real: real_paths,
        synthetic: synthetic.to_vec(),
    })
}

/// Per-pair scores: `synthetic,real,score`.
pub fn write_pairs_csv(eval: &Evaluation, path: &Path, base: &Path) -> Result<()> {
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::format(path, e.to_string()))?;
    let fail = |e: csv::Error| BenchError::format(path, e.to_string());
    w.write_record(["synthetic", "real", "score"]).map_err(fail)?;
    for p in &eval.score.pairs {
        w.write_record([rel(&eval.synthetic[p.synthetic]), rel(&eval.real[p.real]), p.score.to_string()])
            .map_err(fail)?;
    }
    w.flush().at(path)
}

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
