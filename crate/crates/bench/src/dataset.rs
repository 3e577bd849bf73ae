//! Manifest files and image ingest.
//!
//! Manifest format, one tab-separated record per line after a version line:
//!
//! ```text
//! #cropbench-manifest v1
//! #resolution 1024 1024
//! images/a.png  anthracnose  field  close-up  1024  1024
//! ```
//!
//! Paths are relative to the manifest's directory unless absolute.

use std::fs;
use std::path::{Path, PathBuf};

use cropbench_core::dataset::{self, DatasetManifest, ManifestEntry, Source, View};
use cropbench_core::grid::ImageGrid;
use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};

use crate::error::{BenchError, IoContext, Result};
use crate::imageio;

pub const MANIFEST_MAGIC: &str = "#cropbench-manifest v1";
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "JPG", "JPEG", "PNG"];

pub fn format_manifest(m: &DatasetManifest) -> String {
    let mut out = format!("{MANIFEST_MAGIC}\n#resolution {} {}\n", m.target_resolution.0, m.target_resolution.1);
    for e in &m.entries {
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", e.path, e.class_label, e.source, e.view, e.width, e.height));
    }
    out
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<DatasetManifest> {
    let bad = |line: usize, msg: String| BenchError::format(origin, format!("line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim_end() == MANIFEST_MAGIC => {}
        _ => return Err(bad(1, format!("expected `{MANIFEST_MAGIC}`"))),
    }
    let mut manifest = DatasetManifest::default();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#resolution") {
            let dims: Vec<u32> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(n, "bad resolution".into()))?;
            match dims.as_slice() {
                [w, h] if *w > 0 && *h > 0 => manifest.target_resolution = (*w, *h),
                _ => return Err(bad(n, "resolution needs two positive integers".into())),
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(bad(n, format!("expected 6 tab-separated fields, found {}", f.len())));
        }
        dataset::validate_class_label(f[1]).map_err(|e| bad(n, e.to_string()))?;
        manifest.entries.push(ManifestEntry {
            path: f[0].to_string(),
            class_label: f[1].to_string(),
            source: Source::parse(f[2]).map_err(|e| bad(n, e.to_string()))?,
            view: View::parse(f[3]).map_err(|e| bad(n, e.to_string()))?,
            width: f[4].parse().map_err(|_| bad(n, "bad width".into()))?,
            height: f[5].parse().map_err(|_| bad(n, "bad height".into()))?,
        });
    }
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).at(path)?;
    parse_manifest(&text, path)
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, format_manifest(m)).at(path)
}

pub fn resolve(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Problems with the files a manifest points at.
pub fn check_files(manifest_path: &Path, manifest: &DatasetManifest) -> Vec<String> {
    let mut problems = Vec::new();
    for e in &manifest.entries {
        let p = resolve(manifest_path, e);
        match image::image_dimensions(&p) {
            Ok(dims) if dims == (e.width, e.height) => {}
            Ok((w, h)) => problems.push(format!("{}: recorded {}x{}, file is {w}x{h}", e.path, e.width, e.height)),
            Err(err) => problems.push(format!("{}: {err}", e.path)),
        }
    }
    problems
}

/// Loads every manifest image as a `[-1, 1]` grid.
pub fn load_images(manifest_path: &Path, manifest: &DatasetManifest) -> Result<Vec<ImageGrid>> {
    manifest.entries.iter().map(|e| imageio::load_grid(&resolve(manifest_path, e))).collect()
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub class_label: String,
    pub source: Source,
    pub view: View,
    pub target_resolution: (u32, u32),
}

#[derive(Debug)]
pub struct IngestOutcome {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    /// Files that could not be decoded, with the reason; ingest continues
    /// past them.
    pub failures: Vec<(PathBuf, String)>,
}

/// Center-crops to the target aspect ratio, then scales bilinearly. Images
/// already at the target size are returned unchanged.
pub fn fit(img: &RgbImage, target: (u32, u32)) -> RgbImage {
    if img.dimensions() == target {
        return img.clone();
    }
    let (x, y, w, h) = dataset::center_crop_window(img.width(), img.height(), target);
    let cropped = image::imageops::crop_imm(img, x, y, w, h).to_image();
    if cropped.dimensions() == target {
        return cropped;
    }
    image::imageops::resize(&cropped, target.0, target.1, FilterType::Triangle)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().and_then(|e| e.to_str()).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)))
        .collect();
    files.sort();
    Ok(files)
}

/// Resizes every image in `source_dir` into `out_dir` as PNG and writes
/// `out_dir/manifest.tsv`. Re-running on the output changes nothing.
pub fn ingest(source_dir: &Path, out_dir: &Path, options: &IngestOptions) -> Result<IngestOutcome> {
    dataset::validate_class_label(&options.class_label)?;
    let files = image_files(source_dir)?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut manifest = DatasetManifest::new(options.target_resolution);
    let mut failures = Vec::new();
    for file in files {
        let decoded = image::open(&file).map(DynamicImage::into_rgb8);
        let img = match decoded {
            Ok(img) => img,
            Err(e) => {
                failures.push((file, e.to_string()));
                continue;
            }
        };
        let fitted = fit(&img, options.target_resolution);
        let name = format!("{}.png", file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let dest = out_dir.join(&name);
        let same_file = fs::canonicalize(&file).ok() == fs::canonicalize(&dest).ok();
        if !(same_file && fitted == img) {
            fitted.save(&dest).map_err(|source| BenchError::Image { path: dest.clone(), source })?;
        }
        manifest.entries.push(ManifestEntry {
            path: name,
            class_label: options.class_label.clone(),
            source: options.source,
            view: options.view,
            width: fitted.width(),
            height: fitted.height(),
        });
    }
    if manifest.entries.is_empty() {
        return Err(cropbench_core::Error::EmptyDataset.into());
    }
    let manifest_path = out_dir.join("manifest.tsv");
    write_manifest(&manifest, &manifest_path)?;
    Ok(IngestOutcome {
        manifest,
        manifest_path,
        failures,
    })
}
