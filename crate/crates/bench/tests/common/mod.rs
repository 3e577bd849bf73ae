#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cropbench::dataset::{ingest, IngestOptions};
use cropbench_core::dataset::{Source, View};
use cropbench_core::rng;
use cropbench_core::telemetry::{Phase, Reading, Trace};
use image::{Rgb, RgbImage};
use rand::Rng;

/// A green leaf on a light background with a few brown lesions.
pub fn leaf_image(seed: u64, width: u32, height: u32) -> RgbImage {
    let mut r = rng::seeded(seed);
    let (cx, cy) = (r.random_range(0.4..0.6), r.random_range(0.4..0.6));
    let (ax, ay) = (r.random_range(0.3..0.45), r.random_range(0.2..0.35));
    let spots: Vec<(f64, f64, f64)> = (0..r.random_range(2..6))
        .map(|_| (r.random_range(0.3..0.7), r.random_range(0.3..0.7), r.random_range(0.03..0.08)))
        .collect();
    RgbImage::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let inside = ((u - cx) / ax).powi(2) + ((v - cy) / ay).powi(2) < 1.0;
        if !inside {
            return Rgb([225, 230, 215]);
        }
        if spots.iter().any(|&(sx, sy, sr)| (u - sx).powi(2) + (v - sy).powi(2) < sr * sr) {
            return Rgb([110, 70, 35]);
        }
        let shade = (40.0 * (12.0 * v).sin()) as i32;
        Rgb([(50 + shade / 2) as u8, (140 + shade) as u8, 60])
    })
}

/// Writes `n` raw leaf images of mixed sizes under `dir/raw` and ingests
/// them at `size × size`; returns the manifest path.
pub fn leaf_dataset(dir: &Path, n: usize, size: u32) -> PathBuf {
    let raw = dir.join("raw");
    std::fs::create_dir_all(&raw).unwrap();
    for i in 0..n {
        let (w, h) = [(48, 40), (40, 40), (64, 48)][i % 3];
        leaf_image(i as u64, w, h).save(raw.join(format!("leaf_{i:03}.png"))).unwrap();
    }
    let opts = IngestOptions {
        class_label: "watermelon:anthracnose".into(),
        source: Source::Field,
        view: View::CloseUp,
        target_resolution: (size, size),
    };
    ingest(&raw, &dir.join("train"), &opts).unwrap().manifest_path
}

pub fn constant_trace(label: &str, phase: Phase, n: usize, memory_mib: u64, power_w: f64) -> Trace {
    let samples = (0..n)
        .map(|i| {
            Reading {
                memory_mib,
                power_w,
                gpu_util_pct: 90,
            }
            .at(i as f64, format!("2026-03-01T00:{:02}:{:02}.000Z", i / 60 % 60, i % 60))
        })
        .collect();
    Trace::new(label, 1.0, phase, samples).unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("bench.toml");
    std::fs::write(&p, text).unwrap();
    p
}

/// TOML string literal for a path.
pub fn lit(p: &Path) -> String {
    format!("{:?}", p.display().to_string())
}
