//! PNG ↔ `[-1, 1]` RGB grids.

use std::path::Path;

use cropbench_core::grid::ImageGrid;
use image::{DynamicImage, Rgb, RgbImage};

use crate::error::{BenchError, Result};

pub fn to_grid(img: &RgbImage) -> ImageGrid {
    let (w, h) = img.dimensions();
    ImageGrid::from_fn(3, h as usize, w as usize, |c, y, x| {
        f64::from(img.get_pixel(x as u32, y as u32)[c]) / 127.5 - 1.0
    })
    .expect("pixel values are finite")
}

/// Values are clamped to `[-1, 1]` and rounded to 8 bits. One-channel
/// grids are written as gray.
pub fn to_rgb(grid: &ImageGrid) -> RgbImage {
    let (c, h, w) = grid.shape();
    let byte = |v: f64| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |ch: usize| byte(grid.get(ch.min(c - 1), y as usize, x as usize));
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn load_grid(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|source| BenchError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(to_grid(&DynamicImage::into_rgb8(img)))
}

pub fn save_grid(grid: &ImageGrid, path: &Path) -> Result<()> {
    to_rgb(grid).save(path).map_err(|source| BenchError::Image {
        path: path.to_path_buf(),
        source,
    })
}
