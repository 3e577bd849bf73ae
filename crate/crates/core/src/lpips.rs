//! Perceptual distance from multi-layer feature maps.
//!
//! The extractor is a stack of stride-2 3×3 convolutions with ReLU whose
//! weights are drawn from a seed rather than learned. Feature vectors are
//! unit-normalized across channels at every position, compared with a
//! squared L2 distance, averaged over positions, combined with per-layer
//! weights and clamped to `[0, 1]`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::nn::{self, ConvShape, Padding};
use crate::rng;

pub const DEFAULT_STAGE_CHANNELS: [usize; 3] = [8, 16, 32];
const STRIDE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub shape: ConvShape,
    /// `out × in × 3 × 3`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Stage {
    pub fn new(in_channels: usize, out_channels: usize, height: usize, width: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let shape = ConvShape {
            in_channels,
            out_channels,
            height,
            width,
            stride: STRIDE,
        };
        if weight.len() != shape.weight_len() {
            return Err(Error::DimensionMismatch {
                what: "stage weight",
                expected: shape.weight_len(),
                got: weight.len(),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::DimensionMismatch {
                what: "stage bias",
                expected: out_channels,
                got: bias.len(),
            });
        }
        if height < 2 || width < 2 {
            return Err(Error::InvalidConfig(format!("stage input {height}×{width} is too small to downsample")));
        }
        Ok(Self { shape, weight, bias })
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = nn::conv3x3(&self.shape, input, &self.weight, &self.bias, Padding::Replicate);
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    input: (usize, usize, usize),
    stages: Vec<Stage>,
    layer_weights: Vec<f64>,
}

impl FeatureExtractor {
    /// Seeded extractor with the default three stages and uniform layer
    /// weights.
    pub fn seeded(input: (usize, usize, usize), seed: u64) -> Result<Self> {
        Self::seeded_with(input, &DEFAULT_STAGE_CHANNELS, seed)
    }

    /// Seeded extractor with one stage per entry of `channels`; at least
    /// three stages are required.
    pub fn seeded_with(input: (usize, usize, usize), channels: &[usize], seed: u64) -> Result<Self> {
        if channels.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "a seeded extractor needs at least 3 stages, got {}",
                channels.len()
            )));
        }
        let mut r = rng::seeded(seed);
        let (mut c, mut h, mut w) = input;
        let mut stages = Vec::with_capacity(channels.len());
        for &oc in channels {
            let std = libm::sqrt(2.0 / (9 * c) as f64);
            let weight = rng::normal_vec(&mut r, oc * c * 9, std);
            let bias = rng::normal_vec(&mut r, oc, 0.1);
            let stage = Stage::new(c, oc, h, w, weight, bias)?;
            (c, h, w) = (oc, stage.shape.out_height(), stage.shape.out_width());
            stages.push(stage);
        }
        let n = stages.len();
        Self::from_stages(input, stages, alloc::vec![1.0 / n as f64; n])
    }

    /// Extractor with explicit stages and layer weights. Weights must be
    /// nonnegative and sum to one.
    pub fn from_stages(input: (usize, usize, usize), stages: Vec<Stage>, layer_weights: Vec<f64>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("extractor has no stages".into()));
        }
        if layer_weights.len() != stages.len() {
            return Err(Error::DimensionMismatch {
                what: "layer weights",
                expected: stages.len(),
                got: layer_weights.len(),
            });
        }
        let sum: f64 = layer_weights.iter().sum();
        if layer_weights.iter().any(|w| !(*w >= 0.0)) || libm::fabs(sum - 1.0) > 1e-12 {
            return Err(Error::InvalidConfig("layer weights must be nonnegative and sum to 1".into()));
        }
        let (mut c, mut h, mut w) = input;
        for (i, s) in stages.iter().enumerate() {
            if (s.shape.in_channels, s.shape.height, s.shape.width) != (c, h, w) {
                return Err(Error::InvalidConfig(format!("stage {i} input does not match the previous output")));
            }
            (c, h, w) = (s.shape.out_channels, s.shape.out_height(), s.shape.out_width());
        }
        Ok(Self { input, stages, layer_weights })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    /// One normalized feature map per stage.
    pub fn extract(&self, image: &ImageGrid) -> Result<Vec<ImageGrid>> {
        image.ensure_shape(self.input)?;
        let mut act = image.values().to_vec();
        let mut maps = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            act = stage.forward(&act);
            let s = stage.shape;
            let mut normed = act.clone();
            normalize_channels(&mut normed, s.out_channels, s.out_height() * s.out_width());
            maps.push(ImageGrid::new(s.out_channels, s.out_height(), s.out_width(), normed)?);
        }
        Ok(maps)
    }

    pub fn score(&self, a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
        a.ensure_same_shape(b)?;
        Ok(self.feature_distance(&self.extract(a)?, &self.extract(b)?))
    }

    /// Score between two precomputed feature stacks from this extractor.
    pub fn feature_distance(&self, fa: &[ImageGrid], fb: &[ImageGrid]) -> f64 {
        let mut total = 0.0;
        for ((a, b), wl) in fa.iter().zip(fb).zip(&self.layer_weights) {
            let positions = a.height() * a.width();
            let sq: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
            total += wl * sq / positions as f64;
        }
        total.clamp(0.0, 1.0)
    }
}

/// Scales each position's channel vector to unit length; all-zero vectors
/// stay zero.
fn normalize_channels(values: &mut [f64], channels: usize, positions: usize) {
    for p in 0..positions {
        let norm = libm::sqrt((0..channels).map(|c| values[c * positions + p] * values[c * positions + p]).sum::<f64>());
        if norm > 0.0 {
            for c in 0..channels {
                values[c * positions + p] /= norm;
            }
        }
    }
}

pub fn extract_features(extractor: &FeatureExtractor, image: &ImageGrid) -> Result<Vec<ImageGrid>> {
    extractor.extract(image)
}

pub fn lpips_score(extractor: &FeatureExtractor, a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    extractor.score(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub synthetic: usize,
    /// Index of the nearest real image; ties go to the lowest index.
    pub real: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusScore {
    pub mean: f64,
    pub pairs: Vec<PairScore>,
}

/// Pairs every synthetic image with its nearest real image and averages
/// the resulting scores.
pub fn corpus_score(extractor: &FeatureExtractor, real: &[ImageGrid], synthetic: &[ImageGrid]) -> Result<CorpusScore> {
    let real_f = real.iter().map(|i| extractor.extract(i)).collect::<Result<Vec<_>>>()?;
    let synth_f = synthetic.iter().map(|i| extractor.extract(i)).collect::<Result<Vec<_>>>()?;
    corpus_score_from_features(extractor, &real_f, &synth_f)
}

/// [`corpus_score`] over feature stacks already produced by `extractor`.
pub fn corpus_score_from_features(extractor: &FeatureExtractor, real: &[Vec<ImageGrid>], synthetic: &[Vec<ImageGrid>]) -> Result<CorpusScore> {
    if real.is_empty() {
        return Err(Error::EmptyImageSet("real"));
    }
    if synthetic.is_empty() {
        return Err(Error::EmptyImageSet("synthetic"));
    }
    let pairs: Vec<PairScore> = synthetic
        .iter()
        .enumerate()
        .map(|(si, sf)| {
            let mut best = PairScore {
                synthetic: si,
                real: 0,
                score: f64::INFINITY,
            };
            for (ri, rf) in real.iter().enumerate() {
                let s = extractor.feature_distance(sf, rf);
                if s < best.score {
                    best.real = ri;
                    best.score = s;
                }
            }
            best
        })
        .collect();
    let mean = pairs.iter().map(|p| p.score).sum::<f64>() / pairs.len() as f64;
    Ok(CorpusScore { mean, pairs })
}
