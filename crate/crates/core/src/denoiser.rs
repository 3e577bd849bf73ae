//! Desk-scale noise-prediction network with analytic gradients.
//!
//! Architecture, for an input `x_t` of shape `(C, H, W)`:
//!
//! ```text
//! e   = [sinusoid(t) ; cond] W_embed + b_embed             (F)
//! h1  = silu(conv_in(x_t) + e)                             (F, H, W)
//! h2  = silu(conv_down(h1))            stride 2            (F, H/2, W/2)
//! X   = tokens(h2)                                         (N x F)
//! Q,K,V = X W_{q,k,v} (+ scale * (X A) B per adapter)
//! Y   = X + softmax(Q K^T / sqrt(F)) V
//! u   = upsample2(Y) + h1
//! out = conv_out(u)                                        (C, H, W)
//! ```
//!
//! All parameters live in one flat vector described by a layer manifest.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::lora::{LoraAdapter, Matrix, Projection};
use crate::nn::{self, ConvShape, Padding};
use crate::rng;
use crate::schedule::{self, NoiseSchedule};

/// Anything that predicts the noise component of `x_t`.
pub trait NoisePredictor {
    fn predict_noise(&self, xt: &ImageGrid, t: usize, cond: &[f64]) -> Result<ImageGrid>;
}

impl<F> NoisePredictor for F
where
    F: Fn(&ImageGrid, usize, &[f64]) -> Result<ImageGrid>,
{
    fn predict_noise(&self, xt: &ImageGrid, t: usize, cond: &[f64]) -> Result<ImageGrid> {
        self(xt, t, cond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
}

impl Default for DenoiserConfig {
    /// 32x32 RGB, 16 feature channels, 64-dim conditioning.
    fn default() -> Self {
        Self {
            channels: 3,
            height: 32,
            width: 32,
            features: 16,
            time_dim: 16,
            cond_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.channels, self.height, self.width, self.features, self.time_dim, self.cond_dim];
        if positive.contains(&0) {
            return Err(Error::InvalidConfig("denoiser dimensions must be positive".to_string()));
        }
        if !self.height.is_multiple_of(2) || !self.width.is_multiple_of(2) {
            return Err(Error::InvalidConfig("denoiser height and width must be even".to_string()));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::InvalidConfig("time embedding width must be even".to_string()));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn tokens(&self) -> usize {
        (self.height / 2) * (self.width / 2)
    }

    fn conv_in(&self) -> ConvShape {
        ConvShape {
            in_channels: self.channels,
            out_channels: self.features,
            height: self.height,
            width: self.width,
            stride: 1,
        }
    }

    fn conv_down(&self) -> ConvShape {
        ConvShape {
            in_channels: self.features,
            out_channels: self.features,
            height: self.height,
            width: self.width,
            stride: 2,
        }
    }

    fn conv_out(&self) -> ConvShape {
        ConvShape {
            in_channels: self.features,
            out_channels: self.channels,
            height: self.height,
            width: self.width,
            stride: 1,
        }
    }

    /// The layer manifest this configuration implies.
    pub fn manifest(&self) -> Vec<LayerSpec> {
        let (c, f, e) = (self.channels, self.features, self.time_dim + self.cond_dim);
        let shapes: [(&str, Vec<usize>); LAYER_COUNT] = [
            ("embed.weight", vec![e, f]),
            ("embed.bias", vec![f]),
            ("conv_in.weight", vec![f, c, 3, 3]),
            ("conv_in.bias", vec![f]),
            ("conv_down.weight", vec![f, f, 3, 3]),
            ("conv_down.bias", vec![f]),
            ("attn.q", vec![f, f]),
            ("attn.k", vec![f, f]),
            ("attn.v", vec![f, f]),
            ("conv_out.weight", vec![c, f, 3, 3]),
            ("conv_out.bias", vec![c]),
        ];
        let mut offset = 0;
        shapes
            .into_iter()
            .map(|(name, shape)| {
                let spec = LayerSpec {
                    name: name.to_string(),
                    offset,
                    shape,
                };
                offset += spec.len();
                spec
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayerSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

const LAYER_COUNT: usize = 11;
const EMBED_W: usize = 0;
const EMBED_B: usize = 1;
const CONV_IN_W: usize = 2;
const CONV_IN_B: usize = 3;
const DOWN_W: usize = 4;
const DOWN_B: usize = 5;
const ATTN_Q: usize = 6;
const OUT_W: usize = 9;
const OUT_B: usize = 10;

fn attn_layer(p: Projection) -> usize {
    ATTN_Q + p as usize
}

/// Which parameters receive gradients and optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    /// Every base parameter (Dreambooth-style full fine-tuning).
    Base,
    /// Only attached LoRA adapters; base weights stay frozen.
    Adapters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    manifest: Vec<LayerSpec>,
    params: Vec<f64>,
    adapters: [Option<LoraAdapter>; 3],
}

struct Cache {
    emb_in: Vec<f64>,
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    tokens: Vec<f64>,
    low: [Vec<f64>; 3],
    qkv: [Vec<f64>; 3],
    attn: Vec<f64>,
    up: Vec<f64>,
}

impl Denoiser {
    /// Randomly initialized network (LeCun-normal weights, zero biases).
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let manifest = config.manifest();
        let total = manifest.last().map_or(0, |l| l.offset + l.len());
        let mut params = vec![0.0; total];
        let mut rng = rng::seeded(seed);
        for (i, layer) in manifest.iter().enumerate() {
            let fan_in = match i {
                EMBED_W => config.time_dim + config.cond_dim,
                CONV_IN_W => config.channels * 9,
                DOWN_W | OUT_W => config.features * 9,
                i if (ATTN_Q..ATTN_Q + 3).contains(&i) => config.features,
                _ => continue,
            };
            let std = 1.0 / libm::sqrt(fan_in as f64);
            for p in &mut params[layer.range()] {
                *p = std * rng::standard_normal(&mut rng);
            }
        }
        Ok(Self {
            config,
            manifest,
            params,
            adapters: [None, None, None],
        })
    }

    /// Rebuilds a network from a stored manifest and flat parameters.
    pub fn from_parts(config: DenoiserConfig, manifest: Vec<LayerSpec>, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if manifest != config.manifest() {
            return Err(Error::ManifestMismatch("layer manifest differs from the configuration".to_string()));
        }
        let total: usize = manifest.iter().map(LayerSpec::len).sum();
        if params.len() != total {
            return Err(Error::ManifestMismatch(alloc::format!(
                "manifest describes {total} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("denoiser parameters"));
        }
        Ok(Self {
            config,
            manifest,
            params,
            adapters: [None, None, None],
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn manifest(&self) -> &[LayerSpec] {
        &self.manifest
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, index: usize) -> &[f64] {
        &self.params[self.manifest[index].range()]
    }

    /// Zeros the final convolution so every prediction is exactly zero.
    pub fn zero_output_layer(&mut self) {
        for index in [OUT_W, OUT_B] {
            let range = self.manifest[index].range();
            self.params[range].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    /// Dense base weight of one attention projection (`features x features`).
    pub fn projection(&self, p: Projection) -> Matrix {
        let f = self.config.features;
        Matrix::new(f, f, self.layer(attn_layer(p)).to_vec()).expect("manifest sized")
    }

    pub fn attach_lora(&mut self, adapter: LoraAdapter) -> Result<()> {
        let f = self.config.features;
        if adapter.d_in() != f || adapter.d_out() != f {
            return Err(Error::DimensionMismatch {
                what: "lora adapter width",
                expected: f,
                got: adapter.d_in().max(adapter.d_out()),
            });
        }
        let slot = adapter.target() as usize;
        self.adapters[slot] = Some(adapter);
        Ok(())
    }

    pub fn lora(&self, p: Projection) -> Option<&LoraAdapter> {
        self.adapters[p as usize].as_ref()
    }

    pub fn adapters(&self) -> impl Iterator<Item = &LoraAdapter> {
        self.adapters.iter().flatten()
    }

    pub fn detach_lora(&mut self, p: Projection) -> Option<LoraAdapter> {
        self.adapters[p as usize].take()
    }

    /// Folds every adapter into its base projection and removes it.
    pub fn merge_adapters(&mut self) -> Result<()> {
        for p in Projection::ALL {
            if let Some(adapter) = self.adapters[p as usize].take() {
                let merged = crate::lora::merge_lora(&self.projection(p), &adapter)?;
                let range = self.manifest[attn_layer(p)].range();
                self.params[range].copy_from_slice(merged.data());
            }
        }
        Ok(())
    }

    /// Number of parameters an optimizer updates in the given mode.
    pub fn trainable_count(&self, mode: Trainable) -> usize {
        match mode {
            Trainable::Base => self.params.len(),
            Trainable::Adapters => self.adapters().map(LoraAdapter::trainable_parameter_count).sum(),
        }
    }

    /// Mutable views of the trainable parameters, in the order gradients
    /// are laid out by [`Denoiser::loss_and_gradient`].
    pub fn trainable_slices_mut(&mut self, mode: Trainable) -> Vec<&mut [f64]> {
        match mode {
            Trainable::Base => vec![&mut self.params[..]],
            Trainable::Adapters => {
                let mut out = Vec::new();
                for adapter in self.adapters.iter_mut().flatten() {
                    let (a, b) = adapter.factors_mut();
                    out.push(a);
                    out.push(b);
                }
                out
            }
        }
    }

    fn check_inputs(&self, xt: &ImageGrid, cond: &[f64]) -> Result<()> {
        xt.ensure_shape(self.config.image_shape())?;
        if cond.len() != self.config.cond_dim {
            return Err(Error::DimensionMismatch {
                what: "conditioning vector",
                expected: self.config.cond_dim,
                got: cond.len(),
            });
        }
        if cond.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("conditioning vector"));
        }
        Ok(())
    }

    fn forward(&self, xt: &[f64], t: usize, cond: &[f64]) -> (Vec<f64>, Cache) {
        let cfg = &self.config;
        let (f, n) = (cfg.features, cfg.tokens());
        let hw = cfg.height * cfg.width;

        let mut emb_in = time_embedding(t, cfg.time_dim);
        emb_in.extend_from_slice(cond);
        let mut e = nn::matmul(&emb_in, self.layer(EMBED_W), 1, emb_in.len(), f);
        for (v, b) in e.iter_mut().zip(self.layer(EMBED_B)) {
            *v += b;
        }

        let mut pre1 = nn::conv3x3(&cfg.conv_in(), xt, self.layer(CONV_IN_W), self.layer(CONV_IN_B), Padding::Zero);
        for (c, plane) in pre1.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v += e[c]);
        }
        let h1: Vec<f64> = pre1.iter().map(|&v| nn::silu(v)).collect();

        let pre2 = nn::conv3x3(&cfg.conv_down(), &h1, self.layer(DOWN_W), self.layer(DOWN_B), Padding::Zero);
        let h2: Vec<f64> = pre2.iter().map(|&v| nn::silu(v)).collect();
        let tokens = nn::transpose(&h2, f, n);

        let mut low: [Vec<f64>; 3] = Default::default();
        let mut qkv: [Vec<f64>; 3] = Default::default();
        for p in Projection::ALL {
            let i = p as usize;
            let mut m = nn::matmul(&tokens, self.layer(attn_layer(p)), n, f, f);
            if let Some(adapter) = &self.adapters[i] {
                let r = adapter.rank();
                let u = nn::matmul(&tokens, adapter.a().data(), n, f, r);
                let delta = nn::matmul(&u, adapter.b().data(), n, r, f);
                for (v, d) in m.iter_mut().zip(delta) {
                    *v += adapter.scale() * d;
                }
                low[i] = u;
            }
            qkv[i] = m;
        }

        let inv_sqrt = 1.0 / libm::sqrt(f as f64);
        let mut attn = vec![0.0; n * n];
        nn::matmul_a_bt_acc(&qkv[0], &qkv[1], n, f, n, &mut attn);
        attn.iter_mut().for_each(|v| *v *= inv_sqrt);
        nn::softmax_rows(&mut attn, n);
        let mixed = nn::matmul(&attn, &qkv[2], n, n, f);

        let y: Vec<f64> = tokens.iter().zip(&mixed).map(|(a, b)| a + b).collect();
        let h3 = nn::transpose(&y, n, f);
        let (h2w, w) = (cfg.width / 2, cfg.width);
        let mut up = h1.clone();
        for c in 0..f {
            for yy in 0..cfg.height {
                for xx in 0..w {
                    up[c * hw + yy * w + xx] += h3[c * n + (yy / 2) * h2w + xx / 2];
                }
            }
        }
        let out = nn::conv3x3(&cfg.conv_out(), &up, self.layer(OUT_W), self.layer(OUT_B), Padding::Zero);
        let cache = Cache {
            emb_in,
            pre1,
            h1,
            pre2,
            tokens,
            low,
            qkv,
            attn,
            up,
        };
        (out, cache)
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the network output).
    fn backward(&self, xt: &[f64], cache: &Cache, grad_out: &[f64], mode: Trainable) -> Vec<f64> {
        let cfg = &self.config;
        let (f, n) = (cfg.features, cfg.tokens());
        let hw = cfg.height * cfg.width;
        let base = mode == Trainable::Base;
        let mut grad = if base { Vec::new() } else { vec![0.0; self.trainable_count(mode)] };

        let mut grad_base = if base { vec![0.0; self.params.len()] } else { Vec::new() };
        let mut d_up = vec![0.0; f * hw];
        {
            let (mut gw, mut gb) = (vec![0.0; self.manifest[OUT_W].len()], vec![0.0; cfg.channels]);
            nn::conv3x3_backward(&cfg.conv_out(), &cache.up, self.layer(OUT_W), grad_out, Some(&mut d_up), &mut gw, &mut gb);
            if base {
                grad_base[self.manifest[OUT_W].range()].copy_from_slice(&gw);
                grad_base[self.manifest[OUT_B].range()].copy_from_slice(&gb);
            }
        }

        // Upsample: each low-res cell fans out to a 2x2 block.
        let (h2w, w) = (cfg.width / 2, cfg.width);
        let mut d_h3 = vec![0.0; f * n];
        for c in 0..f {
            for yy in 0..cfg.height {
                for xx in 0..w {
                    d_h3[c * n + (yy / 2) * h2w + xx / 2] += d_up[c * hw + yy * w + xx];
                }
            }
        }
        let d_y = nn::transpose(&d_h3, f, n);

        let [q, k, v] = &cache.qkv;
        let mut d_tokens = d_y.clone();
        let mut d_p = vec![0.0; n * n];
        nn::matmul_a_bt_acc(&d_y, v, n, f, n, &mut d_p);
        let mut d_v = vec![0.0; n * f];
        nn::matmul_at_b_acc(&cache.attn, &d_y, n, n, f, &mut d_v);
        let inv_sqrt = 1.0 / libm::sqrt(f as f64);
        let mut d_s = d_p;
        for (srow, prow) in d_s.chunks_mut(n).zip(cache.attn.chunks(n)) {
            let dot: f64 = srow.iter().zip(prow).map(|(a, b)| a * b).sum();
            for (s, p) in srow.iter_mut().zip(prow) {
                *s = p * (*s - dot) * inv_sqrt;
            }
        }
        let d_q = nn::matmul(&d_s, k, n, n, f);
        let mut d_k = vec![0.0; n * f];
        nn::matmul_at_b_acc(&d_s, q, n, n, f, &mut d_k);
        let d_qkv = [d_q, d_k, d_v];

        let mut lora_offset = 0;
        for p in Projection::ALL {
            let i = p as usize;
            let dm = &d_qkv[i];
            if base {
                let range = self.manifest[attn_layer(p)].range();
                nn::matmul_at_b_acc(&cache.tokens, dm, n, f, f, &mut grad_base[range]);
                nn::matmul_a_bt_acc(dm, self.layer(attn_layer(p)), n, f, f, &mut d_tokens);
            }
            if let Some(adapter) = &self.adapters[i] {
                let (r, s) = (adapter.rank(), adapter.scale());
                let a_len = f * r;
                let mut d_b = vec![0.0; r * f];
                nn::matmul_at_b_acc(&cache.low[i], dm, n, r, f, &mut d_b);
                let mut d_u = vec![0.0; n * r];
                nn::matmul_a_bt_acc(dm, adapter.b().data(), n, f, r, &mut d_u);
                d_u.iter_mut().for_each(|x| *x *= s);
                if mode == Trainable::Adapters {
                    let mut d_a = vec![0.0; a_len];
                    nn::matmul_at_b_acc(&cache.tokens, &d_u, n, f, r, &mut d_a);
                    grad[lora_offset..lora_offset + a_len].copy_from_slice(&d_a);
                    for (g, db) in grad[lora_offset + a_len..lora_offset + a_len + r * f].iter_mut().zip(d_b) {
                        *g = s * db;
                    }
                    lora_offset += a_len + r * f;
                }
                if base {
                    nn::matmul_a_bt_acc(&d_u, adapter.a().data(), n, r, f, &mut d_tokens);
                }
            }
        }
        if !base {
            return grad;
        }

        let d_h2 = nn::transpose(&d_tokens, n, f);
        let d_pre2: Vec<f64> = d_h2.iter().zip(&cache.pre2).map(|(d, &x)| d * nn::silu_grad(x)).collect();
        let mut d_h1 = d_up;
        {
            let range_w = self.manifest[DOWN_W].range();
            let (mut gw, mut gb) = (vec![0.0; range_w.len()], vec![0.0; f]);
            nn::conv3x3_backward(&cfg.conv_down(), &cache.h1, self.layer(DOWN_W), &d_pre2, Some(&mut d_h1), &mut gw, &mut gb);
            grad_base[range_w].copy_from_slice(&gw);
            grad_base[self.manifest[DOWN_B].range()].copy_from_slice(&gb);
        }
        let d_pre1: Vec<f64> = d_h1.iter().zip(&cache.pre1).map(|(d, &x)| d * nn::silu_grad(x)).collect();
        {
            let range_w = self.manifest[CONV_IN_W].range();
            let (mut gw, mut gb) = (vec![0.0; range_w.len()], vec![0.0; f]);
            nn::conv3x3_backward(&cfg.conv_in(), xt, self.layer(CONV_IN_W), &d_pre1, None, &mut gw, &mut gb);
            grad_base[range_w].copy_from_slice(&gw);
            grad_base[self.manifest[CONV_IN_B].range()].copy_from_slice(&gb);
        }
        let d_e: Vec<f64> = d_pre1.chunks(hw).map(|plane| plane.iter().sum()).collect();
        let e_in = cache.emb_in.len();
        nn::matmul_at_b_acc(&cache.emb_in, &d_e, 1, e_in, f, &mut grad_base[self.manifest[EMBED_W].range()]);
        grad_base[self.manifest[EMBED_B].range()].copy_from_slice(&d_e);
        grad_base
    }

    /// Weighted per-element MSE between predicted and true noise, and its
    /// gradient w.r.t. the trainable parameters selected by `mode`.
    pub fn loss_and_gradient(&self, example: &NoisedExample<'_>, schedule: &NoiseSchedule, snr_gamma: Option<f64>, mode: Trainable) -> Result<(f64, Vec<f64>)> {
        let xt = schedule::forward_noise(example.x0, example.t, example.eps, schedule)?;
        self.check_inputs(&xt, example.cond)?;
        let weight = loss_weight(schedule, example.t, snr_gamma)?;
        let (out, cache) = self.forward(xt.values(), example.t, example.cond);
        let count = out.len() as f64;
        let mut loss = 0.0;
        let grad_out: Vec<f64> = out
            .iter()
            .zip(example.eps.values())
            .map(|(o, e)| {
                let d = o - e;
                loss += d * d;
                2.0 * weight * d / count
            })
            .collect();
        let loss = weight * loss / count;
        let grad = self.backward(xt.values(), &cache, &grad_out, mode);
        Ok((loss, grad))
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, xt: &ImageGrid, t: usize, cond: &[f64]) -> Result<ImageGrid> {
        self.check_inputs(xt, cond)?;
        let (out, _) = self.forward(xt.values(), t, cond);
        xt.with_values(out)
    }
}

/// One `(x0, t, eps, cond)` draw of the training objective.
#[derive(Debug, Clone, Copy)]
pub struct NoisedExample<'a> {
    pub x0: &'a ImageGrid,
    pub t: usize,
    pub eps: &'a ImageGrid,
    pub cond: &'a [f64],
}

/// Sinusoidal embedding of the step index: `[sin(t w_i) .., cos(t w_i) ..]`
/// with `w_i = 10000^(-i / (dim/2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half as f64);
        let arg = t as f64 * freq;
        out[i] = libm::sin(arg);
        out[half + i] = libm::cos(arg);
    }
    out
}

fn loss_weight(schedule: &NoiseSchedule, t: usize, snr_gamma: Option<f64>) -> Result<f64> {
    match snr_gamma {
        None => Ok(1.0),
        Some(gamma) => Ok(schedule::min_snr_weight(schedule.snr(t)?, gamma)),
    }
}

/// `w(t) * mean((eps_hat - eps)^2)` with `eps_hat = model(x_t, t, cond)`.
///
/// `w(t)` is 1 without `snr_gamma`, else the Min-SNR weight.
pub fn training_loss<P: NoisePredictor + ?Sized>(model: &P, example: &NoisedExample<'_>, schedule: &NoiseSchedule, snr_gamma: Option<f64>) -> Result<f64> {
    let xt = schedule::forward_noise(example.x0, example.t, example.eps, schedule)?;
    let eps_hat = model.predict_noise(&xt, example.t, example.cond)?;
    let weight = loss_weight(schedule, example.t, snr_gamma)?;
    Ok(weight * eps_hat.mean_squared_difference(example.eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::init_lora;

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            channels: 2,
            height: 4,
            width: 6,
            features: 4,
            time_dim: 4,
            cond_dim: 3,
        }
    }

    #[test]
    fn manifest_sums_to_parameter_count() {
        let model = Denoiser::new(DenoiserConfig::default(), 0).unwrap();
        let total: usize = model.manifest().iter().map(LayerSpec::len).sum();
        assert_eq!(total, model.parameter_count());
        assert!(model.parameter_count() <= 200_000);
        assert_eq!(model.manifest()[0].name, "embed.weight");
    }

    #[test]
    fn output_shape_matches_input() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        let xt = ImageGrid::from_fn(2, 4, 6, |c, y, x| (c + y * x) as f64 * 0.1).unwrap();
        let out = model.predict_noise(&xt, 10, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(out.shape(), xt.shape());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Denoiser::new(tiny(), 1).unwrap();
        let xt = ImageGrid::zeros(2, 4, 6).unwrap();
        assert!(matches!(
            model.predict_noise(&xt, 1, &[0.0; 2]),
            Err(Error::DimensionMismatch { expected: 3, got: 2, .. })
        ));
        let wrong = ImageGrid::zeros(2, 4, 4).unwrap();
        assert!(matches!(model.predict_noise(&wrong, 1, &[0.0; 3]), Err(Error::ShapeMismatch { .. })));
        assert!(model.predict_noise(&xt, 1, &[0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn odd_extent_is_rejected() {
        let cfg = DenoiserConfig { height: 5, ..tiny() };
        assert!(matches!(Denoiser::new(cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn fresh_adapters_do_not_change_predictions() {
        let mut model = Denoiser::new(tiny(), 3).unwrap();
        let xt = ImageGrid::from_fn(2, 4, 6, |c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 - 2.0).unwrap();
        let before = model.predict_noise(&xt, 4, &[1.0, 0.0, -1.0]).unwrap();
        for (i, p) in Projection::ALL.into_iter().enumerate() {
            model.attach_lora(init_lora(p, 4, 4, 2, i as u64).unwrap()).unwrap();
        }
        let after = model.predict_noise(&xt, 4, &[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn adapter_width_must_match_features() {
        let mut model = Denoiser::new(tiny(), 3).unwrap();
        assert!(model.attach_lora(init_lora(Projection::Key, 8, 8, 2, 0).unwrap()).is_err());
    }

    #[test]
    fn merging_adapters_preserves_predictions() {
        let mut model = Denoiser::new(tiny(), 5).unwrap();
        let mut adapter = init_lora(Projection::Value, 4, 4, 1, 9).unwrap();
        adapter.b_mut().data_mut().copy_from_slice(&[0.3, -0.2, 0.1, 0.4]);
        model.attach_lora(adapter).unwrap();
        let xt = ImageGrid::from_fn(2, 4, 6, |c, y, x| (c as f64 - 0.5) * (y as f64 - x as f64) * 0.2).unwrap();
        let cond = [0.5, -0.5, 0.25];
        let adapted = model.predict_noise(&xt, 7, &cond).unwrap();
        model.merge_adapters().unwrap();
        assert_eq!(model.adapters().count(), 0);
        let merged = model.predict_noise(&xt, 7, &cond).unwrap();
        assert!(adapted.max_abs_difference(&merged).unwrap() < 1e-12);
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct() {
        let a = time_embedding(1, 8);
        let b = time_embedding(2, 8);
        assert_ne!(a, b);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(time_embedding(0, 4), vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn from_parts_validates_manifest() {
        let model = Denoiser::new(tiny(), 0).unwrap();
        let rebuilt = Denoiser::from_parts(*model.config(), model.manifest().to_vec(), model.params().to_vec()).unwrap();
        assert_eq!(rebuilt, model);
        let mut short = model.params().to_vec();
        short.pop();
        assert!(Denoiser::from_parts(*model.config(), model.manifest().to_vec(), short).is_err());
        let other = DenoiserConfig { features: 6, ..tiny() };
        assert!(Denoiser::from_parts(other, model.manifest().to_vec(), model.params().to_vec()).is_err());
    }
}
