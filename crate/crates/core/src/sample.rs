//! Ancestral DDPM sampling with classifier-free guidance.

use alloc::vec::Vec;

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::rng;
use crate::schedule::NoiseSchedule;

pub const DEFAULT_INFERENCE_STEPS: usize = 50;
pub const DEFAULT_GUIDANCE_SCALE: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub num_inference_steps: usize,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            num_inference_steps: DEFAULT_INFERENCE_STEPS,
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            seed: 0,
        }
    }
}

/// `uncond + scale * (cond - uncond)`, returning the matching branch
/// unchanged at `scale` 0 and 1.
pub fn guided_noise(uncond: &ImageGrid, cond: &ImageGrid, scale: f64) -> Result<ImageGrid> {
    uncond.ensure_same_shape(cond)?;
    if scale == 1.0 {
        return Ok(cond.clone());
    }
    if scale == 0.0 {
        return Ok(uncond.clone());
    }
    let values = uncond.values().iter().zip(cond.values()).map(|(&u, &c)| u + scale * (c - u)).collect();
    uncond.with_values(values)
}

/// Descending inference steps `ceil(k T / n)` for `k = n..1`.
pub fn inference_timesteps(num_steps: usize, num_inference_steps: usize) -> Result<Vec<usize>> {
    if num_inference_steps == 0 || num_inference_steps > num_steps {
        return Err(Error::InvalidStepCount {
            steps: num_inference_steps,
            num_steps,
        });
    }
    Ok((1..=num_inference_steps).rev().map(|k| (k * num_steps).div_ceil(num_inference_steps)).collect())
}

/// Guided ancestral sampling from unit Gaussian noise. The result is
/// clamped to `[-1, 1]` after the final step only.
pub fn sample<P: NoisePredictor + ?Sized>(
    model: &P,
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    prompt_cond: &[f64],
    uncond: &[f64],
    config: &SampleConfig,
) -> Result<ImageGrid> {
    if !(config.guidance_scale >= 0.0 && config.guidance_scale.is_finite()) {
        return Err(Error::range("guidance_scale must be finite and non-negative"));
    }
    let scale = config.guidance_scale;
    denoise_loop(shape, schedule, config, |x, t| {
        if scale == 1.0 {
            return model.predict_noise(x, t, prompt_cond);
        }
        if scale == 0.0 {
            return model.predict_noise(x, t, uncond);
        }
        let e_u = model.predict_noise(x, t, uncond)?;
        let e_c = model.predict_noise(x, t, prompt_cond)?;
        guided_noise(&e_u, &e_c, scale)
    })
}

/// Ancestral sampling driven by a single conditioning vector.
pub fn sample_unguided<P: NoisePredictor + ?Sized>(
    model: &P,
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    cond: &[f64],
    config: &SampleConfig,
) -> Result<ImageGrid> {
    denoise_loop(shape, schedule, config, |x, t| model.predict_noise(x, t, cond))
}

fn denoise_loop(
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    config: &SampleConfig,
    mut noise: impl FnMut(&ImageGrid, usize) -> Result<ImageGrid>,
) -> Result<ImageGrid> {
    let steps = inference_timesteps(schedule.num_steps(), config.num_inference_steps)?;
    let mut rng = rng::seeded(config.seed);
    let (c, h, w) = shape;
    let mut x = ImageGrid::gaussian(c, h, w, &mut rng)?;
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let eps = noise(&x, t)?;
        x.ensure_same_shape(&eps)?;
        let ab = schedule.alpha_bar_or_one(t);
        let ab_prev = schedule.alpha_bar_or_one(t_prev);
        let (sqrt_ab, sqrt_one_minus) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
        let x0_hat: Vec<f64> = x
            .values()
            .iter()
            .zip(eps.values())
            .map(|(&xt, &e)| (xt - sqrt_one_minus * e) / sqrt_ab)
            .collect();
        if t_prev == 0 {
            x = x.with_values(x0_hat)?;
            break;
        }
        let beta = 1.0 - ab / ab_prev;
        let coef_x0 = libm::sqrt(ab_prev) * beta / (1.0 - ab);
        let coef_xt = libm::sqrt(ab / ab_prev) * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = libm::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        let z = rng::normal_vec(&mut rng, x.len(), 1.0);
        let next = x0_hat
            .iter()
            .zip(x.values())
            .zip(z)
            .map(|((&x0, &xt), z)| coef_x0 * x0 + coef_xt * xt + sigma * z)
            .collect();
        x = x.with_values(next)?;
    }
    Ok(x.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::make_schedule;
    use alloc::vec;

    #[test]
    fn timesteps_cover_the_schedule() {
        let ts = inference_timesteps(1000, 50).unwrap();
        assert_eq!(ts.len(), 50);
        assert_eq!(ts[0], 1000);
        assert_eq!(ts[49], 20);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(inference_timesteps(1, 1).unwrap(), vec![1]);
        assert_eq!(inference_timesteps(7, 7).unwrap(), vec![7, 6, 5, 4, 3, 2, 1]);
        assert!(inference_timesteps(10, 0).is_err());
        assert!(inference_timesteps(10, 11).is_err());
    }

    #[test]
    fn guidance_endpoint_identities() {
        let u = ImageGrid::new(1, 1, 3, vec![0.1, -0.0, 1e300]).unwrap();
        let c = ImageGrid::new(1, 1, 3, vec![-0.3, 0.0, 3.0]).unwrap();
        assert_eq!(guided_noise(&u, &c, 1.0).unwrap(), c);
        assert_eq!(guided_noise(&u, &c, 0.0).unwrap(), u);
        let g = guided_noise(&u, &c, 2.5).unwrap();
        assert!((g.values()[0] - (0.1 + 2.5 * (-0.4))).abs() < 1e-15);
    }

    #[test]
    fn negative_guidance_is_rejected() {
        let zero = |x: &ImageGrid, _: usize, _: &[f64]| ImageGrid::zeros(x.channels(), x.height(), x.width());
        let s = make_schedule(10, 0.01, 0.2).unwrap();
        let cfg = SampleConfig {
            guidance_scale: -0.5,
            num_inference_steps: 5,
            seed: 0,
        };
        assert!(sample(&zero, (1, 2, 2), &s, &[], &[], &cfg).is_err());
        let cfg = SampleConfig { num_inference_steps: 0, ..cfg };
        assert!(matches!(sample_unguided(&zero, (1, 2, 2), &s, &[], &cfg), Err(Error::InvalidStepCount { .. })));
    }

    #[test]
    fn output_is_clamped() {
        let big = |x: &ImageGrid, _: usize, _: &[f64]| x.map(|v| -50.0 * v.signum());
        let s = make_schedule(20, 0.01, 0.3).unwrap();
        let out = sample_unguided(
            &big,
            (1, 3, 3),
            &s,
            &[],
            &SampleConfig {
                num_inference_steps: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
