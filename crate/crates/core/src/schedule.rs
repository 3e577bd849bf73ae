//! Noise schedules and the closed-form forward noising process.
//!
//! `alpha_bar[t]` is the cumulative signal-retention coefficient: a clean
//! image `x0` noised to step `t` is `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const DEFAULT_NUM_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linear-beta schedule: `beta` runs linearly from `beta_start` (step 1) to
/// `beta_end` (step `num_steps`) and `alpha_bar[t] = prod_{s<=t} (1 - beta_s)`.
pub fn make_schedule(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(Error::range("num_steps must be at least 1"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::range("need 0 < beta_start <= beta_end < 1"));
    }
    let betas: Vec<f64> = (0..num_steps)
        .map(|i| {
            if num_steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (num_steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(num_steps);
    let mut acc = 1.0;
    for beta in &betas {
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    NoiseSchedule::from_parts(betas, alpha_bar)
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_NUM_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule parameters are valid")
    }
}

impl NoiseSchedule {
    /// Builds a schedule from explicit cumulative coefficients, deriving the
    /// per-step betas. Values must lie in `(0, 1]` and strictly decrease.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        let mut prev = 1.0;
        let betas = alpha_bar
            .iter()
            .map(|&a| {
                let beta = 1.0 - a / prev;
                prev = a;
                beta
            })
            .collect();
        Self::from_parts(betas, alpha_bar)
    }

    fn from_parts(betas: Vec<f64>, alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::range("schedule must have at least one step"));
        }
        if alpha_bar.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return Err(Error::range("alpha_bar values must lie in (0, 1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::range("alpha_bar must be strictly decreasing"));
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `alpha_bar` at 1-based step `t`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    /// `alpha_bar` at step `t` with the `t = 0` convention `alpha_bar = 1`.
    pub(crate) fn alpha_bar_or_one(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.alpha_bar.len() {
            return Err(Error::StepOutOfRange {
                t,
                num_steps: self.alpha_bar.len(),
            });
        }
        Ok(())
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)`.
    pub fn snr(&self, t: usize) -> Result<f64> {
        Ok(snr_from_alpha_bar(self.alpha_bar(t)?))
    }
}

pub fn snr_from_alpha_bar(alpha_bar: f64) -> f64 {
    alpha_bar / (1.0 - alpha_bar)
}

/// Min-SNR loss weight `min(snr, gamma) / snr`.
pub fn min_snr_weight(snr: f64, gamma: f64) -> f64 {
    if snr.is_infinite() {
        // alpha_bar == 1: the weight tends to 0.
        return 0.0;
    }
    snr.min(gamma) / snr
}

/// Noises `x0` with an explicit coefficient `alpha_bar` in `[0, 1]`.
pub fn forward_noise_with_alpha(x0: &ImageGrid, eps: &ImageGrid, alpha_bar: f64) -> Result<ImageGrid> {
    x0.ensure_same_shape(eps)?;
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::range("alpha_bar must lie in [0, 1]"));
    }
    let signal = libm::sqrt(alpha_bar);
    let noise = libm::sqrt(1.0 - alpha_bar);
    let values = x0.values().iter().zip(eps.values()).map(|(&x, &e)| signal * x + noise * e).collect();
    x0.with_values(values)
}

/// Noises `x0` to step `t` of `schedule`.
pub fn forward_noise(x0: &ImageGrid, t: usize, eps: &ImageGrid, schedule: &NoiseSchedule) -> Result<ImageGrid> {
    x0.ensure_same_shape(eps)?;
    forward_noise_with_alpha(x0, eps, schedule.alpha_bar(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_step_product() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn two_step_hand_product() {
        let s = make_schedule(2, 0.1, 0.3).unwrap();
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.9 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_bounds() {
        let s = NoiseSchedule::default();
        assert_eq!(s.num_steps(), 1000);
        assert!(s.alpha_bar(1).unwrap() >= 0.99);
        assert!(s.alpha_bar(1000).unwrap() <= 0.05);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![0.5, 0.5]).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.1]).is_err());
    }

    #[test]
    fn step_index_is_one_based() {
        let s = make_schedule(3, 0.1, 0.2).unwrap();
        assert!(matches!(s.alpha_bar(0), Err(Error::StepOutOfRange { t: 0, num_steps: 3 })));
        assert!(s.alpha_bar(4).is_err());
        assert!(s.alpha_bar(3).is_ok());
    }

    #[test]
    fn forward_noise_hand_values() {
        let x0 = ImageGrid::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let eps = ImageGrid::new(1, 1, 2, vec![2.0, -2.0]).unwrap();
        let xt = forward_noise_with_alpha(&x0, &eps, 0.25).unwrap();
        assert!((xt.values()[0] - 2.232_050_807_568_877).abs() < 1e-12);
        assert!((xt.values()[1] + 1.732_050_807_568_877_2).abs() < 1e-12);
    }

    #[test]
    fn forward_noise_endpoints_are_exact() {
        let x0 = ImageGrid::new(1, 1, 3, vec![0.3, -0.7, 0.11]).unwrap();
        let eps = ImageGrid::new(1, 1, 3, vec![1.9, 0.2, -1.3]).unwrap();
        assert_eq!(forward_noise_with_alpha(&x0, &eps, 1.0).unwrap(), x0);
        assert_eq!(forward_noise_with_alpha(&x0, &eps, 0.0).unwrap(), eps);
    }

    #[test]
    fn forward_noise_shape_mismatch() {
        let x0 = ImageGrid::zeros(1, 2, 2).unwrap();
        let eps = ImageGrid::zeros(1, 2, 3).unwrap();
        let s = NoiseSchedule::default();
        assert!(matches!(forward_noise(&x0, 5, &eps, &s), Err(Error::ShapeMismatch { .. })));
        let eps = ImageGrid::zeros(1, 2, 2).unwrap();
        assert!(matches!(forward_noise(&x0, 1001, &eps, &s), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn min_snr_weight_hand_values() {
        assert_eq!(min_snr_weight(1.0, 5.0), 1.0);
        assert_eq!(min_snr_weight(20.0, 5.0), 0.25);
        // alpha_bar = 0.5 gives snr 1; alpha_bar = 20/21 gives snr 20.
        assert!((snr_from_alpha_bar(0.5) - 1.0).abs() < 1e-15);
        assert!((snr_from_alpha_bar(20.0 / 21.0) - 20.0).abs() < 1e-12);
    }
}
