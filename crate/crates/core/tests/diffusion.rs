use cropbench_core::denoiser::{Denoiser, DenoiserConfig, NoisePredictor, NoisedExample};
use cropbench_core::grid::ImageGrid;
use cropbench_core::rng;
use cropbench_core::sample::{sample, sample_unguided, SampleConfig};
use cropbench_core::schedule::{forward_noise, forward_noise_with_alpha, make_schedule, NoiseSchedule};
use cropbench_core::train::{train, TrainConfig, TrainExample, Trainer};
use cropbench_core::Result;
use proptest::prelude::*;

fn small() -> DenoiserConfig {
    DenoiserConfig {
        channels: 3,
        height: 8,
        width: 8,
        features: 8,
        time_dim: 8,
        cond_dim: 8,
    }
}

#[test]
fn forward_noise_variance_tracks_one_minus_alpha_bar() {
    let schedule = NoiseSchedule::default();
    let n = 100_000;
    let x0 = ImageGrid::zeros(1, 1, n).unwrap();
    let mut r = rng::seeded(2024);
    for t in [1, 10, 250, 500, 1000] {
        let eps = ImageGrid::gaussian(1, 1, n, &mut r).unwrap();
        let xt = forward_noise(&x0, t, &eps, &schedule).unwrap();
        let mean = xt.values().iter().sum::<f64>() / n as f64;
        let var = xt.values().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let expected = 1.0 - schedule.alpha_bar(t).unwrap();
        assert!((var / expected - 1.0).abs() < 0.02, "t={t}: variance {var}, expected {expected}");
    }
}

#[test]
fn endpoint_identities_are_bitwise() {
    let mut r = rng::seeded(5);
    let x0 = ImageGrid::gaussian(3, 4, 4, &mut r).unwrap();
    let eps = ImageGrid::gaussian(3, 4, 4, &mut r).unwrap();
    assert_eq!(forward_noise_with_alpha(&x0, &eps, 1.0).unwrap(), x0);
    assert_eq!(forward_noise_with_alpha(&x0, &eps, 0.0).unwrap(), eps);
}

#[test]
fn zeroed_output_layer_predicts_zero() {
    let mut model = Denoiser::new(small(), 3).unwrap();
    model.zero_output_layer();
    let mut r = rng::seeded(9);
    let xt = ImageGrid::gaussian(3, 8, 8, &mut r).unwrap();
    let out = model.predict_noise(&xt, 400, &[0.5; 8]).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.0));
}

#[test]
fn predictions_are_deterministic() {
    let model = Denoiser::new(small(), 11).unwrap();
    let mut r = rng::seeded(1);
    let xt = ImageGrid::gaussian(3, 8, 8, &mut r).unwrap();
    let cond = rng::normal_vec(&mut r, 8, 1.0);
    let a = model.predict_noise(&xt, 17, &cond).unwrap();
    let b = model.predict_noise(&xt, 17, &cond).unwrap();
    assert_eq!(a.shape(), xt.shape());
    assert_eq!(a, b);
}

#[test]
fn one_step_oracle_reconstructs_the_image() {
    let schedule = make_schedule(1, 0.3, 0.3).unwrap();
    let ab = schedule.alpha_bar(1).unwrap();
    let mut r = rng::seeded(77);
    let x0 = ImageGrid::gaussian(3, 4, 4, &mut r).unwrap().map(|v| (0.5 * v).tanh()).unwrap();
    // Inverts the forward process exactly for the one known image.
    let oracle = |xt: &ImageGrid, _t: usize, _c: &[f64]| -> Result<ImageGrid> {
        let v = xt
            .values()
            .iter()
            .zip(x0.values())
            .map(|(x, x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt())
            .collect();
        ImageGrid::new(3, 4, 4, v)
    };
    let cfg = SampleConfig {
        num_inference_steps: 1,
        guidance_scale: 2.5,
        seed: 4,
    };
    let out = sample(&oracle, (3, 4, 4), &schedule, &[1.0], &[0.0], &cfg).unwrap();
    assert!(out.max_abs_difference(&x0).unwrap() < 1e-5);
}

#[test]
fn guidance_endpoints_reduce_to_single_branches() {
    let model = Denoiser::new(small(), 21).unwrap();
    let schedule = NoiseSchedule::default();
    let mut r = rng::seeded(8);
    let cond = rng::normal_vec(&mut r, 8, 1.0);
    let uncond = vec![0.0; 8];
    let cfg = |s: f64| SampleConfig {
        num_inference_steps: 10,
        guidance_scale: s,
        seed: 99,
    };
    let s1 = sample(&model, (3, 8, 8), &schedule, &cond, &uncond, &cfg(1.0)).unwrap();
    assert_eq!(s1, sample_unguided(&model, (3, 8, 8), &schedule, &cond, &cfg(1.0)).unwrap());
    let s0 = sample(&model, (3, 8, 8), &schedule, &cond, &uncond, &cfg(0.0)).unwrap();
    assert_eq!(s0, sample_unguided(&model, (3, 8, 8), &schedule, &uncond, &cfg(0.0)).unwrap());
    assert_ne!(s0, s1);
}

#[test]
fn sampling_is_a_function_of_the_seed() {
    let model = Denoiser::new(small(), 2).unwrap();
    let schedule = NoiseSchedule::default();
    let cfg = SampleConfig {
        num_inference_steps: 5,
        ..SampleConfig::default()
    };
    let a = sample(&model, (3, 8, 8), &schedule, &[1.0; 8], &[0.0; 8], &cfg).unwrap();
    let b = sample(&model, (3, 8, 8), &schedule, &[1.0; 8], &[0.0; 8], &cfg).unwrap();
    assert_eq!(a, b);
    let c = sample(&model, (3, 8, 8), &schedule, &[1.0; 8], &[0.0; 8], &SampleConfig { seed: 1, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn accumulating_identical_micro_batches_matches_one_step() {
    let schedule = NoiseSchedule::default();
    let mut r = rng::seeded(31);
    let x0 = ImageGrid::gaussian(3, 8, 8, &mut r).unwrap();
    let eps = ImageGrid::gaussian(3, 8, 8, &mut r).unwrap();
    let cond = rng::normal_vec(&mut r, 8, 1.0);
    let ex = NoisedExample {
        x0: &x0,
        t: 321,
        eps: &eps,
        cond: &cond,
    };
    let model = Denoiser::new(small(), 6).unwrap();
    let cfg = |acc| TrainConfig {
        gradient_accumulation_steps: acc,
        lr_warmup_steps: 0,
        ..TrainConfig::default()
    };
    let mut accumulated = Trainer::new(model.clone(), cfg(4)).unwrap();
    accumulated.update(&[ex; 4], &schedule).unwrap();
    let mut single = Trainer::new(model, cfg(1)).unwrap();
    single.update(&[ex], &schedule).unwrap();
    for (a, b) in accumulated.model().params().iter().zip(single.model().params()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn seeded_training_repeats() {
    let schedule = NoiseSchedule::default();
    let mut r = rng::seeded(12);
    let data: Vec<TrainExample> = (0..3)
        .map(|_| TrainExample {
            image: ImageGrid::gaussian(3, 8, 8, &mut r).unwrap(),
            cond: vec![0.25; 8],
        })
        .collect();
    let cfg = TrainConfig {
        training_steps: 5,
        rng_seed: 42,
        ..TrainConfig::default()
    };
    let a = train(Denoiser::new(small(), 1).unwrap(), &data, &schedule, &cfg).unwrap();
    let b = train(Denoiser::new(small(), 1).unwrap(), &data, &schedule, &cfg).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.loss_history.len(), 5);
}

proptest! {
    #[test]
    fn schedules_are_strictly_decreasing_in_unit_interval(
        steps in 1usize..400,
        start in 1e-5f64..0.2,
        width in 0.0f64..0.5,
    ) {
        let end = (start + width).min(0.9);
        let s = make_schedule(steps, start, end).unwrap();
        let ab = s.alpha_bars();
        prop_assert_eq!(ab.len(), steps);
        prop_assert!(ab.iter().all(|&a| a > 0.0 && a <= 1.0));
        prop_assert!(ab.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(s.clone(), make_schedule(steps, start, end).unwrap());
    }
}
