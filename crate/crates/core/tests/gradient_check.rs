//! Central finite differences against the analytic backward pass.

use cropbench_core::denoiser::{training_loss, Denoiser, DenoiserConfig, NoisedExample, Trainable};
use cropbench_core::grid::ImageGrid;
use cropbench_core::lora::{init_lora, Projection};
use cropbench_core::rng;
use cropbench_core::schedule::NoiseSchedule;

const STEP: f64 = 1e-5;

fn small_config() -> DenoiserConfig {
    DenoiserConfig {
        channels: 3,
        height: 8,
        width: 8,
        features: 8,
        time_dim: 8,
        cond_dim: 8,
    }
}

struct Fixture {
    x0: ImageGrid,
    eps: ImageGrid,
    cond: Vec<f64>,
    t: usize,
}

fn fixture(seed: u64, t: usize) -> Fixture {
    let mut r = rng::seeded(seed);
    Fixture {
        x0: ImageGrid::gaussian(3, 8, 8, &mut r).unwrap().map(|v| (v * 0.5).tanh()).unwrap(),
        eps: ImageGrid::gaussian(3, 8, 8, &mut r).unwrap(),
        cond: rng::normal_vec(&mut r, 8, 1.0),
        t,
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    // Floor keeps parameters with vanishing gradient from dividing by ~0.
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn loss(model: &Denoiser, f: &Fixture, schedule: &NoiseSchedule, gamma: Option<f64>) -> f64 {
    let ex = NoisedExample {
        x0: &f.x0,
        t: f.t,
        eps: &f.eps,
        cond: &f.cond,
    };
    training_loss(model, &ex, schedule, gamma).unwrap()
}

fn check_base(seed: u64, t: usize, gamma: Option<f64>, with_adapters: bool) -> f64 {
    let schedule = NoiseSchedule::default();
    let mut model = Denoiser::new(small_config(), seed).unwrap();
    if with_adapters {
        for p in Projection::ALL {
            let mut a = init_lora(p, 8, 8, 2, seed + p as u64).unwrap();
            let mut r = rng::seeded(seed ^ 0xb);
            a.b_mut().data_mut().iter_mut().for_each(|v| *v = 0.3 * rng::standard_normal(&mut r));
            model.attach_lora(a).unwrap();
        }
    }
    assert!(model.parameter_count() <= 5_000);
    let f = fixture(seed + 100, t);
    let ex = NoisedExample {
        x0: &f.x0,
        t: f.t,
        eps: &f.eps,
        cond: &f.cond,
    };
    let (l, grad) = model.loss_and_gradient(&ex, &schedule, gamma, Trainable::Base).unwrap();
    assert!((l - loss(&model, &f, &schedule, gamma)).abs() < 1e-14);
    let mut worst = 0.0f64;
    assert_eq!(grad.len(), model.parameter_count());
    for (i, &g) in grad.iter().enumerate() {
        let orig = model.params()[i];
        model.params_mut()[i] = orig + STEP;
        let up = loss(&model, &f, &schedule, gamma);
        model.params_mut()[i] = orig - STEP;
        let down = loss(&model, &f, &schedule, gamma);
        model.params_mut()[i] = orig;
        worst = worst.max(rel_err(g, (up - down) / (2.0 * STEP)));
    }
    worst
}

#[test]
fn base_gradients_match_finite_differences() {
    let worst = check_base(1, 250, None, false);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn min_snr_weighted_gradients_match() {
    let worst = check_base(2, 3, Some(5.0), false);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn base_gradients_with_adapters_attached() {
    let worst = check_base(3, 700, None, true);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn adapter_gradients_match_finite_differences() {
    let schedule = NoiseSchedule::default();
    let mut model = Denoiser::new(small_config(), 9).unwrap();
    for p in Projection::ALL {
        let mut a = init_lora(p, 8, 8, 2, 40 + p as u64).unwrap();
        a.set_scale(0.7);
        let mut r = rng::seeded(77 + p as u64);
        a.b_mut().data_mut().iter_mut().for_each(|v| *v = 0.2 * rng::standard_normal(&mut r));
        model.attach_lora(a).unwrap();
    }
    let f = fixture(5, 120);
    let ex = NoisedExample {
        x0: &f.x0,
        t: f.t,
        eps: &f.eps,
        cond: &f.cond,
    };
    let (_, grad) = model.loss_and_gradient(&ex, &schedule, None, Trainable::Adapters).unwrap();
    assert_eq!(grad.len(), model.trainable_count(Trainable::Adapters));
    let mut worst = 0.0f64;
    let mut k = 0;
    let slots: Vec<usize> = model.trainable_slices_mut(Trainable::Adapters).iter().map(|s| s.len()).collect();
    for (slot, len) in slots.into_iter().enumerate() {
        for i in 0..len {
            let orig = model.trainable_slices_mut(Trainable::Adapters)[slot][i];
            model.trainable_slices_mut(Trainable::Adapters)[slot][i] = orig + STEP;
            let up = loss(&model, &f, &schedule, None);
            model.trainable_slices_mut(Trainable::Adapters)[slot][i] = orig - STEP;
            let down = loss(&model, &f, &schedule, None);
            model.trainable_slices_mut(Trainable::Adapters)[slot][i] = orig;
            worst = worst.max(rel_err(grad[k], (up - down) / (2.0 * STEP)));
            k += 1;
        }
    }
    assert_eq!(k, grad.len());
    assert!(worst < 1e-4, "max relative error {worst}");
}
