use cropbench_core::energy::{compare, integrate_energy, ratio, summarize, trapezoid_kwh, JOULES_PER_KWH};
use cropbench_core::rng;
use cropbench_core::telemetry::{Phase, Reading, Trace};
use proptest::prelude::*;
use rand::Rng;

/// Midpoint sum on a 1 ms grid of the piecewise-linear curve through
/// `(times, powers)`, in kWh.
fn riemann_kwh(times: &[f64], powers: &[f64]) -> f64 {
    let dt = 1e-3;
    let span = times[times.len() - 1] - times[0];
    let cells = (span / dt).round() as usize;
    let mut seg = 0;
    let mut joules = 0.0;
    for k in 0..cells {
        let t = times[0] + (k as f64 + 0.5) * dt;
        while seg + 2 < times.len() && t > times[seg + 1] {
            seg += 1;
        }
        let f = (t - times[seg]) / (times[seg + 1] - times[seg]);
        joules += (powers[seg] + f * (powers[seg + 1] - powers[seg])) * dt;
    }
    joules / JOULES_PER_KWH
}

fn trace_of(times: &[f64], powers: &[f64]) -> Trace {
    let samples = times
        .iter()
        .zip(powers)
        .map(|(&t, &p)| {
            Reading {
                memory_mib: 1000,
                power_w: p,
                gpu_util_pct: 50,
            }
            .at(t, "2026-01-01T00:00:00.000Z")
        })
        .collect();
    Trace::unchecked("curve", 1.0, Phase::Training, samples).unwrap()
}

#[test]
fn trapezoid_matches_fine_riemann_on_random_curves() {
    let mut r = rng::seeded(20);
    for curve in 0..20 {
        let n = r.random_range(2..80);
        let mut times = vec![0.0];
        for _ in 1..n {
            // Breakpoints on the millisecond grid, roughly one per second.
            let step = r.random_range(500..2500) as f64 / 1000.0;
            times.push(((times.last().unwrap() + step) * 1000.0_f64).round() / 1000.0);
        }
        let powers: Vec<f64> = (0..n).map(|_| r.random_range(0.0..400.0)).collect();
        let exact = trapezoid_kwh(&times, &powers).unwrap();
        let oracle = riemann_kwh(&times, &powers);
        assert!((exact - oracle).abs() <= 1e-6 * oracle.abs(), "curve {curve}: {exact} vs {oracle}");
        assert_eq!(integrate_energy(&trace_of(&times, &powers)).unwrap(), exact);
    }
}

#[test]
fn closed_form_average_times_duration() {
    // 167.4 W held for 1.25 h.
    let times: Vec<f64> = (0..=4500).map(|s| s as f64).collect();
    let powers = vec![167.4; times.len()];
    let kwh = integrate_energy(&trace_of(&times, &powers)).unwrap();
    assert!((kwh - 167.4 * 1.25 / 1000.0).abs() < 1e-12);
    assert_eq!((kwh * 1e4).round() / 1e4, 0.2093);
}

fn curve() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((0.1f64..3.0, 0.0f64..500.0), 2..60).prop_map(|pts| {
        let mut t = 0.0;
        pts.into_iter()
            .map(|(dt, p)| {
                t += dt;
                (t, p)
            })
            .unzip()
    })
}

proptest! {
    #[test]
    fn energy_scales_with_power((times, powers) in curve(), c in 0.01f64..8.0) {
        let base = trapezoid_kwh(&times, &powers).unwrap();
        let scaled: Vec<f64> = powers.iter().map(|p| p * c).collect();
        let e = trapezoid_kwh(&times, &scaled).unwrap();
        prop_assert!((e - c * base).abs() <= 1e-12 * (c * base).abs().max(1e-300));
        // Power-of-two factors are exact.
        let doubled: Vec<f64> = powers.iter().map(|p| p * 4.0).collect();
        prop_assert_eq!(trapezoid_kwh(&times, &doubled).unwrap(), 4.0 * base);
    }

    #[test]
    fn reversal_on_a_uniform_grid_preserves_energy(powers in prop::collection::vec(0.0f64..500.0, 2..200), dt in 0.1f64..2.0) {
        let times: Vec<f64> = (0..powers.len()).map(|i| i as f64 * dt).collect();
        let reversed: Vec<f64> = powers.iter().rev().copied().collect();
        let a = trapezoid_kwh(&times, &powers).unwrap();
        let b = trapezoid_kwh(&times, &reversed).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn ratios_chain_through_a_common_run(a in 1.0f64..1e5, b in 1.0f64..1e5, c in 1.0f64..1e5) {
        let lhs = ratio(a, b).unwrap() * ratio(b, c).unwrap();
        let rhs = ratio(a, c).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
    }

    #[test]
    fn compare_is_baseline_consistent(pa in 50.0f64..400.0, pb in 50.0f64..400.0, pc in 50.0f64..400.0) {
        let times: Vec<f64> = (0..11).map(f64::from).collect();
        let runs: Vec<_> = [("a", pa), ("b", pb), ("c", pc)]
            .iter()
            .map(|&(label, p)| {
                let mut m = summarize(&trace_of(&times, &[p; 11]), 10).unwrap();
                m.label = label.into();
                m
            })
            .collect();
        let vs_b = compare(&runs, "b").unwrap();
        let vs_c = compare(&runs, "c").unwrap();
        for metric in cropbench_core::energy::Metric::ALL {
            let ab = vs_b.ratio("a", metric).unwrap();
            let bc = vs_c.ratio("b", metric).unwrap();
            let ac = vs_c.ratio("a", metric).unwrap();
            prop_assert!((ab * bc - ac).abs() <= 1e-12 * ac);
        }
    }
}
