//! Benchmark quantities derived from telemetry traces.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::telemetry::Trace;

pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Trapezoidal integral of power (W) over time (s), in kWh.
///
/// Spacings are used as-is, so a gap in the samples is bridged by one
/// trapezoid between its endpoints.
pub fn trapezoid_kwh(times_s: &[f64], power_w: &[f64]) -> Result<f64> {
    if times_s.len() != power_w.len() {
        return Err(Error::DimensionMismatch {
            what: "power samples",
            expected: times_s.len(),
            got: power_w.len(),
        });
    }
    if times_s.len() < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: times_s.len() });
    }
    let joules: f64 = times_s
        .windows(2)
        .zip(power_w.windows(2))
        .map(|(t, p)| 0.5 * (p[0] + p[1]) * (t[1] - t[0]))
        .sum();
    Ok(joules / JOULES_PER_KWH)
}

pub fn integrate_energy(trace: &Trace) -> Result<f64> {
    let (t, p): (Vec<f64>, Vec<f64>) = trace.samples().iter().map(|s| (s.elapsed_s, s.power_w)).unzip();
    trapezoid_kwh(&t, &p)
}

/// `None` when no images were produced.
pub fn energy_per_image(energy_kwh: f64, images: u64) -> Option<f64> {
    (images > 0).then(|| energy_kwh / images as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub label: String,
    pub peak_memory_mib: u64,
    pub avg_power_w: f64,
    pub wall_time_h: f64,
    pub energy_kwh: f64,
    pub images_generated: u64,
    pub energy_per_image_kwh: Option<f64>,
}

/// Reduces a trace to peak memory, time-weighted average power, wall time
/// and energy.
pub fn summarize(trace: &Trace, images_generated: u64) -> Result<RunMetrics> {
    let energy_kwh = integrate_energy(trace)?;
    let span = trace.span_s();
    let avg_power_w = if span > 0.0 { energy_kwh * JOULES_PER_KWH / span } else { 0.0 };
    Ok(RunMetrics {
        label: trace.label().into(),
        peak_memory_mib: trace.samples().iter().map(|s| s.memory_mib).max().unwrap_or(0),
        avg_power_w,
        wall_time_h: span / 3600.0,
        energy_kwh,
        images_generated,
        energy_per_image_kwh: energy_per_image(energy_kwh, images_generated),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    PeakMemory,
    AvgPower,
    WallTime,
    Energy,
    EnergyPerImage,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::PeakMemory, Metric::AvgPower, Metric::WallTime, Metric::Energy, Metric::EnergyPerImage];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PeakMemory => "peak_memory_mib",
            Metric::AvgPower => "avg_power_w",
            Metric::WallTime => "wall_time_h",
            Metric::Energy => "energy_kwh",
            Metric::EnergyPerImage => "energy_per_image_kwh",
        }
    }

    pub fn value(self, m: &RunMetrics) -> Option<f64> {
        match self {
            Metric::PeakMemory => Some(m.peak_memory_mib as f64),
            Metric::AvgPower => Some(m.avg_power_w),
            Metric::WallTime => Some(m.wall_time_h),
            Metric::Energy => Some(m.energy_kwh),
            Metric::EnergyPerImage => m.energy_per_image_kwh,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub label: String,
    /// Indexed like [`Metric::ALL`]; `None` where either side is missing or
    /// the baseline value is zero.
    pub ratios: [Option<f64>; 5],
}

impl RatioRow {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.ratios[metric as usize]
    }
}

/// Ratios of every run to a baseline run, `run / baseline`, per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub baseline: String,
    pub rows: Vec<RatioRow>,
}

impl RatioTable {
    pub fn row(&self, label: &str) -> Option<&RatioRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn ratio(&self, label: &str, metric: Metric) -> Option<f64> {
        self.row(label)?.get(metric)
    }
}

pub fn ratio(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0 && value.is_finite() && baseline.is_finite()).then(|| value / baseline)
}

pub fn compare(runs: &[RunMetrics], baseline: &str) -> Result<RatioTable> {
    if runs.len() < 2 {
        return Err(Error::TooFewRuns(runs.len()));
    }
    let base = runs
        .iter()
        .find(|r| r.label == baseline)
        .ok_or_else(|| Error::BaselineMissing(baseline.into()))?;
    let rows = runs
        .iter()
        .map(|r| RatioRow {
            label: r.label.clone(),
            ratios: Metric::ALL.map(|m| match (m.value(r), m.value(base)) {
                (Some(v), Some(b)) => ratio(v, b),
                _ => None,
            }),
        })
        .collect();
    Ok(RatioTable {
        baseline: baseline.into(),
        rows,
    })
}

/// Rounds to `digits` significant figures.
pub fn round_sig(x: f64, digits: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = libm::floor(libm::log10(libm::fabs(x))) as i32;
    let shift = digits as i32 - 1 - magnitude;
    let scale = libm::pow(10.0, shift as f64);
    libm::round(x * scale) / scale
}

/// Significant-figure display, e.g. `2.3` for 2.3124 at two figures.
pub fn format_sig(x: f64, digits: u32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let r = round_sig(x, digits);
    let magnitude = libm::floor(libm::log10(libm::fabs(r))) as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    format!("{r:.decimals$}")
}

/// Ratio display at two significant figures with a `×` suffix.
pub fn format_ratio(x: f64) -> String {
    format!("{}×", format_sig(x, 2))
}
