//! GPU telemetry samples and traces.
//!
//! A trace is an ordered list of samples taken on a nominal tick grid.
//! Ticks the sampler could not serve are not stored; they show up as
//! spacings of roughly two or more intervals and are reported by
//! [`Trace::gaps`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_S: f64 = 1.0;
pub const MIN_INTERVAL_S: f64 = 0.1;
/// Sanity bound for a single accelerator.
pub const MAX_POWER_W: f64 = 2000.0;
/// Fraction of on-grid spacings that must sit within half an interval of nominal.
pub const JITTER_QUORUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Training,
    Inference,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Training => "training",
            Phase::Inference => "inference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "training" | "train" => Ok(Phase::Training),
            "inference" | "generate" => Ok(Phase::Inference),
            other => Err(Error::InvalidConfig(format!("unknown phase `{other}`"))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetrySample {
    pub elapsed_s: f64,
    pub timestamp_utc: String,
    pub memory_mib: u64,
    pub power_w: f64,
    pub gpu_util_pct: u8,
}

/// The three numeric fields read from the management interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub memory_mib: u64,
    pub power_w: f64,
    pub gpu_util_pct: u8,
}

impl Reading {
    pub fn at(self, elapsed_s: f64, timestamp_utc: impl Into<String>) -> TelemetrySample {
        TelemetrySample {
            elapsed_s,
            timestamp_utc: timestamp_utc.into(),
            memory_mib: self.memory_mib,
            power_w: self.power_w,
            gpu_util_pct: self.gpu_util_pct,
        }
    }
}

/// Ticks missed between two stored samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    /// Index of the sample preceding the gap.
    pub after: usize,
    pub from_s: f64,
    pub to_s: f64,
    pub missed_ticks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    label: String,
    interval_s: f64,
    phase: Phase,
    samples: Vec<TelemetrySample>,
}

impl Trace {
    /// Builds a finalized trace; all invariants are checked.
    pub fn new(label: impl Into<String>, interval_s: f64, phase: Phase, samples: Vec<TelemetrySample>) -> Result<Self> {
        let trace = Self::unchecked(label, interval_s, phase, samples)?;
        trace.validate()?;
        Ok(trace)
    }

    /// Builds a trace checking only per-sample invariants, not tick spacing.
    /// Used for partial traces salvaged from failed runs.
    pub fn unchecked(label: impl Into<String>, interval_s: f64, phase: Phase, samples: Vec<TelemetrySample>) -> Result<Self> {
        check_interval(interval_s)?;
        let trace = Self {
            label: label.into(),
            interval_s,
            phase,
            samples,
        };
        trace.validate_samples()?;
        Ok(trace)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn interval_s(&self) -> f64 {
        self.interval_s
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn samples(&self) -> &[TelemetrySample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Seconds between first and last sample.
    pub fn span_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.elapsed_s - a.elapsed_s,
            _ => 0.0,
        }
    }

    /// Spacings of at least 1.5 intervals, i.e. one or more skipped ticks.
    pub fn gaps(&self) -> Vec<Gap> {
        let dt = self.interval_s;
        self.samples
            .windows(2)
            .enumerate()
            .filter_map(|(i, w)| {
                let d = w[1].elapsed_s - w[0].elapsed_s;
                (d >= 1.5 * dt).then(|| Gap {
                    after: i,
                    from_s: w[0].elapsed_s,
                    to_s: w[1].elapsed_s,
                    missed_ticks: (libm::round(d / dt) as usize).saturating_sub(1).max(1),
                })
            })
            .collect()
    }

    fn validate_samples(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.elapsed_s.is_finite() && s.elapsed_s >= 0.0) {
                return Err(Error::TraceInvariant(format!(
                    "sample {i}: elapsed_s {} is not a nonnegative time",
                    s.elapsed_s
                )));
            }
            if !(s.power_w.is_finite() && (0.0..MAX_POWER_W).contains(&s.power_w)) {
                return Err(Error::TraceInvariant(format!("sample {i}: power {} W outside [0, {MAX_POWER_W})", s.power_w)));
            }
            if s.gpu_util_pct > 100 {
                return Err(Error::TraceInvariant(format!("sample {i}: utilization {}% above 100", s.gpu_util_pct)));
            }
            if i > 0 && s.elapsed_s <= self.samples[i - 1].elapsed_s {
                return Err(Error::TraceInvariant(format!("sample {i}: elapsed_s not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Full invariant check, including tick regularity: of the spacings that
    /// are not gaps, at least 99% must be within half an interval of nominal.
    pub fn validate(&self) -> Result<()> {
        self.validate_samples()?;
        let dt = self.interval_s;
        let on_grid: Vec<f64> = self
            .samples
            .windows(2)
            .map(|w| w[1].elapsed_s - w[0].elapsed_s)
            .filter(|d| *d < 1.5 * dt)
            .collect();
        if on_grid.is_empty() {
            return Ok(());
        }
        let good = on_grid.iter().filter(|d| libm::fabs(**d - dt) < 0.5 * dt).count();
        let frac = good as f64 / on_grid.len() as f64;
        if frac < JITTER_QUORUM {
            return Err(Error::TraceInvariant(format!(
                "only {good} of {} tick spacings within half an interval of {dt} s",
                on_grid.len()
            )));
        }
        Ok(())
    }
}

pub fn check_interval(interval_s: f64) -> Result<()> {
    if interval_s.is_finite() && interval_s >= MIN_INTERVAL_S {
        Ok(())
    } else {
        Err(Error::IntervalTooShort(interval_s))
    }
}

fn strip_unit<'a>(field: &'a str, unit: &str) -> &'a str {
    let f = field.trim();
    f.strip_suffix(unit).map(str::trim_end).unwrap_or(f)
}

/// Parses one `memory.used, power.draw, utilization.gpu` line as printed by
/// `nvidia-smi --format=csv,noheader`, with or without unit suffixes.
pub fn parse_backend_line(raw: &str) -> Result<Reading> {
    let fail = |reason: &str| Error::TelemetryParse {
        line: raw.to_string(),
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = raw.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(fail(&format!("expected 3 fields, found {}", fields.len())));
    }
    let memory_mib: u64 = strip_unit(fields[0], "MiB")
        .parse()
        .map_err(|_| fail("memory.used is not an integer MiB value"))?;
    let power_w: f64 = strip_unit(fields[1], "W").parse().map_err(|_| fail("power.draw is not a number"))?;
    if !(power_w.is_finite() && power_w >= 0.0) {
        return Err(fail("power.draw must be finite and nonnegative"));
    }
    let gpu_util_pct: u8 = strip_unit(fields[2], "%")
        .parse()
        .map_err(|_| fail("utilization.gpu is not an integer percentage"))?;
    if gpu_util_pct > 100 {
        return Err(fail("utilization.gpu above 100"));
    }
    Ok(Reading {
        memory_mib,
        power_w,
        gpu_util_pct,
    })
}
