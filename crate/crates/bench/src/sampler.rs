//! Background GPU telemetry sampling.
//!
//! One thread per sampler ticks on a fixed grid anchored at the run start.
//! A read that has not returned by the next tick is discarded and the
//! ticks it overran are skipped, so stalls appear in the trace as wide
//! spacings rather than as late samples. Read failures are skipped the
//! same way; neither aborts the run. A run stopped before its second tick
//! gets one closing sample at stop time so its trace still has a span.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{SecondsFormat, Utc};
use cropbench_core::telemetry::{self, parse_backend_line, Phase, Reading, TelemetrySample, Trace};

use crate::error::{BenchError, Result};
use crate::trace_csv::{quantize, TraceWriter};

pub const SMI_QUERY: [&str; 2] = ["--query-gpu=memory.used,power.draw,utilization.gpu", "--format=csv,noheader"];

pub fn utc_now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Queries `nvidia-smi` once per tick.
#[derive(Debug, Clone)]
pub struct NvidiaSmi {
    pub program: PathBuf,
}

impl Default for NvidiaSmi {
    fn default() -> Self {
        Self { program: "nvidia-smi".into() }
    }
}

impl NvidiaSmi {
    /// Runs the query, killing it after `timeout`. Only the first GPU is read.
    pub fn query(&self, timeout: Duration) -> std::result::Result<Reading, String> {
        let mut child = Command::new(&self.program)
            .args(SMI_QUERY)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot run {}: {e}", self.program.display()))?;
        let deadline = Instant::now() + timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err("query timed out".into());
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(e.to_string()),
            }
        };
        let mut out = String::new();
        if let Some(mut stdout) = child.stdout.take() {
            stdout.read_to_string(&mut out).map_err(|e| e.to_string())?;
        }
        if !status.success() {
            return Err(format!("{} exited with {status}", self.program.display()));
        }
        let line = out.lines().next().ok_or("empty output")?;
        parse_backend_line(line).map_err(|e| e.to_string())
    }
}

/// Deterministic stand-in for a GPU.
#[derive(Debug, Clone)]
pub enum Synthetic {
    /// The same reading every tick.
    Constant(Reading),
    /// Readings in order, repeating; `stalls` delays listed ticks and
    /// `failures` makes listed ticks return an error.
    Scripted {
        readings: Vec<Reading>,
        stalls: Vec<(usize, Duration)>,
        failures: BTreeSet<usize>,
    },
    /// A recorded trace reproduced verbatim, elapsed times and timestamps
    /// included. Each tick emits the next sample; whatever is left when the
    /// sampler stops is appended, so the result never depends on timing.
    Replay(Trace),
}

impl Synthetic {
    pub fn scripted(readings: Vec<Reading>) -> Self {
        Synthetic::Scripted {
            readings,
            stalls: Vec::new(),
            failures: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    Real(NvidiaSmi),
    Synthetic(Synthetic),
}

impl Backend {
    fn probe(&self) -> Result<()> {
        match self {
            Backend::Real(smi) => smi.query(Duration::from_secs(10)).map(drop).map_err(BenchError::BackendUnavailable),
            Backend::Synthetic(Synthetic::Scripted { readings, .. }) if readings.is_empty() => {
                Err(BenchError::BackendUnavailable("scripted backend has no readings".into()))
            }
            Backend::Synthetic(_) => Ok(()),
        }
    }
}

/// What the sampler did besides producing samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub ticks: usize,
    pub stalled: usize,
    pub failed: usize,
}

struct Worker {
    backend: Backend,
    interval: Duration,
    start: Instant,
    stop: Receiver<()>,
    samples: Sender<TelemetrySample>,
    sink: Option<TraceWriter<std::fs::File>>,
    stats: SamplerStats,
    replay_pos: usize,
    last: Option<f64>,
}

impl Worker {
    /// Sleeps until `at`; true if a stop was requested meanwhile.
    fn wait_until(&self, at: Instant) -> bool {
        let timeout = at.saturating_duration_since(Instant::now());
        !matches!(self.stop.recv_timeout(timeout), Err(RecvTimeoutError::Timeout))
    }

    fn emit(&mut self, sample: TelemetrySample) {
        self.last = Some(sample.elapsed_s);
        if let Some(sink) = &mut self.sink {
            if sink.push(&sample).is_err() {
                self.sink = None;
            }
        }
        let _ = self.samples.send(sample);
    }

    fn read(&mut self, tick: usize, deadline: Instant) -> Option<std::result::Result<Reading, String>> {
        match &self.backend {
            Backend::Real(smi) => Some(smi.query(deadline.saturating_duration_since(Instant::now()))),
            Backend::Synthetic(Synthetic::Constant(r)) => Some(Ok(*r)),
            Backend::Synthetic(Synthetic::Scripted { readings, stalls, failures }) => {
                if let Some((_, d)) = stalls.iter().find(|(t, _)| *t == tick) {
                    std::thread::sleep(*d);
                }
                if failures.contains(&tick) {
                    return Some(Err(format!("scripted failure at tick {tick}")));
                }
                Some(Ok(readings[tick % readings.len()]))
            }
            Backend::Synthetic(Synthetic::Replay(_)) => None,
        }
    }

    fn run(mut self) -> SamplerStats {
        let interval = self.interval.as_secs_f64();
        let mut tick = 0usize;
        loop {
            let at = self.start + self.interval.mul_f64(tick as f64);
            if self.wait_until(at) {
                break;
            }
            self.stats.ticks += 1;
            let deadline = at + self.interval;
            if let Backend::Synthetic(Synthetic::Replay(trace)) = &self.backend {
                match trace.samples().get(self.replay_pos).cloned() {
                    Some(s) => {
                        self.replay_pos += 1;
                        self.emit(s);
                    }
                    None => {
                        let _ = self.stop.recv();
                        break;
                    }
                }
            } else {
                let started = self.start.elapsed().as_secs_f64();
                let stamp = utc_now();
                match self.read(tick, deadline) {
                    Some(Ok(r)) if Instant::now() <= deadline => self.emit(quantize(&r.at(started, stamp))),
                    Some(Ok(_)) => self.stats.stalled += 1,
                    Some(Err(_)) => self.stats.failed += 1,
                    None => {}
                }
            }
            // Skip every tick whose time has already passed.
            let now = self.start.elapsed().as_secs_f64();
            tick = (tick + 1).max((now / interval).ceil() as usize);
        }
        if let Backend::Synthetic(Synthetic::Replay(trace)) = &self.backend {
            let rest: Vec<_> = trace.samples()[self.replay_pos..].to_vec();
            for s in rest {
                self.emit(s);
            }
        } else if let Some(first) = self.last.filter(|_| self.stats.ticks == 1) {
            // A workload shorter than one interval still gets a closing
            // sample, so its trace spans the run and can be integrated.
            let now = Instant::now();
            let closing = match self.read(tick, now + self.interval) {
                Some(Ok(r)) => Some(quantize(&r.at(self.start.elapsed().as_secs_f64(), utc_now()))),
                _ => None,
            };
            if let Some(s) = closing.filter(|s| s.elapsed_s > first) {
                self.emit(s);
            }
        }
        self.stats
    }
}

/// Handle to a running sampler.
pub struct Sampler {
    label: String,
    phase: Phase,
    interval_s: f64,
    stop_tx: Option<Sender<()>>,
    thread: Option<JoinHandle<SamplerStats>>,
    samples: Receiver<TelemetrySample>,
    stats: Option<SamplerStats>,
}

#[derive(Debug, Clone)]
pub struct SamplerOptions {
    pub label: String,
    pub phase: Phase,
    pub interval_s: f64,
    /// Rows are appended and flushed here as they are taken.
    pub csv_path: Option<PathBuf>,
    /// Anchor for `elapsed_s`; defaults to the start call.
    pub run_start: Option<Instant>,
}

impl SamplerOptions {
    pub fn new(label: impl Into<String>, phase: Phase, interval_s: f64) -> Self {
        Self {
            label: label.into(),
            phase,
            interval_s,
            csv_path: None,
            run_start: None,
        }
    }

    pub fn csv(mut self, path: impl AsRef<Path>) -> Self {
        self.csv_path = Some(path.as_ref().to_path_buf());
        self
    }
}

impl Sampler {
    pub fn start(backend: Backend, options: SamplerOptions) -> Result<Self> {
        telemetry::check_interval(options.interval_s)?;
        backend.probe()?;
        let sink = options.csv_path.as_deref().map(TraceWriter::create).transpose()?;
        let (stop_tx, stop_rx) = mpsc::channel();
        let (sample_tx, sample_rx) = mpsc::channel();
        let worker = Worker {
            backend,
            interval: Duration::from_secs_f64(options.interval_s),
            start: options.run_start.unwrap_or_else(Instant::now),
            stop: stop_rx,
            samples: sample_tx,
            sink,
            stats: SamplerStats::default(),
            replay_pos: 0,
            last: None,
        };
        let thread = std::thread::Builder::new()
            .name("telemetry".into())
            .spawn(move || worker.run())
            .map_err(|e| BenchError::io("<sampler thread>", e))?;
        Ok(Self {
            label: options.label,
            phase: options.phase,
            interval_s: options.interval_s,
            stop_tx: Some(stop_tx),
            thread: Some(thread),
            samples: sample_rx,
            stats: None,
        })
    }

    pub fn is_running(&self) -> bool {
        self.thread.is_some()
    }

    /// Stops sampling and returns the finalized trace.
    pub fn stop(&mut self) -> Result<Trace> {
        let thread = self.thread.take().ok_or(BenchError::AlreadyStopped)?;
        drop(self.stop_tx.take());
        let stats = thread.join().map_err(|_| BenchError::Workload("telemetry thread panicked".into()))?;
        self.stats = Some(stats);
        let samples: Vec<TelemetrySample> = self.samples.try_iter().collect();
        Ok(Trace::new(self.label.clone(), self.interval_s, self.phase, samples)?)
    }

    /// Available after [`Sampler::stop`].
    pub fn stats(&self) -> Option<SamplerStats> {
        self.stats
    }
}

impl Drop for Sampler {
    fn drop(&mut self) {
        drop(self.stop_tx.take());
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn start_sampler(backend: Backend, options: SamplerOptions) -> Result<Sampler> {
    Sampler::start(backend, options)
}

pub fn stop_sampler(sampler: &mut Sampler) -> Result<Trace> {
    sampler.stop()
}
