//! Trace CSV: `elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct`,
//! one row per sample, reals with two decimals.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use cropbench_core::telemetry::{Phase, TelemetrySample, Trace};

use crate::error::{BenchError, IoContext, Result};

pub const HEADER: [&str; 5] = ["elapsed_s", "timestamp_utc", "memory_mib", "power_w", "gpu_util_pct"];

/// Run metadata that the CSV does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub label: String,
    pub interval_s: f64,
    pub phase: Phase,
}

impl TraceMeta {
    pub fn of(trace: &Trace) -> Self {
        Self {
            label: trace.label().to_string(),
            interval_s: trace.interval_s(),
            phase: trace.phase(),
        }
    }
}

/// Rounds to the persisted precision, so in-memory samples equal what a
/// later read returns.
pub fn round2(x: f64) -> f64 {
    format!("{x:.2}").parse().expect("formatted float parses")
}

pub fn quantize(sample: &TelemetrySample) -> TelemetrySample {
    TelemetrySample {
        elapsed_s: round2(sample.elapsed_s),
        power_w: round2(sample.power_w),
        ..sample.clone()
    }
}

fn record(s: &TelemetrySample) -> [String; 5] {
    [
        format!("{:.2}", s.elapsed_s),
        s.timestamp_utc.clone(),
        s.memory_mib.to_string(),
        format!("{:.2}", s.power_w),
        s.gpu_util_pct.to_string(),
    ]
}

/// Incremental writer; every row is flushed so a killed run leaves a
/// readable file.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl TraceWriter<File> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).at(path)?;
        Self::new(file).map_err(|e| retag(e, path))
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        inner.write_record(HEADER).map_err(csv_err)?;
        inner.flush().map_err(|e| BenchError::io("<trace>", e))?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, sample: &TelemetrySample) -> Result<()> {
        self.inner.write_record(record(sample)).map_err(csv_err)?;
        self.inner.flush().map_err(|e| BenchError::io("<trace>", e))
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| BenchError::io("<trace>", e.into_error()))
    }
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::format("<trace>", e.to_string())
}

fn retag(e: BenchError, path: &Path) -> BenchError {
    match e {
        BenchError::Io { source, .. } => BenchError::io(path, source),
        BenchError::Format { message, .. } => BenchError::format(path, message),
        other => other,
    }
}

pub fn write_trace<W: Write>(trace: &Trace, writer: W) -> Result<W> {
    let mut w = TraceWriter::new(writer)?;
    for s in trace.samples() {
        w.push(s)?;
    }
    w.into_inner()
}

pub fn write_csv(trace: &Trace, path: &Path) -> Result<()> {
    let file = File::create(path).at(path)?;
    write_trace(trace, std::io::BufWriter::new(file)).map(drop).map_err(|e| retag(e, path))
}

/// Reads a trace. Per-sample invariants are checked; tick regularity is
/// not, so partial traces from failed runs still load.
pub fn read_trace<R: Read>(reader: R, meta: TraceMeta) -> Result<Trace> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(BenchError::format(
            "<trace>",
            format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut samples = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let line = i + 2;
        let field = |k: usize| row.get(k).unwrap_or("");
        let bad = |what: &str| BenchError::format("<trace>", format!("line {line}: bad {what}"));
        samples.push(TelemetrySample {
            elapsed_s: field(0).parse().map_err(|_| bad("elapsed_s"))?,
            timestamp_utc: field(1).to_string(),
            memory_mib: field(2).parse().map_err(|_| bad("memory_mib"))?,
            power_w: field(3).parse().map_err(|_| bad("power_w"))?,
            gpu_util_pct: field(4).parse().map_err(|_| bad("gpu_util_pct"))?,
        });
    }
    Ok(Trace::unchecked(meta.label, meta.interval_s, meta.phase, samples)?)
}

pub fn read_csv(path: &Path, meta: TraceMeta) -> Result<Trace> {
    let file = File::open(path).at(path)?;
    read_trace(std::io::BufReader::new(file), meta).map_err(|e| retag(e, path))
}

/// Metadata for a trace file when none is recorded elsewhere: label from
/// the file stem, 1 s interval.
pub fn default_meta(path: &Path, phase: Phase) -> TraceMeta {
    TraceMeta {
        label: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into()),
        interval_s: cropbench_core::telemetry::DEFAULT_INTERVAL_S,
        phase,
    }
}
