mod common;

use cropbench::trace_csv::{quantize, read_csv, read_trace, write_csv, write_trace, TraceMeta, HEADER};
use cropbench_core::telemetry::{Phase, TelemetrySample, Trace};
use proptest::prelude::*;

fn meta(trace: &Trace) -> TraceMeta {
    TraceMeta::of(trace)
}

fn sample_strategy() -> impl Strategy<Value = (u32, f64, u64, f64, u8)> {
    (1u32..300, 0.0f64..0.0049, 0u64..200_000, 0.0f64..1999.99, 0u8..=100)
}

fn arbitrary_trace() -> impl Strategy<Value = Trace> {
    (prop::collection::vec(sample_strategy(), 0..80), prop::bool::ANY).prop_map(|(rows, training)| {
        let mut centis = 0u64;
        let samples = rows
            .into_iter()
            .map(|(step, jitter, mem, power, util)| {
                centis += step as u64;
                TelemetrySample {
                    elapsed_s: centis as f64 / 100.0 + jitter,
                    timestamp_utc: format!("2026-05-01T12:00:{:06.3}Z", (centis % 6000) as f64 / 100.0),
                    memory_mib: mem,
                    power_w: power,
                    gpu_util_pct: util,
                }
            })
            .collect();
        let phase = if training { Phase::Training } else { Phase::Inference };
        Trace::unchecked("prop", 1.0, phase, samples).unwrap()
    })
}

proptest! {
    #[test]
    fn round_trip_is_identity_at_two_decimals(trace in arbitrary_trace()) {
        let bytes = write_trace(&trace, Vec::new()).unwrap();
        let back = read_trace(bytes.as_slice(), meta(&trace)).unwrap();
        let expected: Vec<TelemetrySample> = trace.samples().iter().map(quantize).collect();
        prop_assert_eq!(back.samples(), expected.as_slice());
        // Already-quantized traces survive unchanged, bytes included.
        let again = write_trace(&back, Vec::new()).unwrap();
        prop_assert_eq!(read_trace(again.as_slice(), meta(&trace)).unwrap(), back);
        prop_assert_eq!(again, bytes);
    }
}

#[test]
fn thousand_samples_read_back_equal() {
    let dir = tempfile::tempdir().unwrap();
    let trace = common::constant_trace("long", Phase::Training, 1000, 19338, 167.4);
    let path = dir.path().join("t.csv");
    write_csv(&trace, &path).unwrap();
    assert_eq!(read_csv(&path, meta(&trace)).unwrap(), trace);
}

#[test]
fn header_is_exact_and_writes_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let trace = common::constant_trace("three", Phase::Inference, 3, 10000, 180.0);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_csv(&trace, &a).unwrap();
    write_csv(&trace, &b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct"));
    assert_eq!(HEADER.join(","), "elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct");
    assert_eq!(lines.next(), Some("0.00,2026-03-01T00:00:00.000Z,10000,180.00,90"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn empty_trace_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let trace = Trace::new("empty", 1.0, Phase::Inference, Vec::new()).unwrap();
    let path = dir.path().join("e.csv");
    write_csv(&trace, &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    assert!(read_csv(&path, meta(&trace)).unwrap().is_empty());
}

#[test]
fn schema_mismatch_is_rejected() {
    let bad = "elapsed,timestamp_utc,memory_mib,power_w,gpu_util_pct\n";
    let m = TraceMeta {
        label: "x".into(),
        interval_s: 1.0,
        phase: Phase::Training,
    };
    assert!(read_trace(bad.as_bytes(), m.clone()).is_err());
    let not_increasing = "elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct\n1.00,a,1,1.00,1\n1.00,b,1,1.00,1\n";
    assert!(read_trace(not_increasing.as_bytes(), m.clone()).is_err());
    let bad_number = "elapsed_s,timestamp_utc,memory_mib,power_w,gpu_util_pct\n1.00,a,lots,1.00,1\n";
    assert!(read_trace(bad_number.as_bytes(), m).is_err());
}
