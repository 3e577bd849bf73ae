//! Run records, their CSV form, the text report and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use cropbench_core::energy::{compare, format_ratio, format_sig, Metric, RatioTable, RunMetrics};
use cropbench_core::telemetry::{Phase, Trace};

use crate::error::{BenchError, IoContext, Result};

pub const METRICS_HEADER: [&str; 10] = [
    "variant",
    "phase",
    "peak_memory_mib",
    "avg_power_w",
    "wall_time_h",
    "energy_kwh",
    "images_generated",
    "energy_per_image_kwh",
    "perceptual_score",
    "trace_file",
];

/// One monitored phase of one variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub phase: Phase,
    /// `metrics.label` is the variant name.
    pub metrics: RunMetrics,
    pub perceptual_score: Option<f64>,
    /// Trace CSV, relative to the run directory.
    pub trace_file: String,
}

impl RunRecord {
    pub fn variant(&self) -> &str {
        &self.metrics.label
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Full-precision CSV, one row per record.
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).expect("in-memory write");
    for r in records {
        let m = &r.metrics;
        w.write_record([
            m.label.clone(),
            r.phase.to_string(),
            m.peak_memory_mib.to_string(),
            m.avg_power_w.to_string(),
            m.wall_time_h.to_string(),
            m.energy_kwh.to_string(),
            m.images_generated.to_string(),
            opt(m.energy_per_image_kwh),
            opt(r.perceptual_score),
            r.trace_file.clone(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn parse_metrics_csv(text: &str, origin: &Path) -> Result<Vec<RunRecord>> {
    let bad = |m: String| BenchError::format(origin, m);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(bad("unexpected metrics header".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> { field(k).parse().map_err(|_| bad(format!("row {}: bad {}", i + 1, METRICS_HEADER[k]))) };
        let opt_num = |k: usize| -> Result<Option<f64>> {
            if field(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<u64> { field(k).parse().map_err(|_| bad(format!("row {}: bad {}", i + 1, METRICS_HEADER[k]))) };
        out.push(RunRecord {
            phase: Phase::parse(field(1))?,
            metrics: RunMetrics {
                label: field(0).to_string(),
                peak_memory_mib: int(2)?,
                avg_power_w: num(3)?,
                wall_time_h: num(4)?,
                energy_kwh: num(5)?,
                images_generated: int(6)?,
                energy_per_image_kwh: opt_num(7)?,
            },
            perceptual_score: opt_num(8)?,
            trace_file: field(9).to_string(),
        });
    }
    Ok(out)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).at(path)?;
    parse_metrics_csv(&text, path)
}

/// Ratio tables per phase, for phases with at least two variants and the
/// baseline among them.
pub fn ratio_tables(records: &[RunRecord], baseline: &str) -> Vec<(Phase, RatioTable)> {
    [Phase::Training, Phase::Inference]
        .into_iter()
        .filter_map(|phase| {
            let runs: Vec<RunMetrics> = records.iter().filter(|r| r.phase == phase).map(|r| r.metrics.clone()).collect();
            compare(&runs, baseline).ok().map(|t| (phase, t))
        })
        .collect()
}

pub fn ratio_csv(tables: &[(Phase, RatioTable)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["phase".to_string(), "variant".into(), "baseline".into()];
    header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    w.write_record(&header).expect("in-memory write");
    for (phase, table) in tables {
        for row in &table.rows {
            let mut rec = vec![phase.to_string(), row.label.clone(), table.baseline.clone()];
            rec.extend(row.ratios.iter().map(|r| opt(*r)));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    out.push_str(&line(header.to_vec()));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
}

const TEXT_HEADER: [&str; 9] = [
    "variant",
    "phase",
    "peak_mem_MiB",
    "avg_power_W",
    "time_h",
    "energy_kWh",
    "images",
    "kWh/image",
    "perceptual",
];

/// Plain-text report: a metrics table, then one ratio table per phase
/// when a baseline is given. Fixed rounding; output is deterministic.
pub fn render_text(records: &[RunRecord], baseline: Option<&str>) -> String {
    let mut out = String::new();
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                m.label.clone(),
                r.phase.to_string(),
                m.peak_memory_mib.to_string(),
                format!("{:.1}", m.avg_power_w),
                format!("{:.3}", m.wall_time_h),
                format!("{:.4}", m.energy_kwh),
                m.images_generated.to_string(),
                m.energy_per_image_kwh.map_or("-".into(), |e| format!("{e:.6}")),
                r.perceptual_score.map_or("-".into(), |s| format!("{s:.2}")),
            ]
        })
        .collect();
    table(&mut out, &TEXT_HEADER, &rows);
    if let Some(base) = baseline {
        for (phase, t) in ratio_tables(records, base) {
            let _ = writeln!(out, "\n{phase} ratios vs {}", t.baseline);
            let header: Vec<&str> = std::iter::once("variant").chain(Metric::ALL.iter().map(|m| m.name())).collect();
            let rows: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|row| {
                    std::iter::once(row.label.clone())
                        .chain(row.ratios.iter().map(|r| r.map_or("-".into(), format_ratio)))
                        .collect()
                })
                .collect();
            table(&mut out, &header, &rows);
        }
    }
    out
}

/// `(variant, wall_time_h, score)` for inference runs with a score.
pub fn time_vs_score(records: &[RunRecord]) -> Vec<(String, f64, f64)> {
    records
        .iter()
        .filter(|r| r.phase == Phase::Inference)
        .filter_map(|r| r.perceptual_score.map(|s| (r.metrics.label.clone(), r.metrics.wall_time_h, s)))
        .collect()
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi > lo {
        (lo, hi * 1.05)
    } else {
        (lo, lo + 1.0)
    }
}

fn scale(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        W / 2.0,
        esc(title),
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    )
}

fn axis_labels(svg: &mut String, x: (f64, f64), y_left: (f64, f64), y_right: Option<(f64, f64)>) {
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(svg, "<text x=\"{l}\" y=\"{}\" text-anchor=\"middle\">{}</text>", b + 14.0, format_sig(x.0, 3));
    let _ = writeln!(svg, "<text x=\"{r}\" y=\"{}\" text-anchor=\"middle\">{}</text>", b + 14.0, format_sig(x.1, 3));
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{b}\" text-anchor=\"end\">{}</text>", l - 4.0, format_sig(y_left.0, 3));
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        l - 4.0,
        t + 4.0,
        format_sig(y_left.1, 3)
    );
    if let Some(yr) = y_right {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{b}\">{}</text>", r + 4.0, format_sig(yr.0, 3));
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{}</text>", r + 4.0, t + 4.0, format_sig(yr.1, 3));
    }
}

fn polyline(svg: &mut String, points: &[(f64, f64)], color: &str) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        svg,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
        pts.join(" ")
    );
}

/// Memory (left axis) and power (right axis) against elapsed time.
pub fn trace_svg(trace: &Trace) -> String {
    let s = trace.samples();
    let x = extent(s.iter().map(|p| p.elapsed_s));
    let mem = extent(s.iter().map(|p| p.memory_mib as f64));
    let pow = extent(s.iter().map(|p| p.power_w));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let mut svg = svg_open(&format!("{} ({})", trace.label(), trace.phase()));
    axis_labels(&mut svg, x, mem, Some(pow));
    let mem_pts: Vec<_> = s.iter().map(|p| (scale(p.elapsed_s, x, l, r), scale(p.memory_mib as f64, mem, b, t))).collect();
    let pow_pts: Vec<_> = s.iter().map(|p| (scale(p.elapsed_s, x, l, r), scale(p.power_w, pow, b, t))).collect();
    polyline(&mut svg, &mem_pts, "#1f77b4");
    polyline(&mut svg, &pow_pts, "#d62728");
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">elapsed (s)</text>", W / 2.0, H - 16.0);
    let _ = writeln!(
        svg,
        "<text x=\"12\" y=\"{}\" fill=\"#1f77b4\" transform=\"rotate(-90 12 {0})\" text-anchor=\"middle\">memory (MiB)</text>",
        H / 2.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" fill=\"#d62728\" transform=\"rotate(90 {0} {1})\" text-anchor=\"middle\">power (W)</text>",
        W - 12.0,
        H / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Wall time against perceptual score, one labelled point per variant.
pub fn scatter_svg(points: &[(String, f64, f64)]) -> String {
    let x = extent(points.iter().map(|p| p.1));
    let y = extent(points.iter().map(|p| p.2));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let mut svg = svg_open("time vs perceptual score");
    axis_labels(&mut svg, x, y, None);
    for (label, px, py) in points {
        let (cx, cy) = (scale(*px, x, l, r), scale(*py, y, b, t));
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"#2ca02c\" data-time-h=\"{px}\" data-score=\"{py}\"/>"
        );
        let _ = writeln!(svg, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", cx + 6.0, cy - 6.0, esc(label));
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">wall time (h)</text>", W / 2.0, H - 16.0);
    let _ = writeln!(
        svg,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {0})\" text-anchor=\"middle\">perceptual score</text>",
        H / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}

/// Writes `report.txt`, `metrics.csv`, `ratios.csv` (with a baseline) and,
/// when there is anything to plot, `plots/time_vs_score.svg` into `dir`.
pub fn write_report_files(dir: &Path, records: &[RunRecord], baseline: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).at(&p)
    };
    write("metrics.csv", metrics_csv(records))?;
    write("report.txt", render_text(records, baseline))?;
    if let Some(base) = baseline {
        write("ratios.csv", ratio_csv(&ratio_tables(records, base)))?;
    }
    let points = time_vs_score(records);
    if !points.is_empty() {
        let plots = dir.join("plots");
        std::fs::create_dir_all(&plots).at(&plots)?;
        write("plots/time_vs_score.svg", scatter_svg(&points))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, phase: Phase, mem: u64, power: f64, hours: f64, score: Option<f64>) -> RunRecord {
        RunRecord {
            phase,
            metrics: RunMetrics {
                label: label.into(),
                peak_memory_mib: mem,
                avg_power_w: power,
                wall_time_h: hours,
                energy_kwh: power * hours / 1000.0,
                images_generated: 500,
                energy_per_image_kwh: Some(power * hours / 1000.0 / 500.0),
            },
            perceptual_score: score,
            trace_file: format!("{label}.csv"),
        }
    }

    #[test]
    fn metrics_csv_round_trip() {
        let recs = vec![
            record("a", Phase::Inference, 10, 1.0 / 3.0, 0.1, Some(0.34)),
            record("b", Phase::Training, 20, 2.5, 1.25, None),
        ];
        let text = metrics_csv(&recs);
        assert!(text.starts_with("variant,phase,peak_memory_mib,"));
        assert_eq!(parse_metrics_csv(&text, Path::new("m.csv")).unwrap(), recs);
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = render_text(&[], Some("x"));
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("variant"));
        let dir = tempfile::tempdir().unwrap();
        write_report_files(dir.path(), &[], None).unwrap();
        assert!(!dir.path().join("plots").exists());
    }

    #[test]
    fn text_is_deterministic_and_shows_ratios() {
        let recs = vec![
            record("SDXL", Phase::Inference, 44640, 221.0, 1.06, Some(0.35)),
            record("SD3.5M", Phase::Inference, 19338, 167.4, 1.59, Some(0.34)),
        ];
        let a = render_text(&recs, Some("SD3.5M"));
        assert_eq!(a, render_text(&recs, Some("SD3.5M")));
        assert!(a.contains("2.3×"));
        assert!(a.contains("1.3×"));
        let svg = scatter_svg(&time_vs_score(&recs));
        assert!(svg.contains("data-time-h=\"1.59\" data-score=\"0.34\""));
    }
}
