//! Text summary of a run directory: message statistics from messages.log
//! and the headline numbers from metrics.json.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cslam::mapping_eval::MapMetrics;
use cslam::protocol::TraceEntry;

use crate::{read, write, CliError};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KindStats {
    pub sent: usize,
    pub lost: usize,
    pub bytes: usize,
}

pub fn parse_trace(path: &Path, text: &str) -> Result<Vec<TraceEntry>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match TraceEntry::parse_line(line) {
            Some(e) => out.push(e),
            None => return Err(CliError::input(path, format!("line {}: malformed message entry", i + 1))),
        }
    }
    Ok(out)
}

pub fn message_stats(trace: &[TraceEntry]) -> BTreeMap<&'static str, KindStats> {
    let mut by_kind: BTreeMap<&'static str, KindStats> = BTreeMap::new();
    for e in trace {
        let s = by_kind.entry(e.kind.name()).or_default();
        s.sent += 1;
        s.bytes += e.size;
        if !e.delivered {
            s.lost += 1;
        }
    }
    by_kind
}

fn opt(v: Option<f64>, unit: &str) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4} {unit}"))
}

pub fn cmd_report(run_dir: &Path) -> Result<String, CliError> {
    let log = run_dir.join("messages.log");
    let trace = parse_trace(&log, &read(&log)?)?;
    let mpath = run_dir.join("metrics.json");
    let metrics = MapMetrics::from_json(&read(&mpath)?).map_err(|e| CliError::input(&mpath, e))?;

    let mut text = String::new();
    let span = trace.last().map_or(0.0, |e| e.time_us as f64 * 1e-6);
    let total_bytes: usize = trace.iter().map(|e| e.size).sum();
    let _ = writeln!(text, "messages: {} over {span:.1} s, {total_bytes} bytes", trace.len());
    let _ = writeln!(text, "{:<14} {:>8} {:>7} {:>10}", "kind", "sent", "lost", "bytes");
    for (kind, s) in message_stats(&trace) {
        let _ = writeln!(text, "{kind:<14} {:>8} {:>7} {:>10}", s.sent, s.lost, s.bytes);
    }
    let mut per_drone: BTreeMap<u16, usize> = BTreeMap::new();
    for e in &trace {
        *per_drone.entry(e.src).or_default() += e.size;
    }
    for (d, b) in per_drone {
        let rate = if span > 0.0 { b as f64 / span } else { 0.0 };
        let _ = writeln!(text, "drone {d} sent {b} bytes ({rate:.1} B/s)");
    }
    let _ = writeln!(text, "mapping rmse: {}", opt(metrics.mapping_rmse_m, "m"));
    let _ = writeln!(text, "mean ATE: {}", opt(metrics.mean_ate(), "m"));
    let _ = writeln!(text, "mean dead-reckoning ATE: {}", opt(metrics.mean_dead_reckoning_ate(), "m"));
    let _ = writeln!(
        text,
        "loop closures: {} intra, {} inter",
        metrics.total_intra(),
        metrics.total_inter()
    );
    let _ = writeln!(
        text,
        "coverage: {:.1}%, target reached at {}",
        metrics.coverage_fraction * 100.0,
        opt(metrics.coverage_time_s, "s")
    );
    let _ = writeln!(
        text,
        "map points: {} ({} after filtering)",
        metrics.map_points, metrics.filtered_map_points
    );
    write(&run_dir.join("report.txt"), &text)?;
    Ok(text)
}
