use crate::params::Stage;
use crate::search::format_point;
use crate::transform::Assignment;
use std::time::{SystemTime, UNIX_EPOCH};

pub const TRACE_FILE: &str = "OATATlog.dat";
pub const TRACE_HEADER: &str = "# seq\tregion\tstage\tassignment\tcost\ttimestamp";

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub seq: u64,
    pub region: String,
    pub stage: Stage,
    pub assignment: Assignment,
    pub cost: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl TraceRecord {
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}",
            self.seq,
            self.region,
            self.stage.keyword(),
            format_point(&self.assignment),
            self.cost,
            self.timestamp
        )
    }
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Full trace file text: header, then one line per record.
pub fn emit_trace(records: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.line());
        out.push('\n');
    }
    out
}

/// Sequence number following the last record of an existing trace file.
pub fn next_seq(existing: &str) -> u64 {
    existing
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split('\t').next()?.parse::<u64>().ok())
        .max()
        .map_or(1, |s| s + 1)
}

/// Number of records in trace text.
pub fn record_count(text: &str) -> usize {
    text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count()
}
