// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reading `timestamp,lat,lon` trace files.

use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{sort_traces, LocationTrace};
use crate::error::Result;

/// Counts from a trace file load.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadSummary {
    pub loaded: usize,
    pub skipped: usize,
    /// 1-based line numbers of the first few skipped lines.
    pub skipped_lines: Vec<usize>,
}

const REPORTED_SKIPS: usize = 10;

/// Epoch seconds, RFC 3339 with offset, or ISO 8601 without offset (read as UTC).
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let from = |secs: i64, nanos: u32| secs as f64 + f64::from(nanos) * 1e-9;
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(from(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|dt| {
            let utc = dt.and_utc();
            from(utc.timestamp(), utc.timestamp_subsec_nanos())
        })
}

fn parse_line(line: &str) -> Option<LocationTrace> {
    let mut fields = line.split(',');
    let (t, lat, lon) = (fields.next()?, fields.next()?, fields.next()?);
    if fields.next().is_some() {
        return None;
    }
    LocationTrace::new(parse_timestamp(t)?, lat.trim().parse().ok()?, lon.trim().parse().ok()?).ok()
}

/// Parses trace lines, skipping blank lines, an optional header and malformed
/// lines (counted in the summary). The result is sorted by timestamp.
pub fn parse_traces(text: &str) -> (Vec<LocationTrace>, LoadSummary) {
    let mut traces = Vec::new();
    let mut summary = LoadSummary::default();
    let mut seen_content = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let is_header = !seen_content && line.to_ascii_lowercase().starts_with("timestamp");
        seen_content = true;
        if is_header {
            continue;
        }
        match parse_line(line) {
            Some(p) => traces.push(p),
            None => {
                summary.skipped += 1;
                if summary.skipped_lines.len() < REPORTED_SKIPS {
                    summary.skipped_lines.push(i + 1);
                }
            }
        }
    }
    summary.loaded = traces.len();
    sort_traces(&mut traces);
    (traces, summary)
}

pub fn read_traces(path: &Path) -> Result<(Vec<LocationTrace>, LoadSummary)> {
    Ok(parse_traces(&std::fs::read_to_string(path)?))
}
