// SPDX-License-Identifier: MIT OR Apache-2.0

//! Location traces to daily mobility observations: hourly log-distance and
//! hourly at-home indicators, one [`HeteroObservation`] per local calendar day.
//!
//! Hours are local wall-clock slots `h:00..h+1:00`. A slot that does not exist
//! on a daylight-saving day is empty and therefore missing; a repeated slot is
//! two hours long.

mod load;
mod synth;

pub use load::{parse_timestamp, parse_traces, read_traces, LoadSummary};
pub use synth::{plant_traces, AWAY_OFFSET_M, FIX_INTERVAL_S};

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{Duration, NaiveDate, NaiveDateTime, TimeZone, Timelike};
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::HeteroObservation;

/// Mean Earth radius used for great-circle distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Slots per day.
pub const HOURS: usize = 24;
/// Cell size of the grid used to find the densest nocturnal location.
pub const HOME_GRID_M: f64 = 50.0;

/// One location fix; `timestamp` is in seconds since the Unix epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationTrace {
    pub timestamp: f64,
    pub latitude: f64,
    pub longitude: f64,
}

impl LocationTrace {
    pub fn new(timestamp: f64, latitude: f64, longitude: f64) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::invalid("timestamp must be finite"));
        }
        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return Err(Error::invalid(format!("coordinates out of range: {latitude}, {longitude}")));
        }
        Ok(Self {
            timestamp,
            latitude,
            longitude,
        })
    }

    pub fn distance_m(&self, other: &Self) -> f64 {
        haversine_m(self.latitude, self.longitude, other.latitude, other.longitude)
    }
}

/// Great-circle distance in meters between two points given in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Sorts fixes by timestamp; equal timestamps keep their input order.
pub fn sort_traces(traces: &mut [LocationTrace]) {
    traces.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
}

/// Preprocessing settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// IANA timezone name defining local days and hours.
    pub timezone: String,
    /// Longest fix-free stretch inside an hour before its distance is missing.
    pub gap_limit_minutes: f64,
    pub home_radius_m: f64,
    /// Nocturnal window `[start, end)` in local hours, used for home estimation.
    pub night_start_hour: u32,
    pub night_end_hour: u32,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            timezone: "UTC".into(),
            gap_limit_minutes: 30.0,
            home_radius_m: 50.0,
            night_start_hour: 0,
            night_end_hour: 6,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        self.tz()?;
        if !(self.gap_limit_minutes > 0.0 && self.gap_limit_minutes.is_finite()) {
            return Err(Error::invalid("gap limit must be positive"));
        }
        if !(self.home_radius_m > 0.0 && self.home_radius_m.is_finite()) {
            return Err(Error::invalid("home radius must be positive"));
        }
        if self.night_start_hour >= 24 || self.night_end_hour > 24 || self.night_start_hour == self.night_end_hour {
            return Err(Error::invalid("night window must be two distinct hours in 0..=24"));
        }
        Ok(())
    }

    pub fn tz(&self) -> Result<Tz> {
        self.timezone
            .parse()
            .map_err(|_| Error::invalid(format!("unknown timezone {:?}", self.timezone)))
    }

    pub fn gap_limit_s(&self) -> f64 {
        self.gap_limit_minutes * 60.0
    }

    fn is_night(&self, hour: u32) -> bool {
        if self.night_start_hour < self.night_end_hour {
            (self.night_start_hour..self.night_end_hour).contains(&hour)
        } else {
            hour >= self.night_start_hour || hour < self.night_end_hour
        }
    }
}

/// First instant at or after the local wall-clock time `naive`.
fn local_instant(tz: Tz, naive: NaiveDateTime) -> f64 {
    let mut t = naive;
    // Skipped local times (spring forward) map to the end of the gap.
    for _ in 0..48 {
        if let Some(dt) = tz.from_local_datetime(&t).earliest() {
            return dt.timestamp() as f64;
        }
        t += Duration::minutes(30);
    }
    unreachable!("no timezone skips a full day")
}

/// Boundaries of the 24 local hour slots of one calendar day.
#[derive(Clone, Debug, PartialEq)]
pub struct DayWindow {
    pub date: NaiveDate,
    /// `hour_starts[h]..hour_starts[h + 1]` is slot `h`, in epoch seconds.
    pub hour_starts: [f64; HOURS + 1],
}

impl DayWindow {
    pub fn new(date: NaiveDate, tz: Tz) -> Self {
        let midnight = date.and_hms_opt(0, 0, 0).expect("valid midnight");
        let mut hour_starts = [0.0; HOURS + 1];
        for (h, s) in hour_starts.iter_mut().enumerate() {
            *s = local_instant(tz, midnight + Duration::hours(h as i64));
        }
        Self { date, hour_starts }
    }

    pub fn hour(&self, h: usize) -> (f64, f64) {
        (self.hour_starts[h], self.hour_starts[h + 1])
    }
}

/// Indices of sorted `traces` with timestamps in `[a, b)`.
fn fixes_in(traces: &[LocationTrace], a: f64, b: f64) -> Range<usize> {
    let lo = traces.partition_point(|p| p.timestamp < a);
    let hi = traces.partition_point(|p| p.timestamp < b);
    lo..hi.max(lo)
}

/// Longest stretch of `[a, b)` without a fix, given the fixes inside it.
fn longest_gap(traces: &[LocationTrace], idx: Range<usize>, a: f64, b: f64) -> f64 {
    let times: Vec<f64> = traces[idx].iter().map(|p| p.timestamp).collect();
    let mut gap = match (times.first(), times.last()) {
        (Some(f), Some(l)) => (f - a).max(b - l),
        _ => b - a,
    };
    for w in times.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    gap
}

/// Distance in meters travelled during `[a, b)`. Each segment between consecutive
/// fixes is apportioned linearly in time to the hours it overlaps.
fn distance_in(traces: &[LocationTrace], a: f64, b: f64) -> f64 {
    let idx = fixes_in(traces, a, b);
    let first_pair = idx.start.saturating_sub(1);
    let last_pair = idx.end.min(traces.len().saturating_sub(1));
    let mut total = 0.0;
    for i in first_pair..last_pair {
        let (p, q) = (&traces[i], &traces[i + 1]);
        let d = p.distance_m(q);
        let span = q.timestamp - p.timestamp;
        if span <= 0.0 {
            if (a..b).contains(&p.timestamp) {
                total += d;
            }
            continue;
        }
        let overlap = q.timestamp.min(b) - p.timestamp.max(a);
        if overlap > 0.0 {
            total += d * overlap / span;
        }
    }
    total
}

/// Hourly `ln(1 + meters)`; `None` where the hour has no fixes or contains a
/// fix-free stretch longer than `gap_limit_s`. `traces` must be sorted and may
/// extend beyond the day.
pub fn hourly_log_distance(traces: &[LocationTrace], day: &DayWindow, gap_limit_s: f64) -> Vec<Option<f64>> {
    (0..HOURS)
        .map(|h| {
            let (a, b) = day.hour(h);
            let idx = fixes_in(traces, a, b);
            if idx.is_empty() || longest_gap(traces, idx, a, b) > gap_limit_s {
                return None;
            }
            Some(distance_in(traces, a, b).ln_1p())
        })
        .collect()
}

/// Estimated home location.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomeEstimate {
    pub latitude: f64,
    pub longitude: f64,
    /// Nocturnal fixes averaged into the estimate.
    pub support_count: usize,
}

/// Hourly at-home indicator: 1 if any fix of the hour lies within `radius_m`
/// (inclusive) of home, 0 otherwise, `None` for hours without fixes.
pub fn at_home_vector(
    traces: &[LocationTrace],
    day: &DayWindow,
    home: &HomeEstimate,
    radius_m: f64,
) -> Vec<Option<u8>> {
    (0..HOURS)
        .map(|h| {
            let (a, b) = day.hour(h);
            let idx = fixes_in(traces, a, b);
            if idx.is_empty() {
                return None;
            }
            let near = traces[idx]
                .iter()
                .any(|p| haversine_m(p.latitude, p.longitude, home.latitude, home.longitude) <= radius_m);
            Some(u8::from(near))
        })
        .collect()
}

fn local_hour(tz: Tz, timestamp: f64) -> u32 {
    tz.timestamp_opt(timestamp.floor() as i64, 0)
        .single()
        .expect("epoch seconds map to one instant")
        .hour()
}

fn local_date(tz: Tz, timestamp: f64) -> NaiveDate {
    tz.timestamp_opt(timestamp.floor() as i64, 0)
        .single()
        .expect("epoch seconds map to one instant")
        .date_naive()
}

/// Densest location among nocturnal fixes: the 50 m grid cell whose 3x3
/// neighbourhood holds the most fixes, refined to the mean of the fixes within
/// 50 m of that cell's centre.
pub fn estimate_home(traces: &[LocationTrace], cfg: &IngestConfig) -> Result<HomeEstimate> {
    cfg.validate()?;
    let tz = cfg.tz()?;
    let night: Vec<&LocationTrace> = traces
        .iter()
        .filter(|p| cfg.is_night(local_hour(tz, p.timestamp)))
        .collect();
    if night.is_empty() {
        return Err(Error::NoNocturnalData);
    }
    // Local equirectangular projection around the mean nocturnal latitude.
    let lat0 = (night.iter().map(|p| p.latitude).sum::<f64>() / night.len() as f64).to_radians();
    let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let cell_of = |p: &LocationTrace| {
        (
            (p.longitude * m_per_deg * lat0.cos() / HOME_GRID_M).floor() as i64,
            (p.latitude * m_per_deg / HOME_GRID_M).floor() as i64,
        )
    };
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for p in &night {
        *counts.entry(cell_of(p)).or_default() += 1;
    }
    let mut best = ((0, 0), 0usize);
    for &(x, y) in counts.keys() {
        let score: usize = (-1..=1)
            .flat_map(|dx| (-1..=1).map(move |dy| (x + dx, y + dy)))
            .filter_map(|c| counts.get(&c))
            .sum();
        if score > best.1 {
            best = ((x, y), score);
        }
    }
    let (cx, cy) = best.0;
    let centre_lat = (cy as f64 + 0.5) * HOME_GRID_M / m_per_deg;
    let centre_lon = (cx as f64 + 0.5) * HOME_GRID_M / (m_per_deg * lat0.cos());
    let near: Vec<&&LocationTrace> = night
        .iter()
        .filter(|p| haversine_m(p.latitude, p.longitude, centre_lat, centre_lon) <= HOME_GRID_M)
        .collect();
    let n = near.len();
    debug_assert!(n > 0, "fixes of the best cell lie within 50 m of its centre");
    Ok(HomeEstimate {
        latitude: near.iter().map(|p| p.latitude).sum::<f64>() / n as f64,
        longitude: near.iter().map(|p| p.longitude).sum::<f64>() / n as f64,
        support_count: n,
    })
}

/// Daily observations with their local dates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dates: Vec<NaiveDate>,
    pub observations: Vec<HeteroObservation>,
}

/// One observation per local day from the first to the last fix, with the home
/// location estimated from the same traces.
pub fn build_dataset(traces: &[LocationTrace], cfg: &IngestConfig) -> Result<(Dataset, HomeEstimate)> {
    if traces.is_empty() {
        return Err(Error::EmptyDataset("no location fixes".into()));
    }
    let mut sorted = traces.to_vec();
    sort_traces(&mut sorted);
    let home = estimate_home(&sorted, cfg)?;
    Ok((build_dataset_with_home(&sorted, &home, cfg)?, home))
}

/// As [`build_dataset`] with a known home location.
pub fn build_dataset_with_home(traces: &[LocationTrace], home: &HomeEstimate, cfg: &IngestConfig) -> Result<Dataset> {
    cfg.validate()?;
    let tz = cfg.tz()?;
    if traces.is_empty() {
        return Err(Error::EmptyDataset("no location fixes".into()));
    }
    let mut sorted = traces.to_vec();
    sort_traces(&mut sorted);
    let first = local_date(tz, sorted[0].timestamp);
    let last = local_date(tz, sorted[sorted.len() - 1].timestamp);
    let dates: Vec<NaiveDate> = first.iter_days().take_while(|d| *d <= last).collect();
    let observations = dates
        .par_iter()
        .map(|&date| {
            let day = DayWindow::new(date, tz);
            let dist = hourly_log_distance(&sorted, &day, cfg.gap_limit_s());
            let home_bits = at_home_vector(&sorted, &day, home, cfg.home_radius_m);
            HeteroObservation::new(
                dist.iter().map(|v| v.unwrap_or(0.0)).collect(),
                dist.iter().map(Option::is_none).collect(),
                home_bits.iter().map(|v| v.unwrap_or(0)).collect(),
                home_bits.iter().map(Option::is_none).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { dates, observations })
}
