// SPDX-License-Identifier: MIT OR Apache-2.0

//! Location traces that reproduce given daily observations, for round-trip tests
//! and demos.
//!
//! Every fix lies on the meridian through home, so path lengths are sums of
//! latitude differences. Observed hours get a fix every three minutes. An
//! at-home hour visits home; an away hour stays at or north of a base point
//! [`AWAY_OFFSET_M`] north of home. Each hour ends where the next observed hour
//! starts, so segments crossing hour boundaries have zero length.

use chrono::NaiveDate;
use chrono_tz::Tz;

use super::{DayWindow, HomeEstimate, LocationTrace, EARTH_RADIUS_M, HOURS};
use crate::error::{Error, Result};
use crate::mixture::HeteroObservation;

/// Seconds between consecutive planted fixes.
pub const FIX_INTERVAL_S: f64 = 180.0;
/// Distance of the away base point north of home.
pub const AWAY_OFFSET_M: f64 = 60.0;

const FIXES_PER_HOUR: usize = 20;
const CLIMB: usize = 9;

#[derive(Clone, Copy)]
struct PlantedHour {
    meters: f64,
    at_home: bool,
}

/// Positions (meters north of home) of the 20 fixes of one hour; the last one
/// is `end`, where the next observed hour starts.
fn hour_path(h: PlantedHour, start: f64, end: f64) -> Result<Vec<f64>> {
    let mut s = Vec::with_capacity(FIXES_PER_HOUR);
    s.push(start);
    let (low, peak) = if h.at_home {
        // start -> home -> peak -> end, with every leg monotone.
        let peak = (h.meters - start + end) / 2.0;
        if peak < end {
            return Err(Error::invalid(format!(
                "at-home hour needs at least {} m of travel; got {}",
                start + end,
                h.meters
            )));
        }
        (0.0, peak)
    } else {
        (AWAY_OFFSET_M, AWAY_OFFSET_M + h.meters / 2.0)
    };
    s.push(low);
    s.extend((1..=CLIMB).map(|j| low + (peak - low) * j as f64 / CLIMB as f64));
    s.extend((1..=CLIMB).map(|j| peak + (end - peak) * j as f64 / CLIMB as f64));
    debug_assert_eq!(s.len(), FIXES_PER_HOUR);
    Ok(s)
}

/// Fixes whose preprocessing under `tz` and `home` reproduces `days`, the first
/// of which falls on `first_date`. Planted hours must be missing in both parts
/// or in neither, hours must be one hour long, and observed at-home hours must
/// travel at least `2 * AWAY_OFFSET_M`.
pub fn plant_traces(
    days: &[HeteroObservation],
    first_date: NaiveDate,
    tz: Tz,
    home: &HomeEstimate,
) -> Result<Vec<LocationTrace>> {
    let mut slots: Vec<(f64, Option<PlantedHour>)> = Vec::with_capacity(days.len() * HOURS);
    for (i, obs) in days.iter().enumerate() {
        if obs.dim() != HOURS {
            return Err(Error::invalid(format!("day {} has {} hours", i + 1, obs.dim())));
        }
        let date = first_date + chrono::Duration::days(i as i64);
        let window = DayWindow::new(date, tz);
        for h in 0..HOURS {
            if obs.real_missing[h] != obs.bin_missing[h] {
                return Err(Error::invalid(format!("day {} hour {h}: parts disagree on missingness", i + 1)));
            }
            let (a, b) = window.hour(h);
            let planted = (!obs.real_missing[h]).then(|| PlantedHour {
                meters: obs.real_values[h].exp_m1(),
                at_home: obs.bin_values[h] == 1,
            });
            if planted.is_some() && b - a != 3600.0 {
                return Err(Error::invalid(format!("day {} hour {h} is not one hour long", i + 1)));
            }
            slots.push((a, planted));
        }
    }
    let observed: Vec<(f64, PlantedHour)> = slots.into_iter().filter_map(|(a, p)| p.map(|p| (a, p))).collect();
    let base = |p: PlantedHour| if p.at_home { 0.0 } else { AWAY_OFFSET_M };
    let deg_per_m = (1.0 / EARTH_RADIUS_M).to_degrees();
    let mut traces = Vec::with_capacity(observed.len() * FIXES_PER_HOUR);
    let mut pos = observed.first().map_or(0.0, |&(_, p)| base(p));
    for (i, &(a, p)) in observed.iter().enumerate() {
        let end = observed.get(i + 1).map_or(base(p), |&(_, q)| {
            if q.at_home {
                base(p)
            } else {
                AWAY_OFFSET_M
            }
        });
        let path = hour_path(p, pos, end)?;
        for (j, s) in path.iter().enumerate() {
            traces.push(LocationTrace::new(
                a + FIX_INTERVAL_S * j as f64,
                home.latitude + s * deg_per_m,
                home.longitude,
            )?);
        }
        pos = end;
    }
    Ok(traces)
}
