// SPDX-License-Identifier: MIT OR Apache-2.0

//! Plot-ready comma-separated series built from detector and model outputs.

use std::fmt::Write as _;

use circadian_cpd::detector::CpReport;
use circadian_cpd::formats::{Checkpoint, GroundTruth, NA};

use crate::UsageError;

pub const TRACE_FILE: &str = "trace.csv";
pub const RASTER_FILE: &str = "label_raster.csv";
pub const ENVELOPE_FILE: &str = "envelopes.csv";
pub const BERNOULLI_FILE: &str = "bernoulli.csv";

/// Run length implied by the planted change points: steps since the last change
/// point strictly before `t`, or `t` if there is none.
pub fn true_run_length(t: usize, change_points: &[usize]) -> usize {
    change_points.iter().filter(|&&c| c < t).max().map_or(t, |c| t - c)
}

/// `t,r_map,detected,estimated_cp[,true_r,true_cp]`, aligned by step.
pub fn trace_csv(rep: &CpReport, truth: Option<&GroundTruth>) -> String {
    let mut out = String::from("t,r_map,detected,estimated_cp");
    if truth.is_some() {
        out.push_str(",true_r,true_cp");
    }
    out.push('\n');
    for (i, r) in rep.runlength_map.iter().enumerate() {
        let t = i + 1;
        let detected = rep.detected_cps.iter().any(|c| c.time == t);
        let estimated = rep.detected_cps.iter().any(|c| c.estimated_cp_time == t);
        let _ = write!(out, "{t},{r},{},{}", u8::from(detected), u8::from(estimated));
        if let Some(g) = truth {
            let _ = write!(
                out,
                ",{},{}",
                true_run_length(t, &g.change_points),
                u8::from(g.change_points.contains(&t))
            );
        }
        out.push('\n');
    }
    out
}

/// One-hot label rows `t,k1..kK[,true_label]`; missing steps are `NA`.
pub fn raster_csv(labels: &[Option<usize>], truth: Option<&GroundTruth>) -> String {
    let k = truth
        .and_then(|g| g.labels.iter().max().copied())
        .unwrap_or(0)
        .max(labels.iter().flatten().max().map_or(0, |z| z + 1));
    let mut out = String::from("t");
    for c in 1..=k {
        let _ = write!(out, ",k{c}");
    }
    if truth.is_some() {
        out.push_str(",true_label");
    }
    out.push('\n');
    for (i, z) in labels.iter().enumerate() {
        let _ = write!(out, "{}", i + 1);
        for c in 0..k {
            match z {
                Some(z) => {
                    let _ = write!(out, ",{}", u8::from(*z == c));
                }
                None => {
                    let _ = write!(out, ",{NA}");
                }
            }
        }
        if let Some(g) = truth {
            match g.labels.get(i) {
                Some(l) => {
                    let _ = write!(out, ",{l}");
                }
                None => {
                    let _ = write!(out, ",{NA}");
                }
            }
        }
        out.push('\n');
    }
    out
}

fn class_rows(rows: impl Iterator<Item = Vec<f64>>, d: usize) -> String {
    let mut out = String::from("class");
    for h in 1..=d {
        let _ = write!(out, ",h{h}");
    }
    out.push('\n');
    for (k, row) in rows.enumerate() {
        let _ = write!(out, "{}", k + 1);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Envelope `s_k(t)` of every class at hours `1..=D`, one row per class.
pub fn envelope_csv(model: &Checkpoint) -> String {
    let d = model.params.dim();
    class_rows(
        model
            .params
            .kernel_hp
            .iter()
            .map(|hp| (1..=d).map(|t| hp.fourier_envelope(t as f64)).collect()),
        d,
    )
}

/// Bernoulli means, one row per class.
pub fn bernoulli_csv(model: &Checkpoint) -> String {
    class_rows(model.params.bern_means.iter().cloned(), model.params.dim())
}

/// Every series the inputs allow, as `(file name, contents)`.
pub fn series(
    rep: &CpReport,
    truth: Option<&GroundTruth>,
    labels: Option<&[Option<usize>]>,
    model: Option<&Checkpoint>,
) -> anyhow::Result<Vec<(&'static str, String)>> {
    if let Some(g) = truth {
        if g.labels.len() != rep.len() {
            return Err(UsageError(format!(
                "ground truth has {} steps but the report has {}",
                g.labels.len(),
                rep.len()
            ))
            .into());
        }
    }
    let mut out = vec![(TRACE_FILE, trace_csv(rep, truth))];
    if let Some(l) = labels {
        out.push((RASTER_FILE, raster_csv(l, truth)));
    }
    if let Some(m) = model {
        out.push((ENVELOPE_FILE, envelope_csv(m)));
        out.push((BERNOULLI_FILE, bernoulli_csv(m)));
    }
    Ok(out)
}
