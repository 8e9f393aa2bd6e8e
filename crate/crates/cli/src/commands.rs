// SPDX-License-Identifier: MIT OR Apache-2.0

//! Subcommand implementations. Each reads its inputs, runs one pipeline stage
//! and writes its outputs into the output directory.

use std::path::{Path, PathBuf};

use anyhow::Context;
use circadian_cpd::detector::{fpo_detect, peo_detect, CpReport};
use circadian_cpd::formats::{
    labels_from_csv, labels_to_csv, posterior_from_csv, posterior_to_csv, read_json, runlength_posterior_to_csv,
    write_atomic, write_json, Checkpoint, DatasetFile, GroundTruth, CHECKPOINT_VERSION,
};
use circadian_cpd::ingest::{build_dataset, read_traces};
use circadian_cpd::mixture::fit;
use circadian_cpd::oracle::run_suite;
use circadian_cpd::simulate::{simulate, soft_label_scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, RunConfig, Scenario};
use crate::report;
use crate::UsageError;

pub const DATA_FILE: &str = "data.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const RUNLENGTH_FILE: &str = "runlength_posterior.csv";
pub const HOME_FILE: &str = "home.json";
pub const LOAD_SUMMARY_FILE: &str = "load_summary.json";
pub const ORACLE_FILE: &str = "oracle.csv";

fn require<'a>(input: Option<&'a Path>, what: &str) -> anyhow::Result<&'a Path> {
    input.ok_or_else(|| UsageError(format!("--input is required: {what}")).into())
}

fn prepare_output(dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let out = prepare_output(out)?;
    match cfg.simulate.scenario {
        Scenario::Partitioned => {
            let sim = simulate(&cfg.simulation()).map_err(|e| UsageError(e.to_string()))?;
            DatasetFile::indexed(sim.data.clone()).write(&out.join(DATA_FILE))?;
            write_atomic(&out.join(LABELS_FILE), labels_to_csv(&sim.observed_labels()).as_bytes())?;
            let truth = GroundTruth {
                change_points: sim.change_points.clone(),
                labels: sim.labels.iter().map(|z| z + 1).collect(),
                partition_probs: sim.partition_probs.clone(),
                missing: sim.missing.clone(),
            };
            write_json(&out.join(TRUTH_FILE), &truth)?;
            eprintln!(
                "simulated T={} K={} D={} with change points {:?}",
                sim.labels.len(),
                cfg.simulate.k,
                cfg.simulate.d,
                sim.change_points
            );
        }
        Scenario::Soft => {
            if cfg.simulate.k != 3 {
                return Err(UsageError("the soft scenario has K = 3".into()).into());
            }
            let rate = cfg.simulate.missing_rate;
            if !(0.0..1.0).contains(&rate) {
                return Err(UsageError("missing rate must lie in [0, 1)".into()).into());
            }
            if cfg.simulate.precision.is_nan() || cfg.simulate.precision <= 0.0 {
                return Err(UsageError("precision must be positive".into()).into());
            }
            let sc = soft_label_scenario(cfg.seed, cfg.simulate.precision);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            let missing: Vec<bool> = (0..sc.labels.len()).map(|_| rng.random_bool(rate)).collect();
            let rows: Vec<Option<Vec<f64>>> = sc
                .probs
                .iter()
                .zip(&missing)
                .map(|(p, &m)| (!m).then(|| p.clone()))
                .collect();
            let map: Vec<Option<usize>> = sc
                .map_labels()
                .into_iter()
                .zip(&missing)
                .map(|(z, &m)| (!m).then_some(z))
                .collect();
            write_atomic(&out.join(POSTERIOR_FILE), posterior_to_csv(&rows, 3).as_bytes())?;
            write_atomic(&out.join(LABELS_FILE), labels_to_csv(&map).as_bytes())?;
            let truth = GroundTruth {
                change_points: sc.change_points.clone(),
                labels: sc.labels.iter().map(|z| z + 1).collect(),
                partition_probs: Vec::new(),
                missing,
            };
            write_json(&out.join(TRUTH_FILE), &truth)?;
            eprintln!("simulated soft scenario T=100 K=3 with change points {:?}", sc.change_points);
        }
    }
    Ok(())
}

pub fn cmd_preprocess(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let input = require(input, "a timestamp,lat,lon trace file")?;
    cfg.ingest.validate().map_err(|e| UsageError(e.to_string()))?;
    let (traces, summary) = read_traces(input)?;
    eprintln!(
        "loaded {} fixes, skipped {} malformed lines{}",
        summary.loaded,
        summary.skipped,
        if summary.skipped_lines.is_empty() {
            String::new()
        } else {
            format!(" (first at lines {:?})", summary.skipped_lines)
        }
    );
    let (ds, home) = build_dataset(&traces, &cfg.ingest)?;
    let out = prepare_output(out)?;
    let file = DatasetFile {
        row_labels: ds.dates.iter().map(|d| d.to_string()).collect(),
        observations: ds.observations,
    };
    file.write(&out.join(DATA_FILE))?;
    write_json(&out.join(HOME_FILE), &home)?;
    write_json(&out.join(LOAD_SUMMARY_FILE), &summary)?;
    let missing_days = file.observations.iter().filter(|o| o.is_fully_missing()).count();
    eprintln!("wrote {} days ({missing_days} fully missing)", file.observations.len());
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let input = require(input, "a dataset file")?;
    let data = DatasetFile::read(input)?;
    let fit_cfg = cfg.fit_config();
    let res = fit(&data.observations, cfg.fit.k, &fit_cfg)?;
    let out = prepare_output(out)?;
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        params: res.params.clone(),
        config: fit_cfg,
        q_trace: res.q_trace.clone(),
        diagnostics: res.diagnostics.clone(),
    };
    write_json(&out.join(MODEL_FILE), &checkpoint)?;
    let k = res.params.n_classes();
    write_atomic(&out.join(POSTERIOR_FILE), posterior_to_csv(&res.posterior.observations(), k).as_bytes())?;
    write_atomic(&out.join(LABELS_FILE), labels_to_csv(&res.posterior.map_labels()).as_bytes())?;
    eprintln!(
        "fit K={k}: final log-likelihood {:.6} after {} iterations (restart {}, converged: {})",
        res.final_loglik(),
        res.diagnostics.iterations,
        res.diagnostics.best_restart + 1,
        res.diagnostics.converged
    );
    Ok(())
}

pub fn cmd_detect(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let input = require(input, "a label file (peo) or posterior file (fpo)")?;
    let det = cfg.detector()?;
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: CpReport = match cfg.detect.mode {
        Mode::Peo => {
            let labels = labels_from_csv(&text)?;
            let inferred = labels.iter().flatten().max().map_or(1, |z| z + 1);
            let k = cfg.detect.k.unwrap_or(inferred);
            if k < inferred {
                return Err(UsageError(format!("labels go up to {inferred} but K = {k}")).into());
            }
            let gamma = cfg.detect.prior_gamma.clone().unwrap_or_else(|| vec![1.0; k]);
            if gamma.len() != k {
                return Err(UsageError(format!("prior_gamma has {} entries for K = {k}", gamma.len())).into());
            }
            peo_detect(&labels, &gamma, &det)?
        }
        Mode::Fpo => {
            let rows = posterior_from_csv(&text)?;
            let k = rows.iter().flatten().next().map_or(0, Vec::len);
            if let Some(want) = cfg.detect.k {
                if want != k {
                    return Err(UsageError(format!("posterior file has {k} classes but K = {want}")).into());
                }
            }
            fpo_detect(&rows, &cfg.fpo_priors(k.max(2)), &det, &cfg.mcmc())?
        }
    };
    let out = prepare_output(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_atomic(&out.join(RUNLENGTH_FILE), runlength_posterior_to_csv(&report).as_bytes())?;
    println!("time,estimated_cp_time");
    for cp in &report.detected_cps {
        println!("{},{}", cp.time, cp.estimated_cp_time);
    }
    Ok(())
}

pub fn cmd_report(input: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let dir = require(input, "a directory with report.json and optional truth.json, labels.csv, model.json")?;
    let rep: CpReport = read_json(&dir.join(REPORT_FILE))?;
    let optional = |name: &str| {
        let p = dir.join(name);
        p.exists().then_some(p)
    };
    let truth: Option<GroundTruth> = optional(TRUTH_FILE).map(|p| read_json(&p)).transpose()?;
    let labels = optional(LABELS_FILE)
        .map(|p| -> anyhow::Result<_> { Ok(labels_from_csv(&std::fs::read_to_string(p)?)?) })
        .transpose()?;
    let model = optional(MODEL_FILE).map(|p| Checkpoint::read(&p)).transpose()?;
    let out = prepare_output(out)?;
    for (name, body) in report::series(&rep, truth.as_ref(), labels.as_deref(), model.as_ref())? {
        write_atomic(&out.join(name), body.as_bytes())?;
    }
    Ok(())
}

/// Returns whether every check passed.
pub fn cmd_oracle_check(cfg: &RunConfig, out: Option<&Path>) -> anyhow::Result<bool> {
    let report = run_suite(cfg.seed);
    let table = report.to_table();
    print!("{table}");
    if let Some(dir) = out {
        write_atomic(&prepare_output(dir)?.join(ORACLE_FILE), table.as_bytes())?;
    }
    Ok(report.all_passed())
}
