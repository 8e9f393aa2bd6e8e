// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interchange files. Tables are comma-separated with a header row and `NA` for
//! missing entries; structured files are JSON. Floats are written in their
//! shortest round-trip form, so reading a written file gives identical values.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::CpReport;
use crate::error::{Error, Result};
use crate::mixture::{FitConfig, FitDiagnostics, HeteroObservation, MixtureParams};

pub const NA: &str = "NA";
/// Version written into model checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `contents` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<Option<T>> {
    let s = s.trim();
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| parse_err(line, format!("bad {what} {s:?}")))
}

/// Daily observations keyed by a row label (a date or a step index).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub row_labels: Vec<String>,
    pub observations: Vec<HeteroObservation>,
}

impl DatasetFile {
    /// Rows labelled `1..=T`.
    pub fn indexed(observations: Vec<HeteroObservation>) -> Self {
        Self {
            row_labels: (1..=observations.len()).map(|t| t.to_string()).collect(),
            observations,
        }
    }

    pub fn to_csv(&self) -> String {
        let d = self.observations.first().map_or(0, HeteroObservation::dim);
        let mut out = String::from("date");
        for j in 1..=d {
            let _ = write!(out, ",r{j}");
        }
        for j in 1..=d {
            let _ = write!(out, ",b{j}");
        }
        out.push('\n');
        for (label, o) in self.row_labels.iter().zip(&self.observations) {
            out.push_str(label);
            for j in 0..d {
                if o.real_missing[j] {
                    let _ = write!(out, ",{NA}");
                } else {
                    let _ = write!(out, ",{}", o.real_values[j]);
                }
            }
            for j in 0..d {
                if o.bin_missing[j] {
                    let _ = write!(out, ",{NA}");
                } else {
                    let _ = write!(out, ",{}", o.bin_values[j]);
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = content_lines(text);
        let (_, header) = lines.next().ok_or_else(|| Error::EmptyDataset("dataset file is empty".into()))?;
        let cols = header.split(',').count();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(parse_err(1, "header must be date,r1..rD,b1..bD"));
        }
        let d = (cols - 1) / 2;
        let mut row_labels = Vec::new();
        let mut observations = Vec::new();
        for (n, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(parse_err(n, format!("expected {cols} fields, found {}", fields.len())));
            }
            let mut real = Vec::with_capacity(d);
            let mut bin = Vec::with_capacity(d);
            for j in 0..d {
                real.push(field::<f64>(fields[1 + j], n, "real value")?);
                bin.push(field::<u8>(fields[1 + d + j], n, "binary value")?);
            }
            let obs = HeteroObservation::new(
                real.iter().map(|v| v.unwrap_or(0.0)).collect(),
                real.iter().map(Option::is_none).collect(),
                bin.iter().map(|v| v.unwrap_or(0)).collect(),
                bin.iter().map(Option::is_none).collect(),
            )
            .map_err(|e| parse_err(n, e.to_string()))?;
            row_labels.push(fields[0].trim().to_string());
            observations.push(obs);
        }
        if observations.is_empty() {
            return Err(Error::EmptyDataset("dataset file has no rows".into()));
        }
        Ok(Self {
            row_labels,
            observations,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

/// Label sequence file `t,label` with 1-based labels or `NA`. In memory labels are
/// 0-based.
pub fn labels_to_csv(labels: &[Option<usize>]) -> String {
    let mut out = String::from("t,label\n");
    for (t, z) in labels.iter().enumerate() {
        match z {
            Some(z) => {
                let _ = writeln!(out, "{},{}", t + 1, z + 1);
            }
            None => {
                let _ = writeln!(out, "{},{NA}", t + 1);
            }
        }
    }
    out
}

pub fn labels_from_csv(text: &str) -> Result<Vec<Option<usize>>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text).skip(1) {
        let (_, z) = line
            .split_once(',')
            .ok_or_else(|| parse_err(n, "expected t,label"))?;
        match field::<usize>(z, n, "label")? {
            Some(0) => return Err(parse_err(n, "labels are 1-based")),
            z => out.push(z.map(|z| z - 1)),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("label file has no rows".into()));
    }
    Ok(out)
}

/// Posterior matrix file `t,p1..pK`; a row of `NA` marks a missing step.
pub fn posterior_to_csv(rows: &[Option<Vec<f64>>], k: usize) -> String {
    let mut out = String::from("t");
    for j in 1..=k {
        let _ = write!(out, ",p{j}");
    }
    out.push('\n');
    for (t, row) in rows.iter().enumerate() {
        let _ = write!(out, "{}", t + 1);
        match row {
            Some(r) => r.iter().for_each(|p| {
                let _ = write!(out, ",{p}");
            }),
            None => (0..k).for_each(|_| out.push_str(",NA")),
        }
        out.push('\n');
    }
    out
}

pub fn posterior_from_csv(text: &str) -> Result<Vec<Option<Vec<f64>>>> {
    let mut lines = content_lines(text);
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyDataset("posterior file is empty".into()))?;
    let k = header.split(',').count() - 1;
    if k == 0 {
        return Err(parse_err(1, "header must be t,p1..pK"));
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').skip(1).collect();
        if fields.len() != k {
            return Err(parse_err(n, format!("expected {k} probabilities, found {}", fields.len())));
        }
        let vals = fields
            .iter()
            .map(|f| field::<f64>(f, n, "probability"))
            .collect::<Result<Vec<_>>>()?;
        match (vals.iter().all(Option::is_none), vals.iter().all(Option::is_some)) {
            (true, _) => out.push(None),
            (_, true) => out.push(Some(vals.into_iter().flatten().collect())),
            _ => return Err(parse_err(n, "row mixes NA and values")),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("posterior file has no rows".into()));
    }
    Ok(out)
}

/// Planted structure of a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Last step of each partition but the final one (1-based).
    pub change_points: Vec<usize>,
    /// 1-based true labels.
    pub labels: Vec<usize>,
    pub partition_probs: Vec<Vec<f64>>,
    /// True where the step is masked.
    pub missing: Vec<bool>,
}

/// A fitted model with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: MixtureParams,
    pub config: FitConfig,
    pub q_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let c: Self = read_json(path)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.params.validate()?;
        Ok(c)
    }
}

/// Run-length posterior as a dense `T x (T + 1)` table `t,r0..rT`; entries with
/// `r > t` are zero.
pub fn runlength_posterior_to_csv(report: &CpReport) -> String {
    let t_max = report.posterior.len();
    let mut out = String::from("t");
    for r in 0..=t_max {
        let _ = write!(out, ",r{r}");
    }
    out.push('\n');
    for (i, row) in report.posterior.iter().enumerate() {
        let _ = write!(out, "{}", i + 1);
        for r in 0..=t_max {
            let _ = write!(out, ",{}", row.get(r).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}

/// Reads a table written by [`runlength_posterior_to_csv`] back into ragged rows.
pub fn runlength_posterior_from_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    content_lines(text)
        .skip(1)
        .enumerate()
        .map(|(i, (n, line))| {
            line.split(',')
                .skip(1)
                .take(i + 2)
                .map(|f| field::<f64>(f, n, "probability")?.ok_or_else(|| parse_err(n, "NA in posterior")))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{peo_detect, DetectorConfig};
    use crate::simulate::{simulate, SimulationConfig};

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("ccpd-formats-{}-{:?}", std::process::id(), std::thread::current().id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_round_trips_bitwise() {
        let cfg = SimulationConfig {
            t: 30,
            missing_rate: 0.2,
            seed: 4,
            ..SimulationConfig::default()
        };
        let sim = simulate(&cfg).unwrap();
        let mut data = sim.data.clone();
        data[3].real_missing[5] = true;
        data[3].real_values[5] = 0.0;
        data[4].bin_missing[0] = true;
        data[4].bin_values[0] = 0;
        let file = DatasetFile::indexed(data);
        let back = DatasetFile::from_csv(&file.to_csv()).unwrap();
        assert_eq!(back, file);
        let path = tempdir().join("data.csv");
        file.write(&path).unwrap();
        assert_eq!(DatasetFile::read(&path).unwrap(), file);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let bad = "date,r1,b1\n2024-01-01,0.5,1\n2024-01-02,x,0\n";
        assert!(matches!(DatasetFile::from_csv(bad), Err(Error::Parse { line: 3, .. })));
        let short = "date,r1,b1\n2024-01-01,0.5\n";
        assert!(matches!(DatasetFile::from_csv(short), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(DatasetFile::from_csv(""), Err(Error::EmptyDataset(_))));
        assert!(matches!(DatasetFile::from_csv("date,r1,b1\n"), Err(Error::EmptyDataset(_))));
        assert!(DatasetFile::from_csv("date,r1,b1\nd,0.5,2\n").is_err());
    }

    #[test]
    fn labels_and_posteriors_round_trip() {
        let labels = vec![Some(0), None, Some(4), Some(2)];
        assert_eq!(labels_from_csv(&labels_to_csv(&labels)).unwrap(), labels);
        assert!(labels_from_csv("t,label\n1,0\n").is_err());
        let rows = vec![Some(vec![0.1, 0.9]), None, Some(vec![1.0 / 3.0, 2.0 / 3.0])];
        assert_eq!(posterior_from_csv(&posterior_to_csv(&rows, 2)).unwrap(), rows);
        assert!(posterior_from_csv("t,p1,p2\n1,0.5,NA\n").is_err());
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let sim = simulate(&SimulationConfig {
            t: 10,
            ..SimulationConfig::default()
        })
        .unwrap();
        let c = Checkpoint {
            version: CHECKPOINT_VERSION,
            params: sim.params,
            config: FitConfig::default(),
            q_trace: vec![-1_234.567_890_123_456_7, 0.1 + 0.2],
            diagnostics: FitDiagnostics {
                best_restart: 2,
                restart_loglik: vec![None, Some(-1.0), Some(0.1 + 0.2)],
                iterations: 3,
                converged: true,
                empty_class_events: vec![(1, 0)],
                line_search_failures: 0,
                rejected_step: false,
                reseeds: 0,
            },
        };
        let path = tempdir().join("model.json");
        write_json(&path, &c).unwrap();
        assert_eq!(Checkpoint::read(&path).unwrap(), c);
        let old = Checkpoint { version: 0, ..c };
        write_json(&path, &old).unwrap();
        assert!(Checkpoint::read(&path).is_err());
    }

    #[test]
    fn report_and_runlength_table_round_trip() {
        let labels: Vec<Option<usize>> = (0..40).map(|t| Some(usize::from(t >= 20))).collect();
        let rep = peo_detect(&labels, &[1.0, 1.0], &DetectorConfig::default()).unwrap();
        let table = runlength_posterior_to_csv(&rep);
        assert_eq!(table.lines().next().unwrap().split(',').count(), 42);
        assert_eq!(runlength_posterior_from_csv(&table).unwrap(), rep.posterior);
        let json = serde_json::to_string(&rep).unwrap();
        let back: CpReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.runlength_map, rep.runlength_map);
        assert_eq!(back.detected_cps, rep.detected_cps);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let path = tempdir().join("atomic.txt");
        write_atomic(&path, b"first version, longer").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        let leftovers = fs::read_dir(path.parent().unwrap())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }
}
