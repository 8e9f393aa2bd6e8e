// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run configuration: defaults, overridden by a TOML file, overridden by flags.

use std::path::Path;

use anyhow::Context;
use circadian_cpd::detector::{DetectorConfig, FpoPriors, HazardConfig, McmcConfig};
use circadian_cpd::ingest::IngestConfig;
use circadian_cpd::mixture::FitConfig;
use circadian_cpd::simulate::SimulationConfig;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// MAP labels with a Dirichlet-Categorical model.
    #[default]
    Peo,
    /// Class-probability vectors with a Dirichlet model.
    Fpo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Partitioned labels and heterogeneous daily observations.
    #[default]
    Partitioned,
    /// Three classes, 100 steps, noisy class-probability vectors.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: Scenario,
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub n_change_points: usize,
    pub alpha: f64,
    /// Fourier order of the generating kernels.
    pub order: usize,
    pub missing_rate: f64,
    /// Dirichlet precision of the soft scenario's probability vectors.
    pub precision: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let s = SimulationConfig::default();
        Self {
            scenario: Scenario::default(),
            t: s.t,
            k: s.k,
            d: s.d,
            n_change_points: s.n_change_points,
            alpha: s.alpha,
            order: s.order,
            missing_rate: s.missing_rate,
            precision: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub k: usize,
    pub n_init: usize,
    pub max_em_iters: usize,
    pub epsilon_q: f64,
    pub max_m_evals: usize,
    /// Fourier order `C` of the fitted kernels.
    pub order: usize,
    pub freeze_kernels: bool,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            k: 5,
            n_init: f.n_init,
            max_em_iters: f.max_em_iters,
            epsilon_q: f.epsilon_q,
            max_m_evals: f.max_m_evals,
            order: f.order,
            freeze_kernels: f.freeze_kernels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectSection {
    pub mode: Mode,
    pub tau: f64,
    /// Number of classes; inferred from the input when absent.
    pub k: Option<usize>,
    /// Dirichlet counts of the label model; all ones when absent.
    pub prior_gamma: Option<Vec<f64>>,
    /// Gamma prior (shape, rate) of the Dirichlet precision.
    pub kappa: f64,
    pub nu: f64,
    pub samples: usize,
    pub burn_in: usize,
    pub prune_below: Option<f64>,
}

impl Default for DetectSection {
    fn default() -> Self {
        let m = McmcConfig::default();
        Self {
            mode: Mode::default(),
            tau: HazardConfig::default().tau,
            k: None,
            prior_gamma: None,
            kappa: 1.0,
            nu: 1.0,
            samples: m.samples,
            burn_in: m.burn_in,
            prune_below: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub simulate: SimulateSection,
    pub fit: FitSection,
    pub detect: DetectSection,
    pub ingest: IngestConfig,
}

/// Command-line overrides; `None` keeps the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub scenario: Option<Scenario>,
    pub k: Option<usize>,
    pub c: Option<usize>,
    pub tau: Option<f64>,
    pub alpha: Option<f64>,
    pub missing_rate: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub n_init: Option<usize>,
    pub epsilon_q: Option<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")).into())
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.mode {
            self.detect.mode = v;
        }
        if let Some(v) = o.scenario {
            self.simulate.scenario = v;
        }
        if let Some(v) = o.k {
            self.simulate.k = v;
            self.fit.k = v;
            self.detect.k = Some(v);
        }
        if let Some(v) = o.c {
            self.fit.order = v;
        }
        if let Some(v) = o.tau {
            self.detect.tau = v;
        }
        if let Some(v) = o.alpha {
            self.simulate.alpha = v;
        }
        if let Some(v) = o.missing_rate {
            self.simulate.missing_rate = v;
        }
        if let Some(v) = o.samples {
            self.detect.samples = v;
        }
        if let Some(v) = o.n_init {
            self.fit.n_init = v;
        }
        if let Some(v) = o.epsilon_q {
            self.fit.epsilon_q = v;
        }
    }

    pub fn simulation(&self) -> SimulationConfig {
        let s = &self.simulate;
        SimulationConfig {
            t: s.t,
            k: s.k,
            d: s.d,
            n_change_points: s.n_change_points,
            alpha: s.alpha,
            order: s.order,
            missing_rate: s.missing_rate,
            seed: self.seed,
        }
    }

    pub fn fit_config(&self) -> FitConfig {
        let f = &self.fit;
        FitConfig {
            n_init: f.n_init,
            max_em_iters: f.max_em_iters,
            epsilon_q: f.epsilon_q,
            max_m_evals: f.max_m_evals,
            order: f.order,
            seed: self.seed,
            freeze_kernels: f.freeze_kernels,
        }
    }

    pub fn detector(&self) -> anyhow::Result<DetectorConfig> {
        let hazard = HazardConfig::new(self.detect.tau).map_err(|e| UsageError(e.to_string()))?;
        Ok(DetectorConfig {
            hazard,
            prune_below: self.detect.prune_below,
        })
    }

    pub fn mcmc(&self) -> McmcConfig {
        McmcConfig {
            samples: self.detect.samples,
            burn_in: self.detect.burn_in,
            seed: self.seed,
        }
    }

    pub fn fpo_priors(&self, k: usize) -> FpoPriors {
        FpoPriors {
            kappa: self.detect.kappa,
            nu: self.detect.nu,
            beta: vec![1.0 / k as f64; k],
        }
    }
}
