// SPDX-License-Identifier: MIT OR Apache-2.0

//! Heterogeneous Gaussian-Bernoulli circadian mixture.
//!
//! One observation stacks a `D`-vector of real values (zero-mean Gaussian with
//! class covariance `K_k + diag(sigma^2)`) and a `D`-vector of independent
//! Bernoulli bits. Any entry may be missing; EM integrates missing entries out.

mod estep;
mod fit;
mod likelihood;
mod mstep;
mod optim;
mod sample;

pub use estep::{e_step, EStep, MissingStats};
pub use fit::{fit, FitConfig, FitDiagnostics, FitResult};
pub use likelihood::{
    bernoulli_loglik, gaussian_blocks, gaussian_marginal_loglik, gaussian_marginal_loglik_with,
    GaussianBlocks,
};
pub use mstep::{
    expected_complete_loglik, m_step_bernoulli, m_step_gaussian, q_gradient, BernoulliUpdate,
    GaussianUpdate, ParamLayout, SufficientStats,
};
pub use optim::{maximize_cg, CgOutcome};
pub use sample::sample_synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_covariance, CovMatrix, KernelHyperparams, NoiseModel};

/// Clamp applied to Bernoulli means.
pub const EPS_PROB: f64 = 1e-6;

/// One period (e.g. a day) of heterogeneous data.
///
/// Values at masked positions are ignored; the constructors store them as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroObservation {
    pub real_values: Vec<f64>,
    pub real_missing: Vec<bool>,
    pub bin_values: Vec<u8>,
    pub bin_missing: Vec<bool>,
}

impl HeteroObservation {
    pub fn new(
        mut real_values: Vec<f64>,
        real_missing: Vec<bool>,
        mut bin_values: Vec<u8>,
        bin_missing: Vec<bool>,
    ) -> Result<Self> {
        let d = real_values.len();
        if real_missing.len() != d || bin_values.len() != d || bin_missing.len() != d {
            return Err(Error::invalid(format!(
                "observation parts disagree on length: {}, {}, {}, {}",
                d,
                real_missing.len(),
                bin_values.len(),
                bin_missing.len()
            )));
        }
        for j in 0..d {
            if real_missing[j] {
                real_values[j] = 0.0;
            } else if !real_values[j].is_finite() {
                return Err(Error::invalid(format!("non-finite real value at hour {}", j + 1)));
            }
            if bin_missing[j] {
                bin_values[j] = 0;
            } else if bin_values[j] > 1 {
                return Err(Error::invalid(format!("binary value {} at hour {}", bin_values[j], j + 1)));
            }
        }
        Ok(Self {
            real_values,
            real_missing,
            bin_values,
            bin_missing,
        })
    }

    /// Fully observed observation.
    pub fn complete(real_values: Vec<f64>, bin_values: Vec<u8>) -> Result<Self> {
        let d = real_values.len();
        Self::new(real_values, vec![false; d], bin_values, vec![false; d])
    }

    /// All `2D` entries missing.
    pub fn fully_missing(d: usize) -> Self {
        Self {
            real_values: vec![0.0; d],
            real_missing: vec![true; d],
            bin_values: vec![0; d],
            bin_missing: vec![true; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.real_values.len()
    }

    pub fn is_fully_missing(&self) -> bool {
        self.real_missing.iter().chain(&self.bin_missing).all(|m| *m)
    }

    pub fn observed_real(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| !self.real_missing[j]).collect()
    }

    pub fn missing_real(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.real_missing[j]).collect()
    }
}

/// Mixture weights, Bernoulli means, per-class kernels and shared noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    /// `K x D` Bernoulli means.
    pub bern_means: Vec<Vec<f64>>,
    pub kernel_hp: Vec<KernelHyperparams>,
    pub noise: NoiseModel,
}

impl MixtureParams {
    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.noise.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_classes();
        if k == 0 {
            return Err(Error::invalid("mixture needs at least one class"));
        }
        if self.bern_means.len() != k || self.kernel_hp.len() != k {
            return Err(Error::invalid("mixture parameter blocks disagree on K"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be non-negative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        self.noise.validate()?;
        let d = self.dim();
        for (mu, hp) in self.bern_means.iter().zip(&self.kernel_hp) {
            if mu.len() != d || hp.period != d {
                return Err(Error::invalid("class parameters disagree on D"));
            }
            if mu.iter().any(|m| !(0.0..=1.0).contains(m)) {
                return Err(Error::invalid("Bernoulli means must lie in [0, 1]"));
            }
            hp.validate()?;
        }
        Ok(())
    }

    /// Class covariances `K_k + diag(sigma^2)`, built in parallel.
    pub fn covariances(&self) -> Result<Vec<CovMatrix>> {
        self.kernel_hp
            .par_iter()
            .map(|hp| build_covariance(hp, &self.noise))
            .collect()
    }

    /// Reorders classes so that new class `i` is old class `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            bern_means: perm.iter().map(|&i| self.bern_means[i].clone()).collect(),
            kernel_hp: perm.iter().map(|&i| self.kernel_hp[i].clone()).collect(),
            noise: self.noise.clone(),
        }
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS_PROB, 1.0 - EPS_PROB)
}

/// Posterior class probabilities `p(z_t | x_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    /// `T x K`, row-stochastic. Fully missing rows hold `1/K`.
    pub probs: Vec<Vec<f64>>,
    pub fully_missing: Vec<bool>,
}

impl LatentPosterior {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// MAP class per row, `None` for fully missing rows.
    pub fn map_labels(&self) -> Vec<Option<usize>> {
        self.probs
            .iter()
            .zip(&self.fully_missing)
            .map(|(row, &miss)| if miss { None } else { crate::math::argmax(row) })
            .collect()
    }

    /// Rows as detector input, `None` for fully missing rows.
    pub fn observations(&self) -> Vec<Option<Vec<f64>>> {
        self.probs
            .iter()
            .zip(&self.fully_missing)
            .map(|(row, &miss)| if miss { None } else { Some(row.clone()) })
            .collect()
    }
}
