// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic label sequences with planted change points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelHyperparams, NoiseModel};
use crate::math::sample_dirichlet;
use crate::mixture::{clamp_prob, sample_synthetic, HeteroObservation, MixtureParams};

/// Settings of the partitioned synthetic benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub n_change_points: usize,
    /// Total Dirichlet concentration of the per-partition class distribution.
    pub alpha: f64,
    /// Fourier order of the generating kernels.
    pub order: usize,
    /// Fraction of whole days masked completely at random.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            t: 500,
            k: 5,
            d: 24,
            n_change_points: 4,
            alpha: 25.0,
            order: 2,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 || self.t == 0 {
            return Err(Error::invalid("T, K and D must be positive"));
        }
        if self.n_change_points >= self.t {
            return Err(Error::invalid("need fewer change points than time steps"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be positive"));
        }
        if self.order > self.d {
            return Err(Error::invalid("Fourier order exceeds D"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::invalid("missing rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A generated benchmark instance. Labels are 0-based; `change_points` holds the
/// 1-based last step of each partition but the final one, which is the time the
/// estimate `t - r*_t` targets.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub labels: Vec<usize>,
    pub change_points: Vec<usize>,
    pub partition_probs: Vec<Vec<f64>>,
    /// True where the day is masked.
    pub missing: Vec<bool>,
    pub params: MixtureParams,
    pub data: Vec<HeteroObservation>,
}

impl Simulation {
    /// Labels with masked days replaced by `None`.
    pub fn observed_labels(&self) -> Vec<Option<usize>> {
        self.labels
            .iter()
            .zip(&self.missing)
            .map(|(&z, &m)| (!m).then_some(z))
            .collect()
    }
}

/// Evenly spaced change points: partitions of equal length `t / (n + 1)`.
pub fn planted_change_points(t: usize, n: usize) -> Vec<usize> {
    (1..=n).map(|i| i * t / (n + 1)).collect()
}

/// Draws labels segment by segment from the given class distributions.
/// `change_points` are 1-based last steps of partitions 1, 2, ...
pub fn sample_partitioned_labels(
    rng: &mut impl Rng,
    t: usize,
    change_points: &[usize],
    partition_probs: &[Vec<f64>],
) -> Vec<usize> {
    assert_eq!(partition_probs.len(), change_points.len() + 1);
    (1..=t)
        .map(|step| {
            let seg = change_points.iter().filter(|&&cp| step > cp).count();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let probs = &partition_probs[seg];
            probs
                .iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(probs.len() - 1)
        })
        .collect()
}

/// Random generating model: Fourier coefficients `N(0,1)`, amplitude and
/// lengthscale `U(1,2)`, Bernoulli means `U(0,1)`, noise deviations `U(0.1,1)`.
pub fn random_mixture_params(rng: &mut impl Rng, k: usize, d: usize, order: usize) -> Result<MixtureParams> {
    let kernel_hp = (0..k)
        .map(|_| {
            KernelHyperparams::new(
                (0..=order).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                (0..order).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                rng.random_range(1.0..2.0),
                rng.random_range(1.0..2.0),
                d,
            )
        })
        .collect::<Result<_>>()?;
    Ok(MixtureParams {
        weights: vec![1.0 / k as f64; k],
        bern_means: (0..k)
            .map(|_| (0..d).map(|_| clamp_prob(rng.random::<f64>())).collect())
            .collect(),
        kernel_hp,
        noise: NoiseModel::new((0..d).map(|_| rng.random_range(0.1..1.0)).collect())?,
    })
}

/// Generates labels, masks and heterogeneous observations.
pub fn simulate(cfg: &SimulationConfig) -> Result<Simulation> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let change_points = planted_change_points(cfg.t, cfg.n_change_points);
    let conc = vec![cfg.alpha / cfg.k as f64; cfg.k];
    let partition_probs: Vec<Vec<f64>> = (0..=cfg.n_change_points)
        .map(|_| sample_dirichlet(&mut rng, &conc))
        .collect();
    let labels = sample_partitioned_labels(&mut rng, cfg.t, &change_points, &partition_probs);
    let missing: Vec<bool> = (0..cfg.t).map(|_| rng.random_bool(cfg.missing_rate)).collect();
    let params = random_mixture_params(&mut rng, cfg.k, cfg.d, cfg.order)?;
    let mut data = sample_synthetic(&params, &labels, rng.random())?;
    for (obs, &m) in data.iter_mut().zip(&missing) {
        if m {
            *obs = HeteroObservation::fully_missing(cfg.d);
        }
    }
    Ok(Simulation {
        labels,
        change_points,
        partition_probs,
        missing,
        params,
        data,
    })
}

/// Small three-class scenario with fixed partition distributions and noisy
/// probability-vector observations.
#[derive(Clone, Debug)]
pub struct SoftLabelScenario {
    pub labels: Vec<usize>,
    pub change_points: Vec<usize>,
    /// Observed class-probability vectors.
    pub probs: Vec<Vec<f64>>,
}

impl SoftLabelScenario {
    /// Argmax of each probability vector.
    pub fn map_labels(&self) -> Vec<usize> {
        self.probs
            .iter()
            .map(|p| crate::math::argmax(p).expect("non-empty"))
            .collect()
    }
}

/// `T = 100`, `K = 3`, changes after steps 25, 50 and 75 with dominant
/// classes 1, 2, 3, 1. Each partition has mean vector `lambda` with 0.8 on its
/// dominant class and 0.1 elsewhere; observations are `Dir(precision * lambda)`
/// and `labels` records the dominant class of the partition.
pub fn soft_label_scenario(seed: u64, precision: f64) -> SoftLabelScenario {
    let k = 3;
    let change_points = vec![25, 50, 75];
    let dominant = [0usize, 1, 2, 0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = Vec::with_capacity(100);
    let mut probs = Vec::with_capacity(100);
    for step in 1..=100 {
        let c = dominant[change_points.iter().filter(|&&cp| step > cp).count()];
        let alpha: Vec<f64> = (0..k).map(|j| precision * if j == c { 0.8 } else { 0.1 }).collect();
        labels.push(c);
        probs.push(sample_dirichlet(&mut rng, &alpha));
    }
    SoftLabelScenario {
        labels,
        change_points,
        probs,
    }
}
