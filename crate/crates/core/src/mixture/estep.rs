// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::likelihood::{bernoulli_loglik_with, gaussian_blocks};
use super::{HeteroObservation, LatentPosterior, MixtureParams};
use crate::error::{Error, Result};
use crate::kernel::CovMatrix;
use crate::math::log_sum_exp;

/// Conditional moments of the missing real entries of one observation under one class.
#[derive(Clone, Debug)]
pub struct MissingStats {
    pub missing_idx: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl MissingStats {
    /// Real vector with missing entries replaced by their conditional mean.
    pub fn filled(&self, obs: &HeteroObservation) -> DVector<f64> {
        let mut x = DVector::from_column_slice(&obs.real_values);
        for (r, &j) in self.missing_idx.iter().enumerate() {
            x[j] = self.mean[r];
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct EStep {
    pub posterior: LatentPosterior,
    /// `T x K`; rows of fully missing observations are empty.
    pub missing_stats: Vec<Vec<MissingStats>>,
    /// `ln pi_k + ln p(x_t | k)`; empty rows for fully missing observations.
    pub log_joint: Vec<Vec<f64>>,
    /// Observed-data log-likelihood `sum_t ln sum_k pi_k p(x^o_t | k)`.
    pub log_likelihood: f64,
}

/// Responsibilities and conditional expectations of missing entries.
pub fn e_step(data: &[HeteroObservation], params: &MixtureParams) -> Result<EStep> {
    params.validate()?;
    let covs = params.covariances()?;
    e_step_with(data, params, &covs)
}

type Row = (Vec<f64>, Vec<MissingStats>, Vec<f64>, f64);

pub(crate) fn e_step_with(
    data: &[HeteroObservation],
    params: &MixtureParams,
    covs: &[CovMatrix],
) -> Result<EStep> {
    let k = params.n_classes();
    let d = params.dim();
    if let Some(bad) = data.iter().position(|o| o.dim() != d) {
        return Err(Error::invalid(format!("observation {bad} has D={} but model has D={d}", data[bad].dim())));
    }
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();

    let rows: Vec<Option<Row>> = data
        .par_iter()
        .enumerate()
        .map(|(t, obs)| -> Result<Option<Row>> {
            if obs.is_fully_missing() {
                return Ok(None);
            }
            let mut joint = Vec::with_capacity(k);
            let mut stats = Vec::with_capacity(k);
            for c in 0..k {
                let blocks = gaussian_blocks(obs, &covs[c])?;
                let bern = bernoulli_loglik_with(obs, &params.bern_means[c]);
                joint.push(log_w[c] + blocks.loglik + bern);
                stats.push(MissingStats {
                    missing_idx: blocks.missing_idx,
                    mean: blocks.cond_mean,
                    cov: blocks.cond_cov,
                });
            }
            let lse = log_sum_exp(&joint);
            if !lse.is_finite() {
                return Err(Error::DegenerateResponsibility { index: t });
            }
            let probs = joint.iter().map(|v| (v - lse).exp()).collect();
            Ok(Some((probs, stats, joint, lse)))
        })
        .collect::<Result<_>>()?;

    let mut probs = Vec::with_capacity(data.len());
    let mut fully_missing = Vec::with_capacity(data.len());
    let mut missing_stats = Vec::with_capacity(data.len());
    let mut log_joint = Vec::with_capacity(data.len());
    let mut log_likelihood = 0.0;
    for row in rows {
        match row {
            Some((p, s, j, lse)) => {
                probs.push(p);
                fully_missing.push(false);
                missing_stats.push(s);
                log_joint.push(j);
                log_likelihood += lse;
            }
            None => {
                probs.push(vec![1.0 / k as f64; k]);
                fully_missing.push(true);
                missing_stats.push(Vec::new());
                log_joint.push(Vec::new());
            }
        }
    }
    Ok(EStep {
        posterior: LatentPosterior {
            probs,
            fully_missing,
        },
        missing_stats,
        log_joint,
        log_likelihood,
    })
}
