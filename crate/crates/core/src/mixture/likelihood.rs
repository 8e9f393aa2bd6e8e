// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::{DMatrix, DVector};

use super::{HeteroObservation, MixtureParams};
use crate::error::{Error, Result};
use crate::kernel::{build_covariance, CovMatrix};

/// Gaussian quantities for one observation under one class covariance.
#[derive(Clone, Debug)]
pub struct GaussianBlocks {
    /// `log N(x^o | 0, Sigma^oo)`; zero when nothing is observed.
    pub loglik: f64,
    pub missing_idx: Vec<usize>,
    /// `E[x^m | x^o] = Sigma^mo (Sigma^oo)^-1 x^o`.
    pub cond_mean: DVector<f64>,
    /// `Cov[x^m | x^o] = Sigma^mm - Sigma^mo (Sigma^oo)^-1 Sigma^om`.
    pub cond_cov: DMatrix<f64>,
}

fn check_dim(obs: &HeteroObservation, cov: &CovMatrix) -> Result<()> {
    if obs.dim() != cov.dim() {
        return Err(Error::invalid(format!(
            "observation has D={} but covariance is {}x{}",
            obs.dim(),
            cov.dim(),
            cov.dim()
        )));
    }
    Ok(())
}

fn observed_block(cov: &CovMatrix, observed: &[usize]) -> Result<CovMatrix> {
    let sub = cov.values().select_rows(observed).select_columns(observed);
    CovMatrix::from_matrix(sub).map_err(|e| match e {
        Error::NotPositiveDefinite { context } => Error::NotPositiveDefinite {
            context: format!("observed block of size {}: {context}", observed.len()),
        },
        other => other,
    })
}

/// `log N(x^{real,o} | 0, Sigma^oo)` against a prebuilt class covariance.
///
/// A fully observed vector reuses the cached factor of `cov`; otherwise the
/// observed block is extracted and factorized.
pub fn gaussian_marginal_loglik_with(obs: &HeteroObservation, cov: &CovMatrix) -> Result<f64> {
    check_dim(obs, cov)?;
    let observed = obs.observed_real();
    if observed.is_empty() {
        return Ok(0.0);
    }
    if observed.len() == obs.dim() {
        return Ok(cov.gaussian_ln_pdf(&DVector::from_column_slice(&obs.real_values)));
    }
    let block = observed_block(cov, &observed)?;
    let x_o = DVector::from_iterator(observed.len(), observed.iter().map(|&j| obs.real_values[j]));
    Ok(block.gaussian_ln_pdf(&x_o))
}

/// Marginal Gaussian log-likelihood of the observed real entries under class `k`.
pub fn gaussian_marginal_loglik(obs: &HeteroObservation, k: usize, params: &MixtureParams) -> Result<f64> {
    let hp = params
        .kernel_hp
        .get(k)
        .ok_or_else(|| Error::invalid(format!("class index {k} out of range")))?;
    let cov = build_covariance(hp, &params.noise)?;
    gaussian_marginal_loglik_with(obs, &cov)
}

/// Marginal log-likelihood plus the conditional moments of the missing entries.
pub fn gaussian_blocks(obs: &HeteroObservation, cov: &CovMatrix) -> Result<GaussianBlocks> {
    check_dim(obs, cov)?;
    let observed = obs.observed_real();
    let missing = obs.missing_real();
    if missing.is_empty() {
        return Ok(GaussianBlocks {
            loglik: gaussian_marginal_loglik_with(obs, cov)?,
            missing_idx: missing,
            cond_mean: DVector::zeros(0),
            cond_cov: DMatrix::zeros(0, 0),
        });
    }
    let sigma_mm = cov.values().select_rows(&missing).select_columns(&missing);
    if observed.is_empty() {
        return Ok(GaussianBlocks {
            loglik: 0.0,
            cond_mean: DVector::zeros(missing.len()),
            cond_cov: sigma_mm,
            missing_idx: missing,
        });
    }
    let block = observed_block(cov, &observed)?;
    let x_o = DVector::from_iterator(observed.len(), observed.iter().map(|&j| obs.real_values[j]));
    let sigma_om = cov.values().select_rows(&observed).select_columns(&missing);
    let alpha = block.solve(&x_o);
    let cond_mean = sigma_om.transpose() * &alpha;
    let solved = block.cholesky().solve(&sigma_om);
    let mut cond_cov = sigma_mm - sigma_om.transpose() * solved;
    // Symmetrize away round-off.
    let sym = (&cond_cov + cond_cov.transpose()) * 0.5;
    cond_cov = sym;
    Ok(GaussianBlocks {
        loglik: block.gaussian_ln_pdf(&x_o),
        missing_idx: missing,
        cond_mean,
        cond_cov,
    })
}

/// Sum over observed binary entries of `x ln mu + (1 - x) ln(1 - mu)`.
pub fn bernoulli_loglik(obs: &HeteroObservation, k: usize, params: &MixtureParams) -> Result<f64> {
    let mu = params
        .bern_means
        .get(k)
        .ok_or_else(|| Error::invalid(format!("class index {k} out of range")))?;
    if mu.len() != obs.dim() {
        return Err(Error::invalid("Bernoulli means and observation disagree on D"));
    }
    Ok(bernoulli_loglik_with(obs, mu))
}

pub(crate) fn bernoulli_loglik_with(obs: &HeteroObservation, mu: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&x, &missing), &m) in obs.bin_values.iter().zip(&obs.bin_missing).zip(mu) {
        if missing {
            continue;
        }
        let m = super::clamp_prob(m);
        acc += if x == 1 { m.ln() } else { (1.0 - m).ln() };
    }
    acc
}
