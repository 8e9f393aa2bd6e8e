// SPDX-License-Identifier: MIT OR Apache-2.0

//! Point-estimate observations: MAP labels with a Dirichlet-Categorical model.

use super::{hazard, propagate, prune, CpReport, DetectorConfig, HazardConfig, RunLengthState};
use crate::error::{Error, Result};

/// Run-length state whose statistics are Dirichlet counts.
pub type PeoState = RunLengthState<Vec<f64>>;

/// Posterior predictive `gamma_z / sum(gamma)` of label `z` (0-based).
pub fn peo_predictive(gamma: &[f64], z: usize) -> f64 {
    gamma[z] / gamma.iter().sum::<f64>()
}

fn check_prior(prior_gamma: &[f64]) -> Result<()> {
    if prior_gamma.is_empty() || prior_gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::invalid("prior Dirichlet counts must be positive"));
    }
    Ok(())
}

/// Advances the state by one label; `None` is a missing observation.
pub fn peo_step(state: &PeoState, z: Option<usize>, cfg: &HazardConfig, prior_gamma: &[f64]) -> Result<PeoState> {
    check_prior(prior_gamma)?;
    let k = prior_gamma.len();
    if let Some(z) = z {
        if z >= k {
            return Err(Error::invalid(format!("label {} out of range for K={k}", z + 1)));
        }
    }
    let step = state.step + 1;
    let h = hazard(state.step, cfg);
    let log_pi: Option<Vec<f64>> =
        z.map(|z| state.suffstats.iter().map(|g| peo_predictive(g, z).ln()).collect());
    let log_joint = propagate(&state.log_joint, log_pi.as_deref(), h, step)?;

    let mut suffstats = Vec::with_capacity(state.suffstats.len() + 1);
    suffstats.push(prior_gamma.to_vec());
    for g in &state.suffstats {
        let mut g = g.clone();
        if let Some(z) = z {
            g[z] += 1.0;
        }
        suffstats.push(g);
    }
    Ok(PeoState {
        step,
        log_joint,
        suffstats,
    })
}

/// Runs the recursion over a label sequence (0-based labels, `None` = missing).
pub fn peo_detect(labels: &[Option<usize>], prior_gamma: &[f64], cfg: &DetectorConfig) -> Result<CpReport> {
    Ok(CpReport::from_posterior(peo_run(labels, prior_gamma, cfg)?.0))
}

/// Posterior rows plus the final state.
pub(crate) fn peo_run(
    labels: &[Option<usize>],
    prior_gamma: &[f64],
    cfg: &DetectorConfig,
) -> Result<(Vec<Vec<f64>>, PeoState)> {
    cfg.hazard.validate()?;
    check_prior(prior_gamma)?;
    let mut state = PeoState::initial(prior_gamma.to_vec());
    let mut rows = Vec::with_capacity(labels.len());
    for &z in labels {
        state = peo_step(&state, z, &cfg.hazard, prior_gamma)?;
        if let Some(thr) = cfg.prune_below {
            prune(&mut state.log_joint, thr);
        }
        rows.push(state.posterior());
    }
    Ok((rows, state))
}
