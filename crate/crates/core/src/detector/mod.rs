// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online run-length change-point detection over latent-class sequences.
//!
//! Time is 1-based: after `t` observations the run-length distribution has
//! support `0..=t`. A change mass at step `t` is evaluated with the predictive of
//! the run ending at `t - 1`, so the observation at a change step closes the old
//! run and the new run (`r_t = 0`) starts from the prior.

mod exact;
mod fpo;
mod peo;

pub use exact::{beta_quadrature, exact_hierarchical_marginal, ThetaGrid};
pub use fpo::{
    fpo_detect, fpo_predictive, gibbs_within_mh, FpoPriors, McmcConfig, McmcSamples, PartitionStats, EPS_SIMPLEX,
};
pub use peo::{peo_detect, peo_predictive, peo_step, PeoState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp};

/// Constant hazard with timescale `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazardConfig {
    pub tau: f64,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self { tau: 100.0 }
    }
}

impl HazardConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let cfg = Self { tau };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 1.0) {
            return Err(Error::invalid(format!("hazard timescale must be > 1; got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hazard {
    pub p_change: f64,
    pub p_grow: f64,
}

/// Transition probabilities out of run length `r_prev`; constant in `r_prev`.
pub fn hazard(_r_prev: usize, cfg: &HazardConfig) -> Hazard {
    let p_change = 1.0 / cfg.tau;
    Hazard {
        p_change,
        p_grow: 1.0 - p_change,
    }
}

/// Run-length options shared by both detectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hazard: HazardConfig,
    /// Drop run lengths whose posterior mass falls below this value.
    pub prune_below: Option<f64>,
}

impl DetectorConfig {
    pub fn with_tau(tau: f64) -> Result<Self> {
        Ok(Self {
            hazard: HazardConfig::new(tau)?,
            prune_below: None,
        })
    }
}

/// Run-length joint after `step` observations plus one statistic per run length.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLengthState<S> {
    pub step: usize,
    /// `ln p(r_t = r, observations_{1:t})` for `r = 0..=t`.
    pub log_joint: Vec<f64>,
    pub suffstats: Vec<S>,
}

impl<S> RunLengthState<S> {
    pub fn initial(prior: S) -> Self {
        Self {
            step: 0,
            log_joint: vec![0.0],
            suffstats: vec![prior],
        }
    }

    /// Normalized posterior `p(r_t | observations_{1:t})`.
    pub fn posterior(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.log_joint);
        self.log_joint.iter().map(|v| (v - lse).exp()).collect()
    }

    /// `ln p(observations_{1:t})`.
    pub fn log_evidence(&self) -> f64 {
        log_sum_exp(&self.log_joint)
    }
}

/// One step of the run-length recursion.
///
/// `log_pi[r]` is the log predictive of the new observation under run length `r`
/// of the previous state; `None` marks a missing observation (predictive 1).
pub(crate) fn propagate(prev: &[f64], log_pi: Option<&[f64]>, h: Hazard, step: usize) -> Result<Vec<f64>> {
    let ln_change = h.p_change.ln();
    let ln_grow = h.p_grow.ln();
    let mut next = Vec::with_capacity(prev.len() + 1);
    let weighted: Vec<f64> = match log_pi {
        Some(pi) => prev.iter().zip(pi).map(|(j, p)| j + p).collect(),
        None => prev.to_vec(),
    };
    next.push(log_sum_exp(&weighted) + ln_change);
    next.extend(weighted.iter().map(|w| w + ln_grow));
    if log_sum_exp(&next) == f64::NEG_INFINITY {
        return Err(Error::NumericalUnderflow { step });
    }
    Ok(next)
}

/// Sets run lengths with posterior mass below `threshold` to `-inf`. The MAP entry
/// is always kept.
pub(crate) fn prune(log_joint: &mut [f64], threshold: f64) {
    let lse = log_sum_exp(log_joint);
    let ln_thr = threshold.ln() + lse;
    let best = argmax(log_joint);
    for (r, v) in log_joint.iter_mut().enumerate() {
        if *v < ln_thr && Some(r) != best {
            *v = f64::NEG_INFINITY;
        }
    }
}

/// A change reported at `time`, estimated to have happened at `estimated_cp_time`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedCp {
    pub time: usize,
    pub estimated_cp_time: usize,
}

/// Output of a detector run. `runlength_map[t - 1]` and `posterior[t - 1]` belong
/// to step `t`; row `t - 1` has `t + 1` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpReport {
    pub runlength_map: Vec<usize>,
    #[serde(skip)]
    pub posterior: Vec<Vec<f64>>,
    pub detected_cps: Vec<DetectedCp>,
}

impl CpReport {
    pub fn from_posterior(posterior: Vec<Vec<f64>>) -> Self {
        let runlength_map: Vec<usize> = posterior
            .iter()
            .map(|row| argmax(row).expect("posterior rows are non-empty"))
            .collect();
        let detected_cps = detect_change_points(&runlength_map);
        Self {
            runlength_map,
            posterior,
            detected_cps,
        }
    }

    pub fn len(&self) -> usize {
        self.runlength_map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runlength_map.is_empty()
    }
}

/// Drops whose estimated change time lies within this many steps of an already
/// reported change are treated as the same change.
pub const DUPLICATE_WINDOW: usize = 10;

/// Applies the drop rule `r*_t < r*_{t-1} - max(5, r*_{t-1} / 2)` to a MAP trace and
/// estimates each change as `t - r*_t`. A drop that re-identifies an already
/// reported change (see [`DUPLICATE_WINDOW`]) is not reported again.
pub fn detect_change_points(runlength_map: &[usize]) -> Vec<DetectedCp> {
    let mut out: Vec<DetectedCp> = Vec::new();
    for i in 1..runlength_map.len() {
        let prev = runlength_map[i - 1] as f64;
        let cur = runlength_map[i] as f64;
        if cur < prev - (0.5 * prev).max(5.0) {
            let t = i + 1;
            let estimated_cp_time = t.saturating_sub(runlength_map[i]);
            if out
                .iter()
                .any(|cp| cp.estimated_cp_time.abs_diff(estimated_cp_time) <= DUPLICATE_WINDOW)
            {
                continue;
            }
            out.push(DetectedCp { time: t, estimated_cp_time });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazard_is_constant() {
        let h = hazard(0, &HazardConfig::new(100.0).unwrap());
        assert_eq!((h.p_change, h.p_grow), (0.01, 0.99));
        let h2 = hazard(7, &HazardConfig::new(2.0).unwrap());
        assert_eq!((h2.p_change, h2.p_grow), (0.5, 0.5));
        let cfg = HazardConfig::new(37.0).unwrap();
        for r in [0, 1, 5, 99, 12_345] {
            let h = hazard(r, &cfg);
            assert_eq!(h, hazard(0, &cfg));
            assert!((h.p_change + h.p_grow - 1.0).abs() < 1e-15);
        }
        assert!(HazardConfig::new(1.0).is_err());
    }

    #[test]
    fn drop_rule() {
        // Linear growth, then a reset to 2 at step 41: 2 < 40 - 20.
        let mut trace: Vec<usize> = (1..=40).collect();
        trace.extend([2, 3, 4]);
        let cps = detect_change_points(&trace);
        assert_eq!(cps, vec![DetectedCp { time: 41, estimated_cp_time: 39 }]);
        // Small jitter is ignored.
        assert!(detect_change_points(&[5, 6, 7, 3, 4]).is_empty());
        let grow = |tail: usize| (1..=21).chain([tail]).collect::<Vec<usize>>();
        assert!(detect_change_points(&grow(11)).is_empty());
        assert_eq!(detect_change_points(&grow(10)), vec![DetectedCp { time: 22, estimated_cp_time: 12 }]);
    }

    #[test]
    fn repeated_drops_to_the_same_change_are_reported_once() {
        // Jitter back to the long run and a second drop onto the same start.
        let mut trace: Vec<usize> = (1..=40).collect();
        trace.extend([1, 2, 43, 44, 45, 4, 5]);
        let cps = detect_change_points(&trace);
        assert_eq!(cps, vec![DetectedCp { time: 41, estimated_cp_time: 40 }]);
        // A later drop onto a distinct start is still reported.
        trace.extend((6..=60).chain([3]));
        let cps = detect_change_points(&trace);
        assert_eq!(cps.len(), 2);
        assert_eq!(cps[1].estimated_cp_time, trace.len() - 3);
    }

    #[test]
    fn missing_step_is_pure_hazard_transition() {
        let prev = [-1.0, -2.0, -0.5];
        let h = hazard(0, &HazardConfig::new(10.0).unwrap());
        let next = propagate(&prev, None, h, 3).unwrap();
        let p: Vec<f64> = prev.iter().map(|v: &f64| v.exp()).collect();
        let total: f64 = p.iter().sum();
        assert!((next[0].exp() - 0.1 * total).abs() < 1e-12);
        for r in 0..3 {
            assert!((next[r + 1].exp() - 0.9 * p[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn pruning_keeps_the_map_entry() {
        let mut lj = vec![-50.0, 0.0, -1.0];
        prune(&mut lj, 1e-12);
        assert_eq!(lj[0], f64::NEG_INFINITY);
        assert_eq!(lj[1], 0.0);
        let mut one = vec![-1e3];
        prune(&mut one, 0.5);
        assert_eq!(one, vec![-1e3]);
    }
}
