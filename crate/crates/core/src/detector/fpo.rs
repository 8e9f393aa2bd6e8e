// SPDX-License-Identifier: MIT OR Apache-2.0

//! Full-posterior observations: probability vectors `z~_t` modelled as
//! `Dir(eta * lambda)` draws with `eta ~ Ga(kappa, nu)` (shape, rate) and
//! `lambda ~ Dir(beta)`.
//!
//! A run is summarized by its length `n` and the per-class sums `S_k = sum ln z~_k`,
//! which is all the Dirichlet likelihood needs:
//!
//! ```text
//! ln p(run | eta, lambda) = n [ln G(eta) - sum_k ln G(eta lambda_k)] + sum_k (eta lambda_k - 1) S_k
//! ```
//!
//! The posterior over `(eta, lambda)` is explored with Gibbs-within-MH: `eta` by a
//! gamma random walk `eta' ~ Ga(c, c / eta)` (mean `eta`), `lambda` by a Gaussian
//! random walk in centred log-ratio coordinates, whose Jacobian contributes
//! `prod_k lambda_k`. Both step sizes adapt toward 0.3 acceptance during burn-in and
//! are frozen afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{hazard, propagate, prune, CpReport, DetectorConfig, RunLengthState};
use crate::error::{Error, Result};
use crate::math::{dirichlet_ln_pdf_from_logs, ln_gamma, log_sum_exp};

/// Interior clamp applied to observed probability vectors.
pub const EPS_SIMPLEX: f64 = 1e-8;

const TARGET_ACCEPT: f64 = 0.3;
const STUCK_RATE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpoPriors {
    pub kappa: f64,
    pub nu: f64,
    /// Dirichlet parameter of `lambda`, on the simplex.
    pub beta: Vec<f64>,
}

impl FpoPriors {
    /// `kappa = nu = 1`, `beta = 1/K`.
    pub fn uniform(k: usize) -> Self {
        Self {
            kappa: 1.0,
            nu: 1.0,
            beta: vec![1.0 / k as f64; k],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite() && self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::invalid("kappa and nu must be positive"));
        }
        if self.beta.len() < 2 || self.beta.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("beta needs K >= 2 positive entries"));
        }
        let total: f64 = self.beta.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("beta must lie on the simplex; sums to {total}")));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.beta.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Post-burn-in samples `S`.
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            burn_in: 200,
            seed: 0,
        }
    }
}

/// Length and per-class log sums of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionStats {
    pub n: usize,
    pub sum_ln: Vec<f64>,
}

impl PartitionStats {
    pub fn empty(k: usize) -> Self {
        Self {
            n: 0,
            sum_ln: vec![0.0; k],
        }
    }

    pub fn from_vectors(partition: &[Vec<f64>], k: usize) -> Result<Self> {
        let mut stats = Self::empty(k);
        for z in partition {
            for (acc, lz) in stats.sum_ln.iter_mut().zip(clamped_logs(z, k)?) {
                *acc += lz;
            }
            stats.n += 1;
        }
        Ok(stats)
    }

    fn loglik(&self, eta: f64, ln_lambda: &[f64]) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let mut out = self.n as f64 * ln_gamma(eta);
        for (s, ll) in self.sum_ln.iter().zip(ln_lambda) {
            let a = eta * ll.exp();
            out += (a - 1.0) * s - self.n as f64 * ln_gamma(a);
        }
        if out.is_nan() {
            f64::NEG_INFINITY
        } else {
            out
        }
    }
}

/// Validates a probability vector, clamps it into the interior and returns its logs.
fn clamped_logs(z: &[f64], k: usize) -> Result<Vec<f64>> {
    if z.len() != k {
        return Err(Error::invalid(format!("probability vector has length {} not {k}", z.len())));
    }
    if z.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("probability vector has negative or non-finite entries"));
    }
    let total: f64 = z.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probability vector sums to {total}")));
    }
    let clamped: Vec<f64> = z.iter().map(|v| v.max(EPS_SIMPLEX)).collect();
    let norm: f64 = clamped.iter().sum();
    Ok(clamped.iter().map(|v| (v / norm).ln()).collect())
}

/// Post-burn-in draws of `(eta, lambda)` with block acceptance rates.
#[derive(Clone, Debug, PartialEq)]
pub struct McmcSamples {
    pub eta: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub accept_eta: f64,
    pub accept_lambda: f64,
}

/// Samples the run posterior of `(eta, lambda)` given its observed vectors.
pub fn gibbs_within_mh(
    partition: &[Vec<f64>],
    priors: &FpoPriors,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
) -> Result<McmcSamples> {
    priors.validate()?;
    let stats = PartitionStats::from_vectors(partition, priors.n_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = McmcSamples {
        eta: Vec::with_capacity(n_samples),
        lambda: Vec::with_capacity(n_samples),
        accept_eta: 0.0,
        accept_lambda: 0.0,
    };
    run_chain(&stats, priors, n_samples, burn_in, &mut rng, |eta, ln_lambda| {
        out.eta.push(eta);
        out.lambda.push(ln_lambda.iter().map(|v| v.exp()).collect());
    })
    .map(|(ae, al)| {
        out.accept_eta = ae;
        out.accept_lambda = al;
        out
    })
}

fn softmax_logs(y: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(y);
    y.iter().map(|v| v - lse).collect()
}

fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Starting point: `lambda` from the normalized geometric mean of the run and the
/// best `eta` on a coarse log grid; the prior mean for an empty run.
fn initial_state(stats: &PartitionStats, priors: &FpoPriors) -> (f64, Vec<f64>) {
    if stats.n == 0 {
        return (priors.kappa / priors.nu, priors.beta.iter().map(|b| b.ln()).collect());
    }
    let mean_ln: Vec<f64> = stats.sum_ln.iter().map(|s| s / stats.n as f64).collect();
    let ln_lambda = softmax_logs(&mean_ln);
    let eta = (0..=60)
        .map(|i| 10f64.powf(-2.0 + 7.0 * i as f64 / 60.0))
        .max_by(|a, b| stats.loglik(*a, &ln_lambda).total_cmp(&stats.loglik(*b, &ln_lambda)))
        .expect("grid is non-empty");
    (eta, ln_lambda)
}

/// Runs one chain, passing every post-burn-in state `(eta, ln lambda)` to `visit`.
/// Returns the post-burn-in acceptance rates of the two blocks.
fn run_chain(
    stats: &PartitionStats,
    priors: &FpoPriors,
    n_samples: usize,
    burn_in: usize,
    rng: &mut ChaCha8Rng,
    mut visit: impl FnMut(f64, &[f64]),
) -> Result<(f64, f64)> {
    let k = priors.n_classes();
    let (mut eta, mut ln_lambda) = initial_state(stats, priors);
    let mut ll = stats.loglik(eta, &ln_lambda);
    let lambda_target = |ln_l: &[f64], ll: f64| -> f64 {
        ll + priors.beta.iter().zip(ln_l).map(|(b, l)| b * l).sum::<f64>()
    };

    let mut ln_shape = 10f64.ln();
    let mut ln_scale = (0.5 / (k as f64).sqrt()).ln();
    let (mut acc_eta, mut acc_lambda) = (0usize, 0usize);

    for it in 0..burn_in + n_samples {
        // eta | lambda
        let c = ln_shape.exp();
        let proposal = Gamma::new(c, eta / c).map_err(|e| Error::invalid(e.to_string()))?.sample(rng);
        let mut accepted = false;
        if proposal > 0.0 && proposal.is_finite() {
            let ll_new = stats.loglik(proposal, &ln_lambda);
            let log_alpha = ll_new - ll
                + ln_gamma_density(proposal, priors.kappa, priors.nu)
                - ln_gamma_density(eta, priors.kappa, priors.nu)
                + ln_gamma_density(eta, c, c / proposal)
                - ln_gamma_density(proposal, c, c / eta);
            if log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha {
                eta = proposal;
                ll = ll_new;
                accepted = true;
            }
        }

        // lambda | eta
        let s = ln_scale.exp();
        let y: Vec<f64> = ln_lambda.iter().map(|l| l + s * rng.sample::<f64, _>(StandardNormal)).collect();
        let ln_new = softmax_logs(&y);
        let ll_new = stats.loglik(eta, &ln_new);
        let log_alpha = lambda_target(&ln_new, ll_new) - lambda_target(&ln_lambda, ll);
        let accepted_l = log_alpha >= 0.0 || rng.random::<f64>().ln() < log_alpha;
        if accepted_l {
            ln_lambda = ln_new;
            ll = ll_new;
        }

        if it < burn_in {
            let gain = 1.0 / ((it + 1) as f64).sqrt();
            ln_shape = (ln_shape + gain * (TARGET_ACCEPT - f64::from(u8::from(accepted)))).clamp(-1.0, 14.0);
            ln_scale = (ln_scale + gain * (f64::from(u8::from(accepted_l)) - TARGET_ACCEPT)).clamp(-12.0, 2.0);
        } else {
            acc_eta += usize::from(accepted);
            acc_lambda += usize::from(accepted_l);
            visit(eta, &ln_lambda);
        }
    }

    let n = n_samples.max(1) as f64;
    let (rate_eta, rate_lambda) = (acc_eta as f64 / n, acc_lambda as f64 / n);
    if n_samples >= 100 {
        if rate_eta < STUCK_RATE {
            return Err(Error::SamplerStuck {
                block: "eta",
                rate: rate_eta,
            });
        }
        if rate_lambda < STUCK_RATE {
            return Err(Error::SamplerStuck {
                block: "lambda",
                rate: rate_lambda,
            });
        }
    }
    Ok((rate_eta, rate_lambda))
}

/// `ln pi = ln mean_s Dir(z_new | eta_s lambda_s)`.
fn ln_predictive(
    stats: &PartitionStats,
    ln_z_new: &[f64],
    priors: &FpoPriors,
    mcmc: &McmcConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if mcmc.samples == 0 {
        return Err(Error::invalid("sample budget must be >= 1"));
    }
    let mut terms = Vec::with_capacity(mcmc.samples);
    run_chain(stats, priors, mcmc.samples, mcmc.burn_in, rng, |eta, ln_lambda| {
        let alpha: Vec<f64> = ln_lambda.iter().map(|l| eta * l.exp()).collect();
        terms.push(dirichlet_ln_pdf_from_logs(&alpha, ln_z_new));
    })?;
    Ok(log_sum_exp(&terms) - (terms.len() as f64).ln())
}

/// Monte Carlo estimate of the predictive density of `z_new` under the run
/// posterior of `partition`.
pub fn fpo_predictive(partition: &[Vec<f64>], z_new: &[f64], priors: &FpoPriors, mcmc: &McmcConfig) -> Result<f64> {
    priors.validate()?;
    let k = priors.n_classes();
    let stats = PartitionStats::from_vectors(partition, k)?;
    let ln_z = clamped_logs(z_new, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
    Ok(ln_predictive(&stats, &ln_z, priors, mcmc, &mut rng)?.exp())
}

/// Run-length recursion over probability vectors (`None` = missing).
pub fn fpo_detect(
    observations: &[Option<Vec<f64>>],
    priors: &FpoPriors,
    cfg: &DetectorConfig,
    mcmc: &McmcConfig,
) -> Result<CpReport> {
    priors.validate()?;
    cfg.hazard.validate()?;
    let k = priors.n_classes();
    let logs: Vec<Option<Vec<f64>>> = observations
        .iter()
        .map(|o| o.as_ref().map(|z| clamped_logs(z, k)).transpose())
        .collect::<Result<_>>()?;

    // Prefix sums over observed steps: cum_n[t], cum_ln[t] cover steps 1..=t.
    let t_len = logs.len();
    let mut cum_n = vec![0usize; t_len + 1];
    let mut cum_ln = vec![vec![0.0; k]; t_len + 1];
    for (i, o) in logs.iter().enumerate() {
        cum_n[i + 1] = cum_n[i] + usize::from(o.is_some());
        cum_ln[i + 1] = cum_ln[i].clone();
        if let Some(lz) = o {
            for (acc, v) in cum_ln[i + 1].iter_mut().zip(lz) {
                *acc += v;
            }
        }
    }
    let run_stats = |end: usize, r: usize| PartitionStats {
        n: cum_n[end] - cum_n[end - r],
        sum_ln: cum_ln[end].iter().zip(&cum_ln[end - r]).map(|(a, b)| a - b).collect(),
    };

    let mut state: RunLengthState<()> = RunLengthState::initial(());
    let mut rows = Vec::with_capacity(t_len);
    for (i, o) in logs.iter().enumerate() {
        let t = i + 1;
        let h = hazard(state.step, &cfg.hazard);
        let log_pi = match o {
            None => None,
            Some(ln_z) => Some(
                (0..state.log_joint.len())
                    .into_par_iter()
                    .map(|r| {
                        if state.log_joint[r] == f64::NEG_INFINITY {
                            return Ok(0.0);
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(mcmc.seed);
                        rng.set_stream(((t as u64) << 32) | r as u64);
                        ln_predictive(&run_stats(t - 1, r), ln_z, priors, mcmc, &mut rng)
                    })
                    .collect::<Result<Vec<f64>>>()?,
            ),
        };
        let mut log_joint = propagate(&state.log_joint, log_pi.as_deref(), h, t)?;
        if let Some(thr) = cfg.prune_below {
            prune(&mut log_joint, thr);
        }
        state = RunLengthState {
            step: t,
            suffstats: vec![(); log_joint.len()],
            log_joint,
        };
        rows.push(state.posterior());
    }
    Ok(CpReport::from_posterior(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::sample_dirichlet;

    fn dirichlet_draws(rng: &mut impl Rng, alpha: &[f64], n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| sample_dirichlet(rng, alpha)).collect()
    }

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    /// Standard error of a chain mean, using batch means to account for autocorrelation.
    fn batch_se(v: &[f64]) -> f64 {
        let b = 50;
        let size = v.len() / b;
        let means: Vec<f64> = (0..b).map(|i| v[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
        (mean_var(&means).1 / b as f64).sqrt()
    }

    #[test]
    fn empty_run_recovers_prior_moments() {
        let priors = FpoPriors {
            kappa: 3.0,
            nu: 2.0,
            beta: vec![0.5, 0.3, 0.2],
        };
        let s = gibbs_within_mh(&[], &priors, 100_000, 1_000, 7).unwrap();
        let (m, _) = mean_var(&s.eta);
        assert!((m - 1.5).abs() < 3.0 * batch_se(&s.eta), "eta mean {m}");
        for k in 0..3 {
            let col: Vec<f64> = s.lambda.iter().map(|l| l[k]).collect();
            let (m, _) = mean_var(&col);
            assert!((m - priors.beta[k]).abs() < 3.0 * batch_se(&col), "lambda_{k} mean {m}");
        }
    }

    #[test]
    fn acceptance_rates_are_tuned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, eta0) in [(3, 5.0), (20, 20.0), (80, 60.0)] {
            let part = dirichlet_draws(&mut rng, &[0.6 * eta0, 0.3 * eta0, 0.1 * eta0], n);
            let s = gibbs_within_mh(&part, &FpoPriors::uniform(3), 2_000, 200, 1).unwrap();
            for rate in [s.accept_eta, s.accept_lambda] {
                assert!(rate > 0.05 && rate < 0.95, "n={n}: rate {rate}");
            }
        }
    }

    #[test]
    fn long_runs_concentrate_near_the_generating_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let part = dirichlet_draws(&mut rng, &[12.0, 6.0, 2.0], 200);
        let s = gibbs_within_mh(&part, &FpoPriors::uniform(3), 2_000, 200, 2).unwrap();
        let (eta, _) = mean_var(&s.eta);
        assert!((eta - 20.0).abs() < 4.0, "eta {eta}");
        let l0 = s.lambda.iter().map(|l| l[0]).sum::<f64>() / s.lambda.len() as f64;
        assert!((l0 - 0.6).abs() < 0.03, "lambda_0 {l0}");
    }

    #[test]
    fn relabeling_permutes_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let part = dirichlet_draws(&mut rng, &[4.0, 2.0, 1.0], 10);
        let priors = FpoPriors {
            kappa: 1.0,
            nu: 1.0,
            beta: vec![0.2, 0.3, 0.5],
        };
        let perm = [2usize, 0, 1];
        let permuted_part: Vec<Vec<f64>> = part.iter().map(|z| perm.iter().map(|&i| z[i]).collect()).collect();
        let permuted_priors = FpoPriors {
            beta: perm.iter().map(|&i| priors.beta[i]).collect(),
            ..priors.clone()
        };
        let a = gibbs_within_mh(&part, &priors, 40_000, 500, 11).unwrap();
        let b = gibbs_within_mh(&permuted_part, &permuted_priors, 40_000, 500, 12).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            let ca: Vec<f64> = a.lambda.iter().map(|l| l[old]).collect();
            let cb: Vec<f64> = b.lambda.iter().map(|l| l[new]).collect();
            let se = (batch_se(&ca).powi(2) + batch_se(&cb).powi(2)).sqrt();
            assert!((mean_var(&ca).0 - mean_var(&cb).0).abs() < 4.0 * se);
        }
    }

    #[test]
    fn empty_partition_predictive_matches_prior_sampling() {
        let priors = FpoPriors {
            kappa: 4.0,
            nu: 1.0,
            beta: vec![0.3, 0.7],
        };
        let z = [0.35, 0.65];
        let mcmc = McmcConfig {
            samples: 100_000,
            burn_in: 500,
            seed: 3,
        };
        let est = fpo_predictive(&[], &z, &priors, &mcmc).unwrap();
        // Direct Monte Carlo: eta ~ Ga(4, 1), lambda ~ Beta(0.3, 0.7).
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = Gamma::new(4.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..200_000)
            .map(|_| {
                let eta = g.sample(&mut rng);
                let lam = sample_dirichlet(&mut rng, &priors.beta);
                let a: Vec<f64> = lam.iter().map(|l| eta * l).collect();
                crate::math::dirichlet_ln_pdf(&a, &z).exp()
            })
            .collect();
        let (m, v) = mean_var(&vals);
        let se = (v / vals.len() as f64).sqrt();
        assert!((est - m).abs() < 0.05 * m + 3.0 * se, "{est} vs {m}");
    }

    #[test]
    fn same_seed_same_estimate() {
        let part = vec![vec![0.7, 0.2, 0.1], vec![0.6, 0.3, 0.1]];
        let mcmc = McmcConfig::default();
        let priors = FpoPriors::uniform(3);
        let a = fpo_predictive(&part, &[0.5, 0.3, 0.2], &priors, &mcmc).unwrap();
        let b = fpo_predictive(&part, &[0.5, 0.3, 0.2], &priors, &mcmc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_vectors_are_clamped() {
        let part = vec![vec![1.0, 0.0, 0.0]];
        let p = fpo_predictive(&part, &[0.0, 1.0, 0.0], &FpoPriors::uniform(3), &McmcConfig::default()).unwrap();
        assert!(p.is_finite() && p > 0.0);
        assert!(fpo_predictive(&part, &[0.5, 0.6, 0.0], &FpoPriors::uniform(3), &McmcConfig::default()).is_err());
    }

    #[test]
    fn constant_sequence_never_detects() {
        let obs = vec![Some(vec![0.7, 0.2, 0.1]); 40];
        let mcmc = McmcConfig {
            samples: 200,
            burn_in: 100,
            seed: 1,
        };
        let rep = fpo_detect(&obs, &FpoPriors::uniform(3), &DetectorConfig::default(), &mcmc).unwrap();
        assert!(rep.detected_cps.is_empty());
        assert_eq!(rep.runlength_map, (1..=40).collect::<Vec<_>>());
        for row in &rep.posterior {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn detection_is_independent_of_thread_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut obs: Vec<Option<Vec<f64>>> = dirichlet_draws(&mut rng, &[8.0, 1.0, 1.0], 12).into_iter().map(Some).collect();
        obs[4] = None;
        let mcmc = McmcConfig {
            samples: 50,
            burn_in: 20,
            seed: 4,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fpo_detect(&obs, &FpoPriors::uniform(3), &DetectorConfig::default(), &mcmc).unwrap())
        };
        assert_eq!(run(1).posterior, run(4).posterior);
    }
    #[test]
    fn two_class_predictive_matches_quadrature() {
        let priors = FpoPriors {
            kappa: 2.0,
            nu: 0.5,
            beta: vec![0.5, 0.5],
        };
        let part = vec![vec![0.7, 0.3], vec![0.6, 0.4], vec![0.8, 0.2]];
        let z_new = [0.65, 0.35];
        let ln_beta_pdf = |x: f64, a: f64, b: f64| {
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
        };
        // Gauss-Jacobi nodes carry the Beta(beta) prior on lambda; the gamma prior on
        // eta is integrated by the trapezoid rule in ln eta.
        let lam = crate::detector::beta_quadrature(priors.beta[0], priors.beta[1], 80).unwrap();
        let (mut num, mut den) = (Vec::new(), Vec::new());
        let (lo, hi, m) = (-8.0f64, 8.0f64, 4_000);
        let du = (hi - lo) / m as f64;
        for i in 0..=m {
            let u = lo + i as f64 * du;
            let eta = u.exp();
            let trap: f64 = if i == 0 || i == m { 0.5 } else { 1.0 };
            let ln_prior_eta = ln_gamma_density(eta, priors.kappa, priors.nu) + u + trap.ln() + du.ln();
            for (&l, &w) in lam.0.iter().zip(&lam.1) {
                let (a, b) = (eta * l, eta * (1.0 - l));
                let ll: f64 = part.iter().map(|z| ln_beta_pdf(z[0], a, b)).sum();
                let base = ln_prior_eta + w.ln() + ll;
                den.push(base);
                num.push(base + ln_beta_pdf(z_new[0], a, b));
            }
        }
        let exact = (log_sum_exp(&num) - log_sum_exp(&den)).exp();
        let mcmc = McmcConfig {
            samples: 20_000,
            burn_in: 1_000,
            seed: 6,
        };
        let est = fpo_predictive(&part, &z_new, &priors, &mcmc).unwrap();
        assert!((est - exact).abs() < 0.05 * exact, "{est} vs {exact}");
    }

    #[test]
    fn map_trace_drops_after_each_change() {
        let sc = crate::simulate::soft_label_scenario(21, 10.0);
        let obs: Vec<Option<Vec<f64>>> = sc.probs.iter().cloned().map(Some).collect();
        let mcmc = McmcConfig {
            samples: 200,
            burn_in: 100,
            seed: 2,
        };
        let rep = fpo_detect(&obs, &FpoPriors::uniform(3), &DetectorConfig::default(), &mcmc).unwrap();
        for &cp in &sc.change_points {
            let window = &rep.runlength_map[cp..cp + 10];
            assert!(window.iter().any(|&r| r < 10), "no drop after {cp}: {window:?}");
        }
    }
}
