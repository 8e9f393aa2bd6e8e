// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estep::e_step;
use super::mstep::{m_step_bernoulli, m_step_gaussian, SufficientStats};
use super::{clamp_prob, HeteroObservation, LatentPosterior, MixtureParams};
use crate::error::{Error, Result};
use crate::kernel::{KernelHyperparams, NoiseModel};
use crate::math::sample_dirichlet;

/// EM settings. Defaults: five restarts, 200 iterations, tolerance 250, ten
/// objective evaluations per M-step, Fourier order 3.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub n_init: usize,
    pub max_em_iters: usize,
    pub epsilon_q: f64,
    pub max_m_evals: usize,
    pub order: usize,
    pub seed: u64,
    /// Skip the kernel/noise block and keep the initial hyperparameters.
    pub freeze_kernels: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_init: 5,
            max_em_iters: 200,
            epsilon_q: 250.0,
            max_m_evals: 10,
            order: 3,
            seed: 0,
            freeze_kernels: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Restart that produced the returned model.
    pub best_restart: usize,
    /// Final log-likelihood of each restart, `None` if it aborted.
    pub restart_loglik: Vec<Option<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// `(iteration, class)` pairs where a class collapsed below the empty threshold.
    pub empty_class_events: Vec<(usize, usize)>,
    pub line_search_failures: usize,
    /// Whether the run stopped because an EM step lowered the log-likelihood.
    #[serde(default)]
    pub rejected_step: bool,
    /// Collapsed classes reseeded by splitting the largest class, counting only
    /// reseeds that raised the final log-likelihood.
    #[serde(default)]
    pub reseeds: usize,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: MixtureParams,
    pub posterior: LatentPosterior,
    /// Observed-data log-likelihood at each E-step of the winning restart.
    pub q_trace: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl FitResult {
    pub fn final_loglik(&self) -> f64 {
        *self.q_trace.last().expect("q_trace has at least one entry")
    }
}

struct RunOutcome {
    params: MixtureParams,
    posterior: LatentPosterior,
    q_trace: Vec<f64>,
    converged: bool,
    empty_class_events: Vec<(usize, usize)>,
    line_search_failures: usize,
    rejected_step: bool,
    reseeds: usize,
}

impl RunOutcome {
    fn final_loglik(&self) -> f64 {
        self.q_trace.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Random starting point.
fn initial_params(rng: &mut impl Rng, k: usize, d: usize, order: usize) -> Result<MixtureParams> {
    let weights = sample_dirichlet(rng, &vec![50.0; k]);
    let bern_means = (0..k)
        .map(|_| (0..d).map(|_| clamp_prob(rng.random::<f64>())).collect())
        .collect();
    let kernel_hp = (0..k)
        .map(|_| {
            let a = (0..=order).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let b = (0..order).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            KernelHyperparams::new(a, b, rng.random_range(1.0..2.0), rng.random_range(1.0..2.0), d)
        })
        .collect::<Result<_>>()?;
    // Uniform(0,1) draws are floored so the noise stays strictly positive.
    let noise = NoiseModel::new((0..d).map(|_| rng.random::<f64>().max(1e-3)).collect())?;
    Ok(MixtureParams {
        weights,
        bern_means,
        kernel_hp,
        noise,
    })
}

/// A class whose weight falls below this fraction of `1/K` counts as collapsed.
const COLLAPSE_FRACTION: f64 = 0.1;
const SPLIT_ITERS: usize = 20;

/// Starting point that revives the lightest class when it has collapsed: the
/// members of the heaviest class are split in two by 2-means on their
/// standardized observations and the lightest class takes the smaller half.
fn reseed_collapsed(data: &[HeteroObservation], run: &RunOutcome) -> Option<MixtureParams> {
    let p = &run.params;
    let k = p.n_classes();
    let by_weight = |a: &usize, b: &usize| p.weights[*a].total_cmp(&p.weights[*b]);
    let lightest = (0..k).min_by(by_weight)?;
    let heaviest = (0..k).max_by(by_weight)?;
    if k < 2 || p.weights[lightest] >= COLLAPSE_FRACTION / k as f64 {
        return None;
    }
    let labels = run.posterior.map_labels();
    let members: Vec<&HeteroObservation> = data
        .iter()
        .zip(&labels)
        .filter(|(o, z)| **z == Some(heaviest) && !o.is_fully_missing())
        .map(|(o, _)| o)
        .collect();
    let (a, b) = split_two(&members, &p.bern_means[heaviest])?;
    let mut seeded = p.clone();
    let (small, large) = if a.len() < b.len() { (a, b) } else { (b, a) };
    let total = p.weights[heaviest] + p.weights[lightest];
    let frac = small.len() as f64 / (small.len() + large.len()) as f64;
    seeded.weights[lightest] = total * frac;
    seeded.weights[heaviest] = total * (1.0 - frac);
    seeded.bern_means[lightest] = bernoulli_means(&small, &p.bern_means[heaviest]);
    seeded.bern_means[heaviest] = bernoulli_means(&large, &p.bern_means[heaviest]);
    seeded.kernel_hp[lightest] = p.kernel_hp[heaviest].clone();
    Some(seeded)
}

fn bernoulli_means(group: &[&HeteroObservation], fallback: &[f64]) -> Vec<f64> {
    (0..fallback.len())
        .map(|j| {
            let seen: Vec<f64> = group
                .iter()
                .filter(|o| !o.bin_missing[j])
                .map(|o| f64::from(o.bin_values[j]))
                .collect();
            if seen.is_empty() {
                fallback[j]
            } else {
                clamp_prob(seen.iter().sum::<f64>() / seen.len() as f64)
            }
        })
        .collect()
}

type Split<'a> = (Vec<&'a HeteroObservation>, Vec<&'a HeteroObservation>);

/// 2-means on binary and standardized real entries, missing entries imputed by
/// the group mean. Seeds are the member farthest from the mean and the member
/// farthest from that one. `None` when either side ends up empty.
fn split_two<'a>(members: &[&'a HeteroObservation], bern: &[f64]) -> Option<Split<'a>> {
    if members.len() < 2 {
        return None;
    }
    let d = bern.len();
    let moments: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let v: Vec<f64> = members
                .iter()
                .filter(|o| !o.real_missing[j])
                .map(|o| o.real_values[j])
                .collect();
            if v.len() < 2 {
                return (0.0, 1.0);
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .collect();
    let points: Vec<Vec<f64>> = members
        .iter()
        .map(|o| {
            let mut x: Vec<f64> = (0..d)
                .map(|j| if o.bin_missing[j] { bern[j] } else { f64::from(o.bin_values[j]) })
                .collect();
            for (j, (m, sd)) in moments.iter().enumerate() {
                x.push(if o.real_missing[j] { 0.0 } else { (o.real_values[j] - m) / sd });
            }
            x
        })
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let centroid = |idx: &[usize]| -> Vec<f64> {
        let mut c = vec![0.0; 2 * d];
        for &i in idx {
            c.iter_mut().zip(&points[i]).for_each(|(c, x)| *c += x);
        }
        c.iter_mut().for_each(|c| *c /= idx.len() as f64);
        c
    };
    let all: Vec<usize> = (0..points.len()).collect();
    let mean = centroid(&all);
    let farthest = |from: &[f64]| (0..points.len()).max_by(|&a, &b| dist(&points[a], from).total_cmp(&dist(&points[b], from)));
    let s1 = farthest(&mean)?;
    let s2 = farthest(&points[s1])?;
    let mut centres = [points[s1].clone(), points[s2].clone()];
    let mut side = vec![false; points.len()];
    for _ in 0..SPLIT_ITERS {
        let next: Vec<bool> = points.iter().map(|x| dist(x, &centres[1]) < dist(x, &centres[0])).collect();
        let ones: Vec<usize> = (0..points.len()).filter(|&i| next[i]).collect();
        let zeros: Vec<usize> = (0..points.len()).filter(|&i| !next[i]).collect();
        if ones.is_empty() || zeros.is_empty() {
            return None;
        }
        let settled = next == side;
        side = next;
        centres = [centroid(&zeros), centroid(&ones)];
        if settled {
            break;
        }
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (o, s) in members.iter().zip(&side) {
        if *s { b.push(*o) } else { a.push(*o) }
    }
    (!a.is_empty() && !b.is_empty()).then_some((a, b))
}

/// EM from a given starting point. A step that lowers the log-likelihood is
/// rejected: the run stops at the parameters before that step.
fn run_em(data: &[HeteroObservation], init: MixtureParams, cfg: &FitConfig) -> Result<RunOutcome> {
    let mut params = init;
    let mut q_trace: Vec<f64> = Vec::new();
    let mut empty_class_events = Vec::new();
    let mut line_search_failures = 0;
    let mut converged = false;
    let mut rejected_step = false;
    let mut iter = 0;
    let mut previous: Option<(MixtureParams, LatentPosterior)> = None;
    let posterior = loop {
        let e = e_step(data, &params)?;
        if !e.log_likelihood.is_finite() {
            return Err(Error::DegenerateResponsibility { index: 0 });
        }
        if let (Some(&prev), Some((p, post))) = (q_trace.last(), previous.take()) {
            if e.log_likelihood < prev {
                params = p;
                converged = true;
                rejected_step = true;
                break post;
            }
        }
        if let Some(prev) = q_trace.last() {
            if (e.log_likelihood - prev).abs() < cfg.epsilon_q {
                converged = true;
            }
        }
        q_trace.push(e.log_likelihood);
        if converged || iter >= cfg.max_em_iters {
            break e.posterior;
        }
        iter += 1;

        previous = Some((params.clone(), e.posterior.clone()));
        let stats = SufficientStats::from_e_step(data, &e, &params);
        let bern = m_step_bernoulli(data, &e.posterior, &params)?;
        empty_class_events.extend(bern.empty_classes.iter().map(|&c| (iter, c)));
        params.weights = bern.weights;
        params.bern_means = bern.bern_means;
        if !cfg.freeze_kernels {
            let g = m_step_gaussian(&stats, &params, cfg.max_m_evals)?;
            if g.line_search_failed {
                line_search_failures += 1;
            }
            params.kernel_hp = g.kernel_hp;
            params.noise = g.noise;
        }
    };
    Ok(RunOutcome {
        params,
        posterior,
        q_trace,
        converged,
        empty_class_events,
        line_search_failures,
        rejected_step,
        reseeds: 0,
    })
}

/// Fits a `k`-class mixture by EM from `cfg.n_init` random starts run in parallel
/// and returns the restart with the highest final log-likelihood.
pub fn fit(data: &[HeteroObservation], k: usize, cfg: &FitConfig) -> Result<FitResult> {
    if k == 0 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if cfg.n_init == 0 {
        return Err(Error::invalid("n_init must be >= 1"));
    }
    if data.len() < k {
        return Err(Error::invalid(format!("need T >= K; got T={} K={k}", data.len())));
    }
    let d = data[0].dim();
    if d == 0 || data.iter().any(|o| o.dim() != d) {
        return Err(Error::invalid("observations must share a non-zero dimension"));
    }
    if data.iter().all(HeteroObservation::is_fully_missing) {
        return Err(Error::EmptyDataset("every observation is fully missing".into()));
    }
    if cfg.order > d {
        return Err(Error::invalid(format!("Fourier order {} exceeds D={d}", cfg.order)));
    }

    let runs: Vec<Result<RunOutcome>> = (0..cfg.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let init = initial_params(&mut rng, k, d, cfg.order)?;
            let mut out = run_em(data, init, cfg)?;
            for _ in 0..k {
                let Some(seeded) = reseed_collapsed(data, &out) else {
                    break;
                };
                match run_em(data, seeded, cfg) {
                    Ok(next) if next.final_loglik() > out.final_loglik() => {
                        let reseeds = out.reseeds + 1;
                        out = next;
                        out.reseeds = reseeds;
                    }
                    _ => break,
                }
            }
            Ok(out)
        })
        .collect();

    let restart_loglik: Vec<Option<f64>> = runs
        .iter()
        .map(|r| r.as_ref().ok().and_then(|o| o.q_trace.last().copied()))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, ll) in restart_loglik.iter().enumerate() {
        if let Some(ll) = *ll {
            if best.is_none_or(|(_, b)| ll > b) {
                best = Some((i, ll));
            }
        }
    }
    let Some((best_restart, _)) = best else {
        let last = runs
            .into_iter()
            .filter_map(|r| r.err())
            .next_back()
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::AllRunsFailed { last });
    };
    for (i, r) in runs.iter().enumerate() {
        if let Err(e) = r {
            tracing::warn!(restart = i, error = %e, "EM restart aborted");
        }
    }
    let out = runs.into_iter().nth(best_restart).expect("index in range").expect("best run is Ok");
    Ok(FitResult {
        diagnostics: FitDiagnostics {
            best_restart,
            restart_loglik,
            iterations: out.q_trace.len() - 1,
            converged: out.converged,
            empty_class_events: out.empty_class_events,
            line_search_failures: out.line_search_failures,
            rejected_step: out.rejected_step,
            reseeds: out.reseeds,
        },
        params: out.params,
        posterior: out.posterior,
        q_trace: out.q_trace,
    })
}
