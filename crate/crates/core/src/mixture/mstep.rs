// SPDX-License-Identifier: MIT OR Apache-2.0

//! M-step: closed-form Bernoulli and weight updates, CG ascent for the kernels.
//!
//! With responsibilities `r_tk`, filled vectors `x~_tk` (observed entries plus
//! conditional means) and zero-padded conditional covariances `A_tk`, the Gaussian
//! part of the expected complete log-likelihood is
//!
//! ```text
//! Q_k = -N_k/2 (D ln 2pi + ln|Sigma_k|) - 1/2 tr(Sigma_k^-1 S_k)
//! N_k = sum_t r_tk,   S_k = sum_t r_tk (x~_tk x~_tk^T + A_tk)
//! ```
//!
//! and its derivative in any covariance parameter is `1/2 tr(W_k dSigma_k)` with
//! `W_k = Sigma_k^-1 S_k Sigma_k^-1 - N_k Sigma_k^-1`.

use nalgebra::DMatrix;

use super::estep::EStep;
use super::optim::{maximize_cg, CgOutcome};
use super::{clamp_prob, HeteroObservation, LatentPosterior, MixtureParams};
use crate::error::{Error, Result};
use crate::kernel::{build_covariance, CovMatrix, KernelHyperparams, NoiseModel};
use crate::math::{xlogy, LN_2PI};

/// Responsibility-weighted statistics that fully determine `Q` for fixed
/// E-step quantities.
#[derive(Clone, Debug)]
pub struct SufficientStats {
    /// `N_k`.
    pub counts: Vec<f64>,
    /// `S_k`, `D x D`.
    pub scatter: Vec<DMatrix<f64>>,
    /// `sum_t r_tk x^_tj`, with `x^` the observed bit or the previous mean.
    pub ones: Vec<Vec<f64>>,
    /// Number of observations entering the sums (not fully missing).
    pub n_included: usize,
}

impl SufficientStats {
    /// Accumulates statistics from an E-step computed under `current`.
    pub fn from_e_step(data: &[HeteroObservation], e: &EStep, current: &MixtureParams) -> Self {
        let k = current.n_classes();
        let d = current.dim();
        let mut counts = vec![0.0; k];
        let mut scatter = vec![DMatrix::zeros(d, d); k];
        let mut ones = vec![vec![0.0; d]; k];
        let mut n_included = 0;
        for (t, obs) in data.iter().enumerate() {
            if e.posterior.fully_missing[t] {
                continue;
            }
            n_included += 1;
            for c in 0..k {
                let r = e.posterior.probs[t][c];
                if r == 0.0 {
                    continue;
                }
                counts[c] += r;
                let ms = &e.missing_stats[t][c];
                let x = ms.filled(obs);
                scatter[c].ger(r, &x, &x, 1.0);
                for (a, &i) in ms.missing_idx.iter().enumerate() {
                    for (b, &j) in ms.missing_idx.iter().enumerate() {
                        scatter[c][(i, j)] += r * ms.cov[(a, b)];
                    }
                }
                for (j, acc) in ones[c].iter_mut().enumerate() {
                    let xhat = if obs.bin_missing[j] {
                        current.bern_means[c][j]
                    } else {
                        f64::from(obs.bin_values[j])
                    };
                    *acc += r * xhat;
                }
            }
        }
        Self {
            counts,
            scatter,
            ones,
            n_included,
        }
    }
}

fn gaussian_q(n: f64, s: &DMatrix<f64>, cov: &CovMatrix) -> f64 {
    let d = cov.dim() as f64;
    let inv_s = cov.cholesky().solve(s);
    -0.5 * n * (d * LN_2PI + cov.ln_det()) - 0.5 * inv_s.trace()
}

/// Full expected complete log-likelihood `Q(params | stats)`.
pub fn expected_complete_loglik(stats: &SufficientStats, params: &MixtureParams) -> Result<f64> {
    let covs = params.covariances()?;
    let mut q = 0.0;
    for (c, cov) in covs.iter().enumerate() {
        let n = stats.counts[c];
        q += xlogy(n, params.weights[c]);
        for (ones, mu) in stats.ones[c].iter().zip(&params.bern_means[c]) {
            q += xlogy(*ones, *mu) + xlogy(n - ones, 1.0 - mu);
        }
        q += gaussian_q(n, &stats.scatter[c], cov);
    }
    Ok(q)
}

/// Flattening of kernel and noise hyperparameters.
///
/// Order: for each class `[sigma_a, ell, a_0..=a_C, b_1..=b_C]`, then
/// `[sigma_1..sigma_D]`. The optimizer works on the unconstrained vector where
/// `sigma_a`, `ell` and every `sigma_j` are replaced by their logarithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_classes: usize,
    pub order: usize,
    pub dim: usize,
}

impl ParamLayout {
    pub fn of(params: &MixtureParams) -> Self {
        Self {
            n_classes: params.n_classes(),
            order: params.kernel_hp[0].order(),
            dim: params.dim(),
        }
    }

    pub fn per_class(&self) -> usize {
        2 * self.order + 3
    }

    pub fn len(&self) -> usize {
        self.n_classes * self.per_class() + self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True where the slot holds a positive parameter optimized on log scale.
    pub fn is_log_scale(&self, idx: usize) -> bool {
        let kernel_len = self.n_classes * self.per_class();
        idx >= kernel_len || idx % self.per_class() < 2
    }

    /// Natural-scale parameter vector.
    pub fn pack(&self, kernel_hp: &[KernelHyperparams], noise: &NoiseModel) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        for hp in kernel_hp {
            v.push(hp.sigma_a);
            v.push(hp.ell);
            v.extend_from_slice(&hp.a);
            v.extend_from_slice(&hp.b);
        }
        v.extend_from_slice(&noise.sigma);
        v
    }

    pub fn unpack(&self, v: &[f64]) -> Result<(Vec<KernelHyperparams>, NoiseModel)> {
        if v.len() != self.len() {
            return Err(Error::invalid(format!("parameter vector has length {} not {}", v.len(), self.len())));
        }
        let pc = self.per_class();
        let n_a = self.order + 1;
        let hps = (0..self.n_classes)
            .map(|c| {
                let s = &v[c * pc..(c + 1) * pc];
                KernelHyperparams::new(s[2..2 + n_a].to_vec(), s[2 + n_a..].to_vec(), s[0], s[1], self.dim)
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = NoiseModel::new(v[self.n_classes * pc..].to_vec())?;
        Ok((hps, noise))
    }

    pub fn to_unconstrained(&self, natural: &[f64]) -> Vec<f64> {
        natural
            .iter()
            .enumerate()
            .map(|(i, &x)| if self.is_log_scale(i) { x.ln() } else { x })
            .collect()
    }

    pub fn to_natural(&self, phi: &[f64]) -> Vec<f64> {
        phi.iter()
            .enumerate()
            .map(|(i, &x)| if self.is_log_scale(i) { x.exp() } else { x })
            .collect()
    }
}

fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Gaussian part of `Q` and its gradient in natural parameters (layout order).
fn gaussian_objective(
    stats: &SufficientStats,
    layout: &ParamLayout,
    kernel_hp: &[KernelHyperparams],
    noise: &NoiseModel,
) -> Result<(f64, Vec<f64>)> {
    let pc = layout.per_class();
    let mut grad = vec![0.0; layout.len()];
    let mut q = 0.0;
    let mut noise_diag = vec![0.0; layout.dim];
    for (c, hp) in kernel_hp.iter().enumerate() {
        let cov = build_covariance(hp, noise)?;
        let n = stats.counts[c];
        q += gaussian_q(n, &stats.scatter[c], &cov);
        let inv = cov.inverse();
        let w = &inv * &stats.scatter[c] * &inv - &inv * n;
        for (p, dk) in hp.gram_gradients().iter().enumerate() {
            grad[c * pc + p] = 0.5 * frobenius(&w, dk);
        }
        for (j, acc) in noise_diag.iter_mut().enumerate() {
            *acc += w[(j, j)];
        }
    }
    let off = layout.n_classes * pc;
    for j in 0..layout.dim {
        grad[off + j] = noise.sigma[j] * noise_diag[j];
    }
    Ok((q, grad))
}

/// `dQ / d(kernel and noise hyperparameters)` in natural parameters, ordered per
/// [`ParamLayout`].
pub fn q_gradient(stats: &SufficientStats, params: &MixtureParams) -> Result<Vec<f64>> {
    let layout = ParamLayout::of(params);
    Ok(gaussian_objective(stats, &layout, &params.kernel_hp, &params.noise)?.1)
}

/// Closed-form weight and Bernoulli-mean update.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliUpdate {
    pub weights: Vec<f64>,
    pub bern_means: Vec<Vec<f64>>,
    /// Classes whose total responsibility fell below `1e-8 * T`; their means were kept.
    pub empty_classes: Vec<usize>,
}

/// Maximizes `Q` over weights and Bernoulli means.
pub fn m_step_bernoulli(
    data: &[HeteroObservation],
    posterior: &LatentPosterior,
    current: &MixtureParams,
) -> Result<BernoulliUpdate> {
    if data.len() != posterior.len() {
        return Err(Error::invalid("posterior and data lengths differ"));
    }
    let k = current.n_classes();
    let d = current.dim();
    let mut counts = vec![0.0; k];
    let mut ones = vec![vec![0.0; d]; k];
    let mut n_included = 0usize;
    for (t, obs) in data.iter().enumerate() {
        if posterior.fully_missing[t] {
            continue;
        }
        n_included += 1;
        for c in 0..k {
            let r = posterior.probs[t][c];
            counts[c] += r;
            for (j, acc) in ones[c].iter_mut().enumerate() {
                let xhat = if obs.bin_missing[j] {
                    current.bern_means[c][j]
                } else {
                    f64::from(obs.bin_values[j])
                };
                *acc += r * xhat;
            }
        }
    }
    if n_included == 0 {
        return Err(Error::EmptyDataset("every observation is fully missing".into()));
    }
    let threshold = 1e-8 * data.len() as f64;
    let mut empty_classes = Vec::new();
    let mut bern_means = Vec::with_capacity(k);
    for c in 0..k {
        if counts[c] < threshold {
            empty_classes.push(c);
            bern_means.push(current.bern_means[c].clone());
        } else {
            bern_means.push(ones[c].iter().map(|o| clamp_prob(o / counts[c])).collect());
        }
    }
    let total: f64 = counts.iter().sum();
    let weights = counts.iter().map(|n| n / total).collect();
    Ok(BernoulliUpdate {
        weights,
        bern_means,
        empty_classes,
    })
}

/// Result of the kernel/noise CG block.
#[derive(Clone, Debug)]
pub struct GaussianUpdate {
    pub kernel_hp: Vec<KernelHyperparams>,
    pub noise: NoiseModel,
    /// Gaussian part of `Q` before and after the update.
    pub q_before: f64,
    pub q_after: f64,
    pub evaluations: usize,
    pub line_search_failed: bool,
}

/// CG ascent on the Gaussian part of `Q` over all kernel and noise hyperparameters
/// jointly, with at most `max_evals` objective evaluations. Never decreases `Q`; a
/// failed line search keeps the previous hyperparameters.
pub fn m_step_gaussian(
    stats: &SufficientStats,
    current: &MixtureParams,
    max_evals: usize,
) -> Result<GaussianUpdate> {
    let layout = ParamLayout::of(current);
    let natural0 = layout.pack(&current.kernel_hp, &current.noise);
    let phi0 = layout.to_unconstrained(&natural0);

    let objective = |phi: &[f64]| -> Option<(f64, Vec<f64>)> {
        let natural = layout.to_natural(phi);
        let (hps, noise) = layout.unpack(&natural).ok()?;
        let (q, mut g) = gaussian_objective(stats, &layout, &hps, &noise).ok()?;
        for (i, gi) in g.iter_mut().enumerate() {
            if layout.is_log_scale(i) {
                *gi *= natural[i];
            }
        }
        (q.is_finite() && g.iter().all(|v| v.is_finite())).then_some((q, g))
    };

    let CgOutcome {
        x,
        value,
        evaluations,
        line_search_failed,
        ..
    } = match maximize_cg(objective, &phi0, max_evals.max(1)) {
        Some(out) => out,
        None => {
            // The current point itself is not evaluable; surface the kernel error.
            let (q, _) = gaussian_objective(stats, &layout, &current.kernel_hp, &current.noise)?;
            return Err(Error::NotPositiveDefinite {
                context: format!("Gaussian objective undefined at current hyperparameters (Q={q})"),
            });
        }
    };
    let q_before = gaussian_objective(stats, &layout, &current.kernel_hp, &current.noise)?.0;
    let (kernel_hp, noise) = layout.unpack(&layout.to_natural(&x))?;
    Ok(GaussianUpdate {
        kernel_hp,
        noise,
        q_before,
        q_after: value,
        evaluations,
        line_search_failed,
    })
}
