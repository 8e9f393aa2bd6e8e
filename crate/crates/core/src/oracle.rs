// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small-instance correctness checks against independent references:
//! enumeration, quadrature, Monte Carlo integration and finite differences.
//! Each check reports the worst error it saw against its tolerance.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    beta_quadrature, exact_hierarchical_marginal, fpo_predictive, peo_detect, peo_predictive, peo_step,
    DetectorConfig, FpoPriors, McmcConfig, PeoState, ThetaGrid,
};
use crate::error::Result;
use crate::kernel::KernelHyperparams;
use crate::math::{ln_gamma, log_sum_exp, sample_dirichlet};
use crate::mixture::{
    e_step, expected_complete_loglik, q_gradient, HeteroObservation, MixtureParams, ParamLayout, SufficientStats,
};
use crate::simulate::random_mixture_params;

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    /// Largest error observed, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn new(name: &str, instances: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instances,
            worst,
            tolerance,
            passed: worst.is_finite() && worst < tolerance,
        }
    }

    fn failed(name: &str, instances: usize, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instances,
            worst: f64::INFINITY,
            tolerance,
            passed: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Comma-separated table `check,instances,worst,tolerance,status`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("check,instances,worst,tolerance,status\n");
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{},{},{:.3e},{:.1e},{}",
                c.name,
                c.instances,
                c.worst,
                c.tolerance,
                if c.passed { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// Kernel gradient at `(t, t2)`, ordered `[sigma_a, ell, a_0..=a_C, b_1..=b_C]`.
pub type KernelGradFn = dyn Fn(&KernelHyperparams, f64, f64) -> Vec<f64> + Sync;
/// Gradient of `Q` in natural parameters, ordered per [`ParamLayout`].
pub type QGradFn = dyn Fn(&SufficientStats, &MixtureParams) -> Result<Vec<f64>> + Sync;

pub fn analytic_kernel_gradient(hp: &KernelHyperparams, t: f64, t2: f64) -> Vec<f64> {
    let g = hp.kernel_gradients(t, t2);
    [g.d_sigma_a, g.d_ell].into_iter().chain(g.d_a).chain(g.d_b).collect()
}

pub fn analytic_q_gradient(stats: &SufficientStats, params: &MixtureParams) -> Result<Vec<f64>> {
    q_gradient(stats, params)
}

/// Relative discrepancy, with gradients below `floor` in both forms treated as equal.
fn rel_err(analytic: f64, fd: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

fn central_difference(f: impl Fn(&[f64]) -> Option<f64>, x: &[f64], i: usize) -> Option<f64> {
    let h = 1e-5 * x[i].abs().max(1.0);
    let (mut up, mut dn) = (x.to_vec(), x.to_vec());
    up[i] += h;
    dn[i] -= h;
    Some((f(&up)? - f(&dn)?) / (2.0 * h))
}

fn random_kernel(rng: &mut impl Rng) -> KernelHyperparams {
    let order = rng.random_range(1..=3);
    let d = rng.random_range(6..=24);
    random_mixture_params(rng, 1, d, order).expect("valid random kernel").kernel_hp[0].clone()
}

fn kernel_from(hp: &KernelHyperparams, v: &[f64]) -> Option<KernelHyperparams> {
    let n_a = hp.a.len();
    KernelHyperparams::new(v[2..2 + n_a].to_vec(), v[2 + n_a..].to_vec(), v[0], v[1], hp.period).ok()
}

/// Analytic kernel gradients against central differences of the kernel value.
pub fn kernel_gradient_check(seed: u64, instances: usize, grad: &KernelGradFn) -> OracleCheck {
    let tol = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let hp = random_kernel(&mut rng);
        let d = hp.period as f64;
        let (t, t2) = (rng.random_range(0.0..d), rng.random_range(0.0..d));
        let x: Vec<f64> = [hp.sigma_a, hp.ell].into_iter().chain(hp.a.clone()).chain(hp.b.clone()).collect();
        let g = grad(&hp, t, t2);
        if g.len() != x.len() {
            return OracleCheck::failed("kernel_gradient", instances, tol);
        }
        for (i, gi) in g.iter().enumerate() {
            let f = |v: &[f64]| kernel_from(&hp, v).map(|k| k.nonstationary_kernel(t, t2));
            match central_difference(f, &x, i) {
                Some(fd) => worst = worst.max(rel_err(*gi, fd, 1e-9)),
                None => return OracleCheck::failed("kernel_gradient", instances, tol),
            }
        }
    }
    OracleCheck::new("kernel_gradient", instances, worst, tol)
}

/// Small random data set drawn from `params`, with a fraction of entries masked.
pub fn random_dataset(rng: &mut impl Rng, params: &MixtureParams, t: usize, miss: f64) -> Vec<HeteroObservation> {
    let k = params.n_classes();
    let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
    let mut data = crate::mixture::sample_synthetic(params, &labels, rng.random()).expect("valid random parameters");
    for o in &mut data {
        for j in 0..o.dim() {
            if rng.random_bool(miss) {
                o.real_missing[j] = true;
                o.real_values[j] = 0.0;
            }
            if rng.random_bool(miss) {
                o.bin_missing[j] = true;
                o.bin_values[j] = 0;
            }
        }
    }
    data
}

/// Analytic gradients of the expected complete log-likelihood against central
/// differences, over kernel and noise hyperparameters.
pub fn q_gradient_check(seed: u64, instances: usize, grad: &QGradFn) -> OracleCheck {
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(4..=8);
        let order = rng.random_range(1..=2);
        let params = random_mixture_params(&mut rng, k, d, order).expect("valid random parameters");
        let t = rng.random_range(4..=10);
        let data = random_dataset(&mut rng, &params, t, 0.2);
        let Ok(e) = e_step(&data, &params) else {
            return OracleCheck::failed("q_gradient", instances, tol);
        };
        let stats = SufficientStats::from_e_step(&data, &e, &params);
        let layout = ParamLayout::of(&params);
        let x = layout.pack(&params.kernel_hp, &params.noise);
        let Ok(g) = grad(&stats, &params) else {
            return OracleCheck::failed("q_gradient", instances, tol);
        };
        if g.len() != x.len() {
            return OracleCheck::failed("q_gradient", instances, tol);
        }
        let q_at = |v: &[f64]| {
            let (kernel_hp, noise) = layout.unpack(v).ok()?;
            let p = MixtureParams {
                kernel_hp,
                noise,
                ..params.clone()
            };
            expected_complete_loglik(&stats, &p).ok()
        };
        for (i, gi) in g.iter().enumerate() {
            match central_difference(q_at, &x, i) {
                Some(fd) => worst = worst.max(rel_err(*gi, fd, 1e-7)),
                None => return OracleCheck::failed("q_gradient", instances, tol),
            }
        }
    }
    OracleCheck::new("q_gradient", instances, worst, tol)
}

/// The label recursion against exact enumeration over latent paths and a
/// quadrature grid of class distributions, with one-hot emissions. Compares
/// every joint entry `p(r_t, x_{1:t})` by relative error.
pub fn peo_enumeration_check(seed: u64, instances: usize) -> OracleCheck {
    let tol = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let t = 6;
        let gamma: Vec<f64> = (0..2).map(|_| rng.random_range(0.3..4.0)).collect();
        let tau = rng.random_range(2.0..50.0);
        let labels: Vec<usize> = (0..t).map(|_| rng.random_range(0..2)).collect();
        let (Ok(grid), Ok(cfg)) = (ThetaGrid::dirichlet(&gamma, 8), DetectorConfig::with_tau(tau)) else {
            return OracleCheck::failed("peo_vs_enumeration", instances, tol);
        };
        let lik: Vec<Vec<f64>> = labels
            .iter()
            .map(|&z| (0..2).map(|k| f64::from(u8::from(k == z))).collect())
            .collect();
        let Ok(exact) = exact_hierarchical_marginal(&lik, &grid, &cfg) else {
            return OracleCheck::failed("peo_vs_enumeration", instances, tol);
        };
        let mut state = PeoState::initial(gamma.clone());
        for (step, &z) in labels.iter().enumerate() {
            let Ok(next) = peo_step(&state, Some(z), &cfg.hazard, &gamma) else {
                return OracleCheck::failed("peo_vs_enumeration", instances, tol);
            };
            state = next;
            for (e, p) in exact[step].iter().zip(&state.log_joint) {
                worst = worst.max((e - p).exp_m1().abs());
            }
        }
    }
    OracleCheck::new("peo_vs_enumeration", instances, worst, tol)
}

/// Closed-form Dirichlet-Categorical predictive against Monte Carlo integration
/// over `Dir(gamma)`. The error is in units of Monte Carlo standard errors.
pub fn conjugacy_check(seed: u64, instances: usize, draws: usize) -> OracleCheck {
    let tol = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(2..=5);
        let gamma: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..6.0)).collect();
        let z = rng.random_range(0..k);
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let p = sample_dirichlet(&mut rng, &gamma)[z];
            sum += p;
            sum_sq += p * p;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        worst = worst.max((peo_predictive(&gamma, z) - mean).abs() / se);
    }
    OracleCheck::new("peo_predictive_vs_monte_carlo", instances, worst, tol)
}

/// Gauss-Jacobi nodes against the closed-form Beta moments `E[x^m]`, m <= 2n - 1.
pub fn beta_quadrature_check(seed: u64, instances: usize) -> OracleCheck {
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (a, b) = (rng.random_range(0.2..6.0), rng.random_range(0.2..6.0));
        let n = rng.random_range(2..=12);
        let Ok((x, w)) = beta_quadrature(a, b, n) else {
            return OracleCheck::failed("beta_quadrature_moments", instances, tol);
        };
        for m in 0..2 * n {
            let quad: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(m as i32)).sum();
            let exact = (ln_gamma(a + m as f64) + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(a + b + m as f64)).exp();
            worst = worst.max((quad - exact).abs() / exact);
        }
    }
    OracleCheck::new("beta_quadrature_moments", instances, worst, tol)
}

/// Sampled Dirichlet-observation predictive for `K = 2` against 2-D quadrature of
/// the Beta-likelihood posterior. The error is relative.
pub fn fpo_quadrature_check(seed: u64, instances: usize, samples: usize) -> OracleCheck {
    let tol = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let priors = FpoPriors {
            kappa: rng.random_range(1.0..4.0),
            nu: rng.random_range(0.3..2.0),
            beta: {
                let b0 = rng.random_range(0.2..0.8);
                vec![b0, 1.0 - b0]
            },
        };
        let centre: f64 = rng.random_range(0.2..0.8);
        let part: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let x: f64 = (centre + rng.random_range(-0.15..0.15)).clamp(0.05, 0.95);
                vec![x, 1.0 - x]
            })
            .collect();
        let x_new: f64 = (centre + rng.random_range(-0.2..0.2)).clamp(0.05, 0.95);
        let z_new = [x_new, 1.0 - x_new];
        let exact = beta_posterior_predictive(&part, &z_new, &priors);
        let mcmc = McmcConfig {
            samples,
            burn_in: 1_000,
            seed: seed.wrapping_add(i as u64),
        };
        match fpo_predictive(&part, &z_new, &priors, &mcmc) {
            Ok(est) => worst = worst.max((est - exact).abs() / exact),
            Err(_) => return OracleCheck::failed("fpo_predictive_vs_quadrature", instances, tol),
        }
    }
    OracleCheck::new("fpo_predictive_vs_quadrature", instances, worst, tol)
}

/// `p(z_new | partition)` for two classes by quadrature: Gauss-Jacobi nodes for
/// the Beta prior on `lambda`, trapezoid rule in `ln eta` for the gamma prior.
fn beta_posterior_predictive(part: &[Vec<f64>], z_new: &[f64], priors: &FpoPriors) -> f64 {
    let ln_beta_pdf = |x: f64, a: f64, b: f64| {
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
    };
    let (nodes, weights) = beta_quadrature(priors.beta[0], priors.beta[1], 80).expect("valid beta prior");
    let (lo, hi, m) = (-8.0f64, 8.0f64, 4_000);
    let du = (hi - lo) / m as f64;
    let (mut num, mut den) = (Vec::new(), Vec::new());
    for i in 0..=m {
        let u = lo + i as f64 * du;
        let eta = u.exp();
        let trap: f64 = if i == 0 || i == m { 0.5 } else { 1.0 };
        let ln_prior_eta = priors.kappa * priors.nu.ln() - ln_gamma(priors.kappa) + priors.kappa * u
            - priors.nu * eta
            + (trap * du).ln();
        for (&l, &w) in nodes.iter().zip(&weights) {
            let (a, b) = (eta * l, eta * (1.0 - l));
            let ll: f64 = part.iter().map(|z| ln_beta_pdf(z[0], a, b)).sum();
            let base = ln_prior_eta + w.ln() + ll;
            den.push(base);
            num.push(base + ln_beta_pdf(z_new[0], a, b));
        }
    }
    (log_sum_exp(&num) - log_sum_exp(&den)).exp()
}

/// Row sums of run-length and latent-class posteriors on random instances.
pub fn normalization_check(seed: u64, instances: usize) -> OracleCheck {
    let tol = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.random_range(1..=4);
        let params = random_mixture_params(&mut rng, k, 8, 2).expect("valid random parameters");
        let data = random_dataset(&mut rng, &params, 30, 0.3);
        let Ok(e) = e_step(&data, &params) else {
            return OracleCheck::failed("posterior_normalization", instances, tol);
        };
        let labels = e.posterior.map_labels();
        let Ok(rep) = peo_detect(&labels, &vec![1.0; k], &DetectorConfig::default()) else {
            return OracleCheck::failed("posterior_normalization", instances, tol);
        };
        for row in e.posterior.probs.iter().chain(&rep.posterior) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    OracleCheck::new("posterior_normalization", instances, worst, tol)
}

/// The full suite with the analytic gradients.
pub fn run_suite(seed: u64) -> OracleReport {
    run_suite_with(seed, &analytic_kernel_gradient, &analytic_q_gradient)
}

/// The full suite with injectable gradients, for negative controls.
pub fn run_suite_with(seed: u64, kernel_grad: &KernelGradFn, q_grad: &QGradFn) -> OracleReport {
    OracleReport {
        checks: vec![
            peo_enumeration_check(seed, 20),
            conjugacy_check(seed, 20, 1_000_000),
            beta_quadrature_check(seed, 20),
            kernel_gradient_check(seed, 50, kernel_grad),
            q_gradient_check(seed, 50, q_grad),
            fpo_quadrature_check(seed, 3, 20_000),
            normalization_check(seed, 10),
        ],
    }
}
