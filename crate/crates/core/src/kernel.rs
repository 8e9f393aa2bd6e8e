// SPDX-License-Identifier: MIT OR Apache-2.0

//! Non-stationary periodic covariance functions.
//!
//! Each latent class owns a kernel
//!
//! ```text
//! g(t, t') = s(t) s(t') g~(t - t')
//! g~(d)    = sigma_a^2 exp(-2 sin^2(pi |d| / D) / ell^2)
//! s(t)     = u(t)^2,   u(t) = a_0 / 2 + sum_c [a_c cos(w_c t) + b_c sin(w_c t)],  w_c = 2 pi c / D
//! ```
//!
//! # Gradients
//!
//! All partial derivatives follow from the product rule on the definition above:
//!
//! ```text
//! dg/d sigma_a = 2 g / sigma_a
//! dg/d ell     = g * 4 sin^2(pi |t - t'| / D) / ell^3
//! dg/d a_0     = g~ * (u(t) s(t') + s(t) u(t'))                      (ds/da_0 = u)
//! dg/d a_c     = 2 g~ * (u(t) cos(w_c t) s(t') + s(t) u(t') cos(w_c t'))
//! dg/d b_c     = 2 g~ * (u(t) sin(w_c t) s(t') + s(t) u(t') sin(w_c t'))
//! ```
//!
//! The envelope enters linearly (once per argument), so the ell-derivative carries
//! `s(t) s(t')` and not its square, and every Fourier derivative keeps the full
//! stationary factor `g~` including `sigma_a^2`. Each formula is checked against
//! central finite differences in the tests below.
//!
//! Time arguments are real-valued; the covariance builders evaluate on the grid
//! `1..=D`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one class kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Cosine coefficients `a_0..=a_C`.
    pub a: Vec<f64>,
    /// Sine coefficients `b_1..=b_C`.
    pub b: Vec<f64>,
    /// Stationary amplitude.
    pub sigma_a: f64,
    /// Lengthscale.
    pub ell: f64,
    /// Samples per period, `D`.
    pub period: usize,
}

/// Analytic partial derivatives of `g(t, t')` for one index pair.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGradient {
    pub d_sigma_a: f64,
    pub d_ell: f64,
    pub d_a: Vec<f64>,
    pub d_b: Vec<f64>,
}

impl KernelHyperparams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, sigma_a: f64, ell: f64, period: usize) -> Result<Self> {
        let hp = Self {
            a,
            b,
            sigma_a,
            ell,
            period,
        };
        hp.validate()?;
        Ok(hp)
    }

    /// Constant envelope `s(t) = 1` with the given stationary part.
    pub fn flat(order: usize, sigma_a: f64, ell: f64, period: usize) -> Result<Self> {
        let mut a = vec![0.0; order + 1];
        a[0] = 2.0;
        Self::new(a, vec![0.0; order], sigma_a, ell, period)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::invalid("kernel period must be >= 1"));
        }
        if self.a.len() != self.b.len() + 1 {
            return Err(Error::invalid(format!(
                "kernel needs C+1 cosine and C sine coefficients; got {} and {}",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.order() > self.period {
            return Err(Error::invalid(format!(
                "Fourier order {} exceeds period {}",
                self.order(),
                self.period
            )));
        }
        if !(self.sigma_a.is_finite() && self.sigma_a > 0.0) {
            return Err(Error::invalid(format!("sigma_a must be > 0; got {}", self.sigma_a)));
        }
        if !(self.ell.is_finite() && self.ell > 0.0) {
            return Err(Error::invalid(format!("ell must be > 0; got {}", self.ell)));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("Fourier coefficients must be finite"));
        }
        Ok(())
    }

    /// Fourier order `C`.
    pub fn order(&self) -> usize {
        self.b.len()
    }

    /// Number of scalar hyperparameters: `sigma_a`, `ell`, `a`, `b`.
    pub fn n_params(&self) -> usize {
        2 + self.a.len() + self.b.len()
    }

    fn omega(&self, c: usize) -> f64 {
        2.0 * PI * c as f64 / self.period as f64
    }

    /// The Fourier series `u(t)` whose square is the envelope.
    pub fn fourier_series(&self, t: f64) -> f64 {
        let mut u = self.a[0] / 2.0;
        for c in 1..=self.order() {
            let w = self.omega(c) * t;
            u += self.a[c] * w.cos() + self.b[c - 1] * w.sin();
        }
        u
    }

    /// Envelope `s(t) = u(t)^2`.
    pub fn fourier_envelope(&self, t: f64) -> f64 {
        let u = self.fourier_series(t);
        u * u
    }

    /// Stationary periodic exponential kernel `g~(t - t2)`.
    pub fn stationary_periodic(&self, t: f64, t2: f64) -> f64 {
        let s = (PI * (t - t2).abs() / self.period as f64).sin();
        self.sigma_a * self.sigma_a * (-2.0 * s * s / (self.ell * self.ell)).exp()
    }

    /// Full non-stationary kernel `s(t) s(t2) g~(t - t2)`.
    pub fn nonstationary_kernel(&self, t: f64, t2: f64) -> f64 {
        self.fourier_envelope(t) * self.fourier_envelope(t2) * self.stationary_periodic(t, t2)
    }

    /// Analytic gradient of `g(t, t2)` with respect to every hyperparameter.
    pub fn kernel_gradients(&self, t: f64, t2: f64) -> KernelGradient {
        let u1 = self.fourier_series(t);
        let u2 = self.fourier_series(t2);
        let (s1, s2) = (u1 * u1, u2 * u2);
        let stat = self.stationary_periodic(t, t2);
        let g = s1 * s2 * stat;
        let sin = (PI * (t - t2).abs() / self.period as f64).sin();

        let mut d_a = Vec::with_capacity(self.a.len());
        d_a.push(stat * (u1 * s2 + s1 * u2));
        let mut d_b = Vec::with_capacity(self.b.len());
        for c in 1..=self.order() {
            let (w1, w2) = (self.omega(c) * t, self.omega(c) * t2);
            d_a.push(2.0 * stat * (u1 * w1.cos() * s2 + s1 * u2 * w2.cos()));
            d_b.push(2.0 * stat * (u1 * w1.sin() * s2 + s1 * u2 * w2.sin()));
        }
        KernelGradient {
            d_sigma_a: 2.0 * g / self.sigma_a,
            d_ell: g * 4.0 * sin * sin / self.ell.powi(3),
            d_a,
            d_b,
        }
    }

    /// Gram matrix `K` on the grid `1..=D`.
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.period;
        let env: Vec<f64> = (1..=d).map(|t| self.fourier_envelope(t as f64)).collect();
        let mut k = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = env[i] * env[j] * self.stationary_periodic((i + 1) as f64, (j + 1) as f64);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// `dK/d theta` on the grid for every hyperparameter, ordered
    /// `[sigma_a, ell, a_0..=a_C, b_1..=b_C]`.
    pub fn gram_gradients(&self) -> Vec<DMatrix<f64>> {
        let d = self.period;
        let mut out = vec![DMatrix::zeros(d, d); self.n_params()];
        let n_a = self.a.len();
        for i in 0..d {
            for j in i..d {
                let g = self.kernel_gradients((i + 1) as f64, (j + 1) as f64);
                let vals = std::iter::once(g.d_sigma_a)
                    .chain(std::iter::once(g.d_ell))
                    .chain(g.d_a)
                    .chain(g.d_b);
                for (p, v) in vals.enumerate() {
                    out[p][(i, j)] = v;
                    out[p][(j, i)] = v;
                }
            }
        }
        debug_assert_eq!(out.len(), 2 + n_a + self.b.len());
        out
    }
}

/// Per-hour heteroscedastic noise, shared by all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Standard deviations `sigma_1..sigma_D`.
    pub sigma: Vec<f64>,
}

impl NoiseModel {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        let n = Self { sigma };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_empty() {
            return Err(Error::invalid("noise model needs at least one entry"));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("noise standard deviations must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Symmetric positive-definite covariance with its cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    values: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jittered: bool,
}

impl CovMatrix {
    /// Factorizes `values`. On failure, adds `1e-8 * trace / n` to the diagonal
    /// once and retries.
    pub fn from_matrix(mut values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n == 0 || n != values.ncols() {
            return Err(Error::invalid("covariance must be a non-empty square matrix"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                context: "non-finite covariance entry".into(),
            });
        }
        if let Some(chol) = Cholesky::new(values.clone()) {
            return Ok(Self {
                values,
                chol,
                jittered: false,
            });
        }
        let jitter = 1e-8 * values.trace() / n as f64;
        for i in 0..n {
            values[(i, i)] += jitter;
        }
        match Cholesky::new(values.clone()) {
            Some(chol) => Ok(Self {
                values,
                chol,
                jittered: true,
            }),
            None => Err(Error::NotPositiveDefinite {
                context: format!("{n}x{n} matrix, jitter {jitter:.3e}"),
            }),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub fn jittered(&self) -> bool {
        self.jittered
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `log N(x | 0, Sigma)`.
    pub fn gaussian_ln_pdf(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        // Forward substitution gives L^-1 x, whose squared norm is the Mahalanobis term.
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(x)
            .expect("cholesky factor has a positive diagonal");
        -0.5 * (n * crate::math::LN_2PI + self.ln_det() + z.norm_squared())
    }
}

/// `Sigma = K + diag(sigma^2)` for one class.
pub fn build_covariance(hp: &KernelHyperparams, noise: &NoiseModel) -> Result<CovMatrix> {
    if noise.len() != hp.period {
        return Err(Error::invalid(format!(
            "noise length {} does not match kernel period {}",
            noise.len(),
            hp.period
        )));
    }
    let mut k = hp.gram();
    for (i, s) in noise.sigma.iter().enumerate() {
        k[(i, i)] += s * s;
    }
    CovMatrix::from_matrix(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hp(rng: &mut impl Rng, order: usize, period: usize) -> KernelHyperparams {
        let a = (0..=order).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b = (0..order).map(|_| rng.random_range(-1.5..1.5)).collect();
        KernelHyperparams::new(
            a,
            b,
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..2.0),
            period,
        )
        .unwrap()
    }

    // Straight-line transcriptions used as independent references.
    fn envelope_ref(a: &[f64], b: &[f64], d: f64, t: f64) -> f64 {
        let mut acc = a[0] / 2.0;
        for c in 1..a.len() {
            let arg = 2.0 * PI * (c as f64) * t / d;
            acc += a[c] * arg.cos() + b[c - 1] * arg.sin();
        }
        acc.powi(2)
    }

    fn stationary_ref(sa: f64, ell: f64, d: f64, t: f64, t2: f64) -> f64 {
        sa.powi(2) * (-2.0 * (PI * (t - t2).abs() / d).sin().powi(2) / ell.powi(2)).exp()
    }

    #[test]
    fn envelope_constant_and_zero_series() {
        let hp = KernelHyperparams::new(vec![2.0, 0.0, 0.0, 0.0], vec![0.0; 3], 1.0, 1.0, 24).unwrap();
        for t in 1..=24 {
            assert!((hp.fourier_envelope(t as f64) - 1.0).abs() < 1e-15);
        }
        let zero = KernelHyperparams::new(vec![0.0; 4], vec![0.0; 3], 1.0, 1.0, 24).unwrap();
        assert_eq!(zero.fourier_envelope(7.0), 0.0);
        assert_eq!(zero.nonstationary_kernel(3.0, 9.0), 0.0);
    }

    #[test]
    fn envelope_matches_frozen_value() {
        // (0.5 + 0.5 cos(pi/2) + 0.3 sin(pi/2))^2 = 0.8^2, evaluated independently.
        let hp = KernelHyperparams::new(vec![1.0, 0.5, 0.0, 0.0], vec![0.3, 0.0, 0.0], 1.0, 1.0, 24)
            .unwrap();
        let v = hp.fourier_envelope(6.0);
        assert!((v - 0.64).abs() < 1e-12, "{v}");
        assert!((v - envelope_ref(&hp.a, &hp.b, 24.0, 6.0)).abs() < 1e-14);
    }

    #[test]
    fn stationary_part_identities() {
        let hp = KernelHyperparams::flat(3, 1.7, 0.9, 24).unwrap();
        assert!((hp.stationary_periodic(5.0, 5.0) - 1.7f64.powi(2)).abs() < 1e-14);
        assert!((hp.stationary_periodic(5.0, 29.0) - 1.7f64.powi(2)).abs() < 1e-12);
        // sigma_a = 1, ell = 1, D = 24, |t - t2| = 6: exp(-2 sin^2(pi/4)) = exp(-1).
        let unit = KernelHyperparams::flat(3, 1.0, 1.0, 24).unwrap();
        assert!((unit.stationary_periodic(1.0, 7.0) - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn gram_matches_reference_transcription() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hp = random_hp(&mut rng, 3, 24);
        let k = hp.gram();
        for i in 1..=24 {
            for j in 1..=24 {
                let (ti, tj) = (i as f64, j as f64);
                let r = envelope_ref(&hp.a, &hp.b, 24.0, ti)
                    * envelope_ref(&hp.a, &hp.b, 24.0, tj)
                    * stationary_ref(hp.sigma_a, hp.ell, 24.0, ti, tj);
                assert!((k[(i - 1, j - 1)] - r).abs() < 1e-12 * (1.0 + r.abs()));
            }
        }
    }

    #[test]
    fn zero_envelope_covariance_is_noise() {
        let hp = KernelHyperparams::new(vec![0.0; 4], vec![0.0; 3], 1.0, 1.0, 6).unwrap();
        let cov = build_covariance(&hp, &NoiseModel::new(vec![1.0; 6]).unwrap()).unwrap();
        assert_eq!(cov.values(), &DMatrix::identity(6, 6));
        let g = hp.kernel_gradients(2.0, 5.0);
        assert_eq!(g.d_ell, 0.0);
    }

    #[test]
    fn ell_gradient_vanishes_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hp = random_hp(&mut rng, 3, 24);
        assert_eq!(hp.kernel_gradients(4.0, 4.0).d_ell, 0.0);
    }

    #[test]
    fn noise_length_mismatch_is_rejected() {
        let hp = KernelHyperparams::flat(2, 1.0, 1.0, 5).unwrap();
        let noise = NoiseModel::new(vec![1.0; 4]).unwrap();
        assert!(build_covariance(&hp, &noise).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        assert!(KernelHyperparams::new(vec![1.0], vec![], 0.0, 1.0, 4).is_err());
        assert!(KernelHyperparams::new(vec![1.0], vec![], 1.0, -1.0, 4).is_err());
        assert!(KernelHyperparams::new(vec![1.0, 0.0], vec![], 1.0, 1.0, 4).is_err());
        assert!(KernelHyperparams::flat(5, 1.0, 1.0, 4).is_err());
        assert!(NoiseModel::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn singular_matrix_fails_after_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            CovMatrix::from_matrix(m),
            Err(Error::NotPositiveDefinite { .. })
        ));
        // Rank-deficient but PSD: one jitter step rescues it.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let cov = CovMatrix::from_matrix(m).unwrap();
        assert!(cov.jittered());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let h = 1e-6;
        let mut checked = 0;
        for _ in 0..50 {
            let hp = random_hp(&mut rng, 3, 24);
            let t = rng.random_range(1..=24) as f64;
            let t2 = rng.random_range(1..=24) as f64;
            let g = hp.kernel_gradients(t, t2);
            let analytic: Vec<f64> = [g.d_sigma_a, g.d_ell]
                .into_iter()
                .chain(g.d_a.clone())
                .chain(g.d_b.clone())
                .collect();
            for (p, an) in analytic.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut q = hp.clone();
                    match p {
                        0 => q.sigma_a += delta,
                        1 => q.ell += delta,
                        p if p < 2 + q.a.len() => q.a[p - 2] += delta,
                        p => {
                            let n = q.a.len();
                            q.b[p - 2 - n] += delta
                        }
                    }
                    q.nonstationary_kernel(t, t2)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                if an.abs() > 1e-8 {
                    let rel = (an - fd).abs() / an.abs().max(fd.abs());
                    assert!(rel < 1e-5, "param {p}: analytic {an} fd {fd}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 200);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn kernel_is_symmetric(seed in any::<u64>(), t in 1u32..=24, t2 in 1u32..=24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hp = random_hp(&mut rng, 3, 24);
            let (t, t2) = (t as f64, t2 as f64);
            prop_assert_eq!(hp.nonstationary_kernel(t, t2), hp.nonstationary_kernel(t2, t));
        }

        #[test]
        fn stationary_part_is_periodic(seed in any::<u64>(), t in 1u32..=24, t2 in 1u32..=24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hp = random_hp(&mut rng, 2, 24);
            let (t, t2) = (t as f64, t2 as f64);
            let a = hp.stationary_periodic(t, t2);
            let b = hp.stationary_periodic(t + 24.0, t2);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn covariance_spectrum_bounded_by_noise(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hp = random_hp(&mut rng, 3, 12);
            let sigma: Vec<f64> = (0..12).map(|_| rng.random_range(0.2..1.0)).collect();
            let min_var = sigma.iter().map(|s| s * s).fold(f64::INFINITY, f64::min);
            let noise = NoiseModel::new(sigma).unwrap();
            let k_eigs = hp.gram().symmetric_eigenvalues();
            prop_assert!(k_eigs.min() >= -1e-8);
            let cov = build_covariance(&hp, &noise).unwrap();
            let eigs = cov.values().clone().symmetric_eigenvalues();
            prop_assert!(eigs.min() >= min_var - 1e-8);
            let l = cov.cholesky_factor();
            let rebuilt = &l * l.transpose();
            prop_assert!((rebuilt - cov.values()).abs().max() < 1e-10);
        }
    }
}
