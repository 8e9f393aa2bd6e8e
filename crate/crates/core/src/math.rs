// SPDX-License-Identifier: MIT OR Apache-2.0

//! Log-space helpers shared by the mixture and detector code.

pub use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(values)))`; `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights in place into probabilities. Returns the log normalizer.
pub fn normalize_log_weights(log_w: &mut [f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    if lse.is_finite() {
        for v in log_w.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    lse
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
#[inline]
pub fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Log density of `Dir(z | alpha)`, given the precomputed `ln z`.
pub fn dirichlet_ln_pdf_from_logs(alpha: &[f64], ln_z: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    let mut out = ln_gamma(total);
    for (a, lz) in alpha.iter().zip(ln_z) {
        out += (a - 1.0) * lz - ln_gamma(*a);
    }
    out
}

/// Log density of `Dir(z | alpha)`.
pub fn dirichlet_ln_pdf(alpha: &[f64], z: &[f64]) -> f64 {
    let ln_z: Vec<f64> = z.iter().map(|v| v.ln()).collect();
    dirichlet_ln_pdf_from_logs(alpha, &ln_z)
}

/// Index of the largest element; first index wins ties. `None` when empty.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Draws from `Dir(alpha)` by normalizing independent `Gamma(alpha_k, 1)` variates.
pub fn sample_dirichlet<R: rand::Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let mut draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("Dirichlet concentration must be > 0").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every gamma variate underflowed (tiny concentrations); put the mass on one coordinate.
        let k = rng.random_range(0..draws.len());
        draws.iter_mut().enumerate().for_each(|(i, v)| *v = f64::from(u8::from(i == k)));
    }
    draws
}
