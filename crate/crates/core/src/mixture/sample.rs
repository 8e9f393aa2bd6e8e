// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{HeteroObservation, MixtureParams};
use crate::error::{Error, Result};

/// Draws one complete observation per label (0-based class indices).
pub fn sample_synthetic(params: &MixtureParams, labels: &[usize], seed: u64) -> Result<Vec<HeteroObservation>> {
    params.validate()?;
    let k = params.n_classes();
    if let Some(bad) = labels.iter().find(|&&z| z >= k) {
        return Err(Error::invalid(format!("label {bad} out of range for K={k}")));
    }
    let factors: Vec<_> = params
        .covariances()?
        .iter()
        .map(|c| c.cholesky_factor())
        .collect();
    let d = params.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|&z| {
            let eps = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let real = &factors[z] * eps;
            let bits = params.bern_means[z]
                .iter()
                .map(|&mu| u8::from(rng.random_bool(mu)))
                .collect();
            HeteroObservation::complete(real.iter().copied().collect(), bits)
        })
        .collect()
}
