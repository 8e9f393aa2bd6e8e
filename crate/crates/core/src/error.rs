// SPDX-License-Identifier: MIT OR Apache-2.0

use thiserror::Error;

/// Errors raised across the modelling, detection and ingest pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive definite after jitter ({context})")]
    NotPositiveDefinite { context: String },

    #[error("all class responsibilities underflowed for observation {index}")]
    DegenerateResponsibility { index: usize },

    #[error("every EM initialization failed; last error: {last}")]
    AllRunsFailed { last: String },

    #[error("run-length joint underflowed to -inf at step {step}")]
    NumericalUnderflow { step: usize },

    #[error("MH sampler stuck: {block} acceptance rate {rate:.2e} below threshold")]
    SamplerStuck { block: &'static str, rate: f64 },

    #[error("instance too large for exact enumeration: {0}")]
    InstanceTooLarge(String),

    #[error("no nocturnal location fixes available for home estimation")]
    NoNocturnalData,

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Self::NotPositiveDefinite { .. }
                | Self::DegenerateResponsibility { .. }
                | Self::AllRunsFailed { .. }
                | Self::NumericalUnderflow { .. }
                | Self::SamplerStuck { .. }
                | Self::InstanceTooLarge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
