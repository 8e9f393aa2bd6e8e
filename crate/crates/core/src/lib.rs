// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online change-point detection on sequences of latent-class posteriors,
//! together with the circadian mixture model that produces them.

#![forbid(unsafe_code)]

pub mod error;
pub mod formats;
pub mod kernel;
pub mod math;
pub mod detector;
pub mod ingest;
pub mod mixture;
pub mod oracle;
pub mod simulate;

pub use error::{Error, Result};
