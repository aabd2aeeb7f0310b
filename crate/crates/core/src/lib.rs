//! Spatiotemporal wavelet analysis of weekly event counts.
//!
//! The pipeline bins point events into weekly per-region counts, filters the
//! counts, takes a Morlet wavelet transform per region, tests the power
//! against a red-noise background and summarises how often and for how long
//! each region shows significant circannual activity.

pub mod analysis;
pub mod compose;
pub mod error;
pub mod geo;
pub mod ingest;
pub mod partition;
pub mod preprocess;
pub mod significance;
pub mod synth;
pub mod wavelet;
pub mod waves;

pub use error::{Error, Result};
