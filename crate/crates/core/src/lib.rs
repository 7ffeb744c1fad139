//! Periodicity-aware conditional normalizing flows for multivariate
//! time-series anomaly detection.

pub mod causal;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod mpcf;
pub mod numeric;
pub mod pacm;
pub mod pcmask;
pub mod penf;
pub mod series;
pub mod spectral;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
