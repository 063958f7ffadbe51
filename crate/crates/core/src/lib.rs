//! Candidate-aware user modeling for news recommendation.
//!
//! The crate covers the full pipeline: MIND-format ingestion ([`data`]), a
//! small reverse-mode autodiff engine ([`autodiff`]), the news and user
//! encoders ([`model`]), BPR training ([`train`]), ranking metrics
//! ([`metrics`]) and an inference scorer that shares per-user work across
//! candidates ([`scorer`]).

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod scorer;
pub mod train;

pub use error::{Error, Result};
