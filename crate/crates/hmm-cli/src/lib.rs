//! Batch front-end for the two-scale homogenization engine: benchmark
//! definitions, study orchestration and the acceptance suite behind the
//! `hmm-elast` binary.

pub mod acceptance;
pub mod benchmarks;
pub mod config;
pub mod studies;
