//! Experiment driver over `valleyscope`: configuration, sampling backends,
//! pipeline steps, report writing and SVG plotting.

// `!(x > 0.0)` is the NaN-rejecting form of every range check here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;
pub mod report;

pub use config::ExperimentConfig;
