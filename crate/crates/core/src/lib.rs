//! Ising-convention Restricted Boltzmann Machines, their embedding into a
//! Chimera qubit lattice, annealer backends, and energy-landscape valley
//! analysis for comparing annealer samples with classical Gibbs samples.

// `!(x > 0.0)` is the NaN-rejecting form of every range check here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annealer;
pub mod chimera;
pub mod datasets;
pub mod error;
pub mod gibbs;
pub mod rbm;
pub mod rng;
pub mod valleys;

pub use error::{Error, Result};
pub use rbm::{GradientEstimate, RbmParams, Spin, SpinState};
