//! Benchmark fixtures shared by the criterion targets.

use valleyscope::chimera::{embed_rbm, ChimeraGraph, IsingProblem};
use valleyscope::rng::stream_rng;
use valleyscope::RbmParams;

/// A digit-sized model: 64 visible and 64 hidden units, weights in [-0.5, 0.5].
pub fn digit_model(seed: u64) -> RbmParams {
    RbmParams::random_uniform(64, 64, 0.5, &mut stream_rng(seed, 0))
}

/// `digit_model` embedded on the 16 x 16 lattice with half-cells of 4.
pub fn digit_problem(seed: u64) -> IsingProblem {
    let graph = ChimeraGraph::new(16, 16, 4).expect("valid lattice");
    embed_rbm(&digit_model(seed), &graph, 1.0)
        .expect("model fits")
        .0
}
