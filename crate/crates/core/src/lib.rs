//! Rotation averaging on SO(3)^n under the geodesic l_p cost.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`so3`]: rotation primitives (exp/log, metrics, Haar sampling).
//! * [`graphmodel`]: view graphs, synthetic instances and their JSON files.
//! * [`cost`]: the l_p cost, its Riemannian gradient and exact Hessian.
//! * [`solver`]: damped Newton on the horizontal space and random restarts.
//! * [`gauge`]: vertical/horizontal spaces, alignment, quotient distance.
//! * [`certify`]: projected-Hessian convexity test and Laplacian bounds.
//! * [`atlas`]: deduplication, diffusion-map embedding and noise sweeps.
//! * [`numerics`]: dense symmetric eigensolver and polar projection.

// parameter checks use `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod certify;
pub mod cost;
pub mod error;
pub mod gauge;
pub mod graphmodel;
pub mod numerics;
pub mod so3;
pub mod solver;

pub use error::{Error, Result};
pub use graphmodel::{NoiseSpec, Solution, Topology, ViewGraph};
pub use so3::{Rotation, TangentVector};

use rand_chacha::rand_core::SeedableRng;

/// Seedable random source used by every generator in the crate.
pub type RandomSource = rand_chacha::ChaCha8Rng;

/// Creates a random source from a seed.
pub fn rng_from_seed(seed: u64) -> RandomSource {
    RandomSource::seed_from_u64(seed)
}

/// Derives an independent stream for one unit of work (a restart, a sweep cell).
pub fn rng_for_stream(seed: u64, stream: u64) -> RandomSource {
    let mut rng = RandomSource::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}
