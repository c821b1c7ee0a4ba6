//! Dense matrices, elementwise math and the seeded random streams the rest of
//! the crate builds on. Everything is `f64`.

mod particles;
mod rng;
mod tensor;

pub use particles::{pairwise_distances, ParticleSet};
pub use rng::{gaussian, RngState, Stream};
pub use tensor::{dot, matmul, norm, softmax_in_place, softmax_rows, sq_dist, Tensor2};
