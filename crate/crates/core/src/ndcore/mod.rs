//! Dense numeric core: rank-1/2 tensors with fixed-order reductions, and
//! seeded random streams.

mod rng;
mod tensor;

pub use rng::{fnv1a64, RngStream};
pub use tensor::{elementwise, matmul, matmul_nt, matmul_tn, uniform_init, Real, Tensor};
