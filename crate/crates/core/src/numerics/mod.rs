//! Dense tensors, stable kernels and the seeded random source.

mod kernels;
mod rng;
mod tensor;

pub(crate) use kernels::row_norm;
pub use kernels::{l2_normalize_rows, log_softmax_rows, matmul, row_softmax};
pub use rng::Rng;
pub use tensor::Tensor;
