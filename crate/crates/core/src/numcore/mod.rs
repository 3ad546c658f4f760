//! Dense linear algebra, seeded randomness and parameter initialization.

mod init;
mod matrix;
mod rng;

pub use init::{dropout_mask, he_init};
pub use matrix::{log_softmax_rows, matmul, relu, relu_backward, softmax_rows, Matrix};
pub use rng::RngState;
