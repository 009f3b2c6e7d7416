//! Shared numerical kernels: dense matrices, the matrix exponential, a small
//! MLP with hand-written backpropagation, seeded randomness and a
//! finite-difference gradient oracle.

mod expm;
mod fdcheck;
mod matrix;
mod mlp;
mod optim;
mod rng;

pub use expm::mat_exp;
pub use fdcheck::fd_gradient_check;
pub use matrix::{dot, norm, DenseMatrix, LuDecomposition};
pub use mlp::{Activation, Mlp, MlpCache, MlpGrads};
pub use optim::AdamW;
pub use rng::SeededRng;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("matrix is singular")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error: {0}")]
    Parse(String),
}
