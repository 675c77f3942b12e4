//! The linear structural map, cosine distance, softmax triplet loss with its
//! analytic gradient, and Adam.
//!
//! All parameters and arithmetic are `f64`; token vectors are promoted from
//! their `f32` storage form when read.

mod adam;
mod loss;
mod map;

use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    batch_loss_grad, cosine_distance, loss_grad_from_vectors, triplet_loss, BatchVectors, CosineDistance, LossGrad,
    DEGENERATE_NORM,
};
pub(crate) use loss::cosine_from_parts;
pub use map::{dot, init_map, LinearMap, Matrix, SMAP_HEADER_LEN, SMAP_MAGIC, SMAP_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid map dimensions n={n}, m={m}")]
    InvalidDims { n: usize, m: usize },
    #[error("batch has not been mined")]
    UnminedBatch,
    #[error("row {0} is outside the vector store")]
    RowOutOfRange(usize),
    #[error("non-finite weight")]
    NonFinite,
    #[error("invalid optimizer hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("bad magic bytes {found:?}, expected \"SMAP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported SMAP version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
