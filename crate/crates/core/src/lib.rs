//! Learning and evaluating a linear structural transformation of
//! contextualized word vectors.
//!
//! Pairs of corresponding words from structurally equivalent sentences are
//! pulled together, and hard negatives from other groups pushed apart, under
//! a softmax triplet loss on cosine distances of transformed pair
//! differences. The evaluation side measures whether nearest neighbours in
//! the transformed space share structural labels rather than lexical
//! identity.
//!
//! Modules, bottom-up:
//!
//! * [`vecstore`]: dataset model and the `SVEC` / JSON-lines formats.
//! * [`synthgen`]: synthetic datasets with known structural and lexical factors.
//! * [`sylinear`]: the linear map, loss, analytic gradient and Adam.
//! * [`sampler`]: pair sampling, batching and hard-negative mining.
//! * [`trainer`]: the epoch loop.
//! * [`structeval`]: nearest-neighbour agreement, purity and probing.

pub mod sampler;
pub mod structeval;
pub mod sylinear;
pub mod synthgen;
pub mod trainer;
pub mod vecstore;

pub use sampler::{PairSample, TripletBatch};
pub use structeval::{EvalConfig, EvalReport, Exclusion};
pub use sylinear::{AdamConfig, AdamState, LinearMap, Matrix};
pub use synthgen::SynthConfig;
pub use trainer::{TrainConfig, TrainReport};
pub use vecstore::{Dataset, EquivalenceGroup, TokenRecord, VectorStore};
