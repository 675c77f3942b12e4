//! Structural evaluations of a representation: closest-word agreement,
//! depth correlation, lexical match, high-entropy POS filtering, k-means
//! cluster purity and a few-shot dependency-label probe.

mod kmeans;
mod nn;
mod probe;
mod stats;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sylinear::{dot, LinearMap, ModelError};
use crate::vecstore::Dataset;

pub use kmeans::{kmeans, kmeans_purity, kmeans_purity_points, kmeans_purity_with, purity_from_assignments, KMeansResult};
pub use nn::{nn_agreement, nn_outcome, nn_queries, select_queries, summarize, NnOutcome, QueryResult};
pub use probe::{probe_fewshot, ProbeConfig, ProbeReport};
pub use stats::{dep_label_entropy, entropy, hard_subset, pearson, Pearson};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset lacks {0} annotations")]
    MissingAnnotations(&'static str),
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("k = {k} exceeds the {n} clustered points")]
    TooManyClusters { k: usize, n: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid evaluation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which candidates a query may not retrieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exclusion {
    /// Only the query token itself.
    #[serde(rename = "self")]
    SelfToken,
    /// Any token of the query's sentence.
    #[default]
    Sentence,
    /// Any token of the query's equivalence group.
    Group,
}

impl std::str::FromStr for Exclusion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "self" => Ok(Exclusion::SelfToken),
            "sentence" => Ok(Exclusion::Sentence),
            "group" => Ok(Exclusion::Group),
            other => Err(format!("unknown exclusion {other:?}; expected self, sentence or group")),
        }
    }
}

impl std::fmt::Display for Exclusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Exclusion::SelfToken => "self",
            Exclusion::Sentence => "sentence",
            Exclusion::Group => "group",
        })
    }
}

/// Serializable evaluation settings; the transform is passed separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_queries: usize,
    pub exclusion: Exclusion,
    /// Restrict queries to the this many highest-entropy POS tags; 0 = all.
    pub hard_top_pos: usize,
    pub kmeans_ks: Vec<usize>,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    /// Points sampled for clustering; 0 = every content token.
    pub purity_points: usize,
    pub probe_sizes: Vec<usize>,
    pub probe: ProbeConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_queries: 1000,
            exclusion: Exclusion::Sentence,
            hard_top_pos: 0,
            kmeans_ks: vec![10, 20, 40, 80],
            kmeans_iters: 100,
            kmeans_tol: 1e-6,
            purity_points: 5000,
            probe_sizes: vec![50, 100, 200, 500],
            probe: ProbeConfig::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_queries == 0 {
            return Err(EvalError::InvalidConfig("n_queries must be at least 1".into()));
        }
        if !(self.kmeans_tol.is_finite() && self.kmeans_tol >= 0.0) {
            return Err(EvalError::InvalidConfig("kmeans_tol must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub transformed: bool,
    pub exclusion: Exclusion,
    pub dep_edge: f64,
    pub head_dep_edge: f64,
    /// Constituency metrics are absent when the dataset has no trees.
    pub cpath_complete: Option<f64>,
    pub cpath_l3: Option<f64>,
    pub cpath_l2: Option<f64>,
    pub depth_pearson: f64,
    pub depth_pearson_degenerate: bool,
    pub lexical_match: f64,
    pub n_queries_requested: usize,
    pub n_queries_used: usize,
    pub n_queries_skipped: usize,
    /// POS tags queries were restricted to; empty = all.
    pub hard_pos: Vec<String>,
    pub purity: BTreeMap<usize, f64>,
    pub probe: BTreeMap<usize, f64>,
    pub probe_majority: Option<f64>,
}

/// Token-row vectors in the space being evaluated, promoted to `f64`, with
/// cached squared norms.
#[derive(Debug, Clone)]
pub struct Representation {
    dim: usize,
    data: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Representation {
    /// Raw store vectors, or their image under `transform`.
    pub fn of(d: &Dataset, transform: Option<&LinearMap>) -> Result<Self, EvalError> {
        let count = d.store.count();
        let (dim, data) = match transform {
            None => (d.dim(), d.store.as_slice().iter().map(|&v| v as f64).collect()),
            Some(f) => {
                if f.n() != d.dim() {
                    return Err(ModelError::DimMismatch {
                        expected: f.n(),
                        found: d.dim(),
                    }
                    .into());
                }
                let rows: Vec<Vec<f64>> = (0..count)
                    .into_par_iter()
                    .map(|r| f.forward_f32(d.store.row(r)))
                    .collect::<Result<_, _>>()?;
                (f.m(), rows.concat())
            }
        };
        Ok(Self::from_flat(dim, data))
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        let sq_norms = data
            .chunks_exact(dim)
            .map(|r| dot(r, r))
            .collect();
        Self { dim, data, sq_norms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sq_norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sq_norms.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn sq_norm(&self, r: usize) -> f64 {
        self.sq_norms[r]
    }
}

/// Runs every configured evaluation.
pub fn evaluate(d: &Dataset, transform: Option<&LinearMap>, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let mut report = nn_agreement(d, transform, cfg)?;
    if !cfg.kmeans_ks.is_empty() {
        report.purity = kmeans_purity(d, transform, cfg)?;
    }
    if !cfg.probe_sizes.is_empty() {
        let p = probe_fewshot(d, transform, &cfg.probe_sizes, cfg.seed, &cfg.probe)?;
        report.probe = p.accuracy;
        report.probe_majority = Some(p.majority_baseline);
    }
    Ok(report)
}
