//! Training material: word-pair samples, mini-batches and hard negatives.

use std::collections::{HashSet, VecDeque};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sylinear::{cosine_from_parts, dot};
use crate::vecstore::Dataset;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("dataset has no group with two sentences and two content words")]
    NoUsableGroups,
    #[error("every batch entry belongs to the same group")]
    NoValidNegative,
    #[error("batch size must be at least 2, got {0}")]
    InvalidBatchSize(usize),
    #[error("{vectors} vectors but {groups} group ids")]
    LengthMismatch { vectors: usize, groups: usize },
    #[error("sentence {sent_id} has no token at position {tok_idx}")]
    MissingToken { sent_id: u64, tok_idx: usize },
}

/// Two corresponding word pairs from sentences of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSample {
    pub group_id: u64,
    pub anchor_sent: u64,
    pub positive_sent: u64,
    pub i1: usize,
    pub i2: usize,
    /// Store rows of the anchor's tokens at `i1` and `i2`.
    pub anchor_rows: [usize; 2],
    pub positive_rows: [usize; 2],
}

impl PairSample {
    /// The (positive, anchor) counterpart.
    pub fn swapped(&self) -> Self {
        Self {
            anchor_sent: self.positive_sent,
            positive_sent: self.anchor_sent,
            anchor_rows: self.positive_rows,
            positive_rows: self.anchor_rows,
            ..*self
        }
    }
}

/// One optimizer step's worth of pair samples. Entry `i`'s negative is the
/// anchor pair of entry `negative_index[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub entries: Vec<PairSample>,
    /// Empty until mined.
    pub negative_index: Vec<usize>,
}

impl TripletBatch {
    pub fn new(entries: Vec<PairSample>) -> Self {
        Self {
            entries,
            negative_index: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_mined(&self) -> bool {
        self.negative_index.len() == self.entries.len()
    }

    pub fn group_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.group_id).collect()
    }

    pub fn anchors(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.entries.iter().map(|e| e.anchor_rows)
    }

    pub fn positives(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        self.entries.iter().map(|e| e.positive_rows)
    }

    /// Number of distinct groups; mining needs at least two.
    pub fn distinct_groups(&self) -> usize {
        self.entries.iter().map(|e| e.group_id).collect::<HashSet<_>>().len()
    }
}

/// Decodes `k` in `0..n*(n-1)` into an ordered pair of distinct indices.
fn ordered_pair(k: usize, n: usize) -> (usize, usize) {
    let a = k / (n - 1);
    let b = k % (n - 1);
    (a, if b >= a { b + 1 } else { b })
}

/// Draws up to `pairs_per_group` distinct samples per usable group, uniformly
/// without replacement over (ordered sentence pair) × (ordered index pair).
pub fn sample_pairs(d: &Dataset, pairs_per_group: usize, seed: u64) -> Result<Vec<PairSample>, SamplerError> {
    let position = d.position_index();
    let row_of = |sent_id: u64, tok_idx: usize| {
        position
            .get(&(sent_id, tok_idx))
            .map(|&t| d.tokens[t].row)
            .ok_or(SamplerError::MissingToken { sent_id, tok_idx })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut usable = 0;
    for g in d.usable_groups() {
        usable += 1;
        let v = g.sentence_ids.len();
        let c = g.content_indices.len();
        let index_pairs = c * (c - 1);
        let total = v * (v - 1) * index_pairs;
        let take = pairs_per_group.min(total);
        for k in index::sample(&mut rng, total, take).into_iter() {
            let (sa, sp) = ordered_pair(k / index_pairs, v);
            let (ia, ib) = ordered_pair(k % index_pairs, c);
            let (anchor_sent, positive_sent) = (g.sentence_ids[sa], g.sentence_ids[sp]);
            let (i1, i2) = (g.content_indices[ia], g.content_indices[ib]);
            out.push(PairSample {
                group_id: g.group_id,
                anchor_sent,
                positive_sent,
                i1,
                i2,
                anchor_rows: [row_of(anchor_sent, i1)?, row_of(anchor_sent, i2)?],
                positive_rows: [row_of(positive_sent, i1)?, row_of(positive_sent, i2)?],
            });
        }
    }
    if usable == 0 {
        return Err(SamplerError::NoUsableGroups);
    }
    Ok(out)
}

/// Shuffles samples and cuts them into batches whose group ids are distinct.
/// A sample whose group is already present waits for a later batch. With
/// `symmetry`, each batch is followed by the swapped copy of every entry, so
/// entry `len + i` is entry `i` with anchor and positive exchanged.
pub fn build_batches(
    samples: &[PairSample],
    batch_size: usize,
    symmetry: bool,
    seed: u64,
) -> Result<Vec<TripletBatch>, SamplerError> {
    if batch_size < 2 {
        return Err(SamplerError::InvalidBatchSize(batch_size));
    }
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut pending: VecDeque<PairSample> = shuffled.into();

    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut entries = Vec::with_capacity(batch_size);
        let mut seen = HashSet::with_capacity(batch_size);
        let mut deferred = VecDeque::new();
        while entries.len() < batch_size {
            let Some(s) = pending.pop_front() else { break };
            if seen.insert(s.group_id) {
                entries.push(s);
            } else {
                deferred.push_back(s);
            }
        }
        deferred.extend(pending);
        pending = deferred;
        if symmetry {
            let swapped: Vec<_> = entries.iter().map(PairSample::swapped).collect();
            entries.extend(swapped);
        }
        batches.push(TripletBatch::new(entries));
    }
    Ok(batches)
}

/// For each anchor, the index of the closest anchor (cosine distance) from a
/// different group. Ties go to the smallest index.
pub fn mine_hard_negatives(anchors: &[Vec<f64>], group_ids: &[u64]) -> Result<Vec<usize>, SamplerError> {
    if anchors.len() != group_ids.len() {
        return Err(SamplerError::LengthMismatch {
            vectors: anchors.len(),
            groups: group_ids.len(),
        });
    }
    if group_ids.iter().collect::<HashSet<_>>().len() < 2 {
        return Err(SamplerError::NoValidNegative);
    }
    let sq_norms: Vec<f64> = anchors.iter().map(|v| dot(v, v)).collect();
    let mined = (0..anchors.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..anchors.len() {
                if group_ids[j] == group_ids[i] {
                    continue;
                }
                let d = cosine_from_parts(dot(&anchors[i], &anchors[j]), sq_norms[i], sq_norms[j]).value;
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    Ok(mined)
}
