//! Epoch loop: shuffle, batch, mine under the current map, step Adam.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::{self, build_batches, mine_hard_negatives, sample_pairs, PairSample, SamplerError};
use crate::sylinear::{adam_step, init_map, loss_grad_from_vectors, AdamConfig, AdamState, BatchVectors, LinearMap, ModelError};
use crate::vecstore::Dataset;

pub const FINAL_MAP_FILE: &str = "map.smap";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub pairs_per_group: usize,
    pub symmetry: bool,
    pub out_dim: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Log every this many batches; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 500,
            pairs_per_group: 11,
            symmetry: true,
            out_dim: 75,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: 1,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.out_dim == 0 {
            return Err(TrainError::InvalidConfig("out_dim must be at least 1".into()));
        }
        if self.pairs_per_group == 0 {
            return Err(TrainError::InvalidConfig("pairs_per_group must be at least 1".into()));
        }
        self.adam.validate().map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Entry-weighted mean loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Entries skipped per epoch: degenerate pair vectors plus entries of
    /// batches that held a single group.
    pub skipped: Vec<usize>,
    pub steps: u64,
    pub n_samples: usize,
    pub final_map_path: Option<PathBuf>,
    pub wall_time_secs: f64,
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SAMPLES: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_EPOCH: u64 = 1000;

/// The pair samples [`train`] draws for `cfg`.
pub fn training_samples(d: &Dataset, cfg: &TrainConfig) -> Result<Vec<PairSample>, TrainError> {
    Ok(sample_pairs(d, cfg.pairs_per_group, derive_seed(cfg.seed, STREAM_SAMPLES))?)
}

pub fn train(d: &Dataset, cfg: &TrainConfig) -> Result<(LinearMap, TrainReport), TrainError> {
    train_to(d, cfg, None)
}

/// Trains and, when `out_dir` is given, writes epoch checkpoints
/// (`map.epoch{N}.smap`) and the final map ([`FINAL_MAP_FILE`]).
pub fn train_to(d: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<(LinearMap, TrainReport), TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let samples = training_samples(d, cfg)?;
    let mut map = init_map(d.dim(), cfg.out_dim, derive_seed(cfg.seed, STREAM_INIT))?;
    let mut adam = AdamState::for_map(&map, cfg.adam)?;
    info!(
        "training {}→{} map on {} pair samples from {} usable groups",
        map.n(),
        map.m(),
        samples.len(),
        d.usable_groups().count()
    );

    let mut report = TrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        skipped: Vec::with_capacity(cfg.epochs),
        steps: 0,
        n_samples: samples.len(),
        final_map_path: None,
        wall_time_secs: 0.0,
    };
    for epoch in 0..cfg.epochs {
        let batches = build_batches(
            &samples,
            cfg.batch_size,
            cfg.symmetry,
            derive_seed(cfg.seed, STREAM_EPOCH + epoch as u64),
        )?;
        let (mut loss_sum, mut entries, mut skipped) = (0.0, 0usize, 0usize);
        for (b, mut batch) in batches.into_iter().enumerate() {
            if batch.distinct_groups() < 2 {
                skipped += batch.len();
                continue;
            }
            let vectors = BatchVectors::compute(&map, &d.store, &batch)?;
            batch.negative_index = mine_hard_negatives(&vectors.anchors, &batch.group_ids())?;
            let lg = loss_grad_from_vectors(&map, &vectors, &batch)?;
            (map, adam) = adam_step(&map, &adam, &lg.grad)?;
            loss_sum += lg.loss * batch.len() as f64;
            entries += batch.len();
            skipped += lg.skipped;
            if cfg.log_every > 0 && b % cfg.log_every == 0 {
                debug!("epoch {} batch {} loss {:.6}", epoch + 1, b, lg.loss);
            }
        }
        let mean = if entries == 0 { 0.0 } else { loss_sum / entries as f64 };
        info!("epoch {}: mean loss {:.6}, skipped {}", epoch + 1, mean, skipped);
        report.epoch_loss.push(mean);
        report.skipped.push(skipped);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                map.write(&dir.join(checkpoint_name(epoch + 1)))?;
            }
        }
    }
    report.steps = adam.step;
    if let Some(dir) = out_dir {
        let path = dir.join(FINAL_MAP_FILE);
        map.write(&path)?;
        report.final_map_path = Some(path);
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((map, report))
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("map.epoch{epoch}.smap")
}

/// Mean loss of `map` over one mined pass of the given samples; used to
/// compare maps on equal footing.
pub fn evaluate_loss(
    d: &Dataset,
    map: &LinearMap,
    samples: &[sampler::PairSample],
    batch_size: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let (mut sum, mut n) = (0.0, 0usize);
    for mut batch in build_batches(samples, batch_size, true, seed)? {
        if batch.distinct_groups() < 2 {
            continue;
        }
        let v = BatchVectors::compute(map, &d.store, &batch)?;
        batch.negative_index = mine_hard_negatives(&v.anchors, &batch.group_ids())?;
        sum += loss_grad_from_vectors(map, &v, &batch)?.loss * batch.len() as f64;
        n += batch.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
