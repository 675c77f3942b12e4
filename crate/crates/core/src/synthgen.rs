//! Synthetic equivalence-set datasets with known structural and lexical
//! factors.
//!
//! Every token vector is
//!
//! ```text
//! x = struct_scale · A s + lex_scale · B m + noise_scale · ε
//! ```
//!
//! where `s` is the structural code of the token's position (shared by all
//! variants of a group), `m` the code of the word filling that position in
//! one variant, and `A`, `B` dense Gaussian mixing matrices drawn once per
//! dataset. A position's structural code is its class prototype plus a
//! group-specific jitter; the class fixes the dependency label, head label,
//! depth and the POS tags the position may carry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vecstore::{Dataset, TokenRecord, VecStoreError, VectorStore};

const POS_TAGS: [&str; 6] = ["NOUN", "VERB", "ADJ", "ADV", "PROPN", "NUM"];
const DEPTH_CLASSES: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Store(#[from] VecStoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_groups: usize,
    pub variants_per_group: usize,
    pub sent_len: usize,
    pub dim_struct: usize,
    pub dim_lex: usize,
    pub dim_out: usize,
    pub struct_scale: f64,
    pub lex_scale: f64,
    pub noise_scale: f64,
    pub n_dep_labels: usize,
    /// Number of distinct words.
    pub vocab_size: usize,
    /// Spread of a position's structural code around its class prototype.
    pub class_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_groups: 2000,
            variants_per_group: 4,
            sent_len: 8,
            dim_struct: 10,
            dim_lex: 40,
            dim_out: 128,
            struct_scale: 1.0,
            lex_scale: 3.0,
            noise_scale: 0.1,
            n_dep_labels: 8,
            vocab_size: 16000,
            class_jitter: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_groups == 0 || self.variants_per_group == 0 || self.sent_len == 0 {
            return err("n_groups, variants_per_group and sent_len must be positive");
        }
        if self.dim_struct == 0 || self.dim_lex == 0 || self.dim_out == 0 {
            return err("dimensions must be positive");
        }
        if self.dim_out > u32::MAX as usize {
            return err("dim_out exceeds the vector file limit");
        }
        for (name, v) in [
            ("struct_scale", self.struct_scale),
            ("lex_scale", self.lex_scale),
            ("noise_scale", self.noise_scale),
            ("class_jitter", self.class_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(&format!("{name} must be finite and non-negative"));
            }
        }
        if self.n_dep_labels < 2 {
            return err("n_dep_labels must be at least 2");
        }
        if self.vocab_size == 0 {
            return err("vocab_size must be positive");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `rows × cols` matrix with N(0, 1/cols) entries, so `‖M z‖² ≈ rows` for a
/// standard normal `z`.
fn mixing(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    gaussian(rng, rows * cols, 1.0 / (cols as f64).sqrt())
}

fn matvec_into(out: &mut [f64], mat: &[f64], x: &[f64], scale: f64) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &mat[r * cols..(r + 1) * cols];
        *o += scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

pub fn dep_label(class: usize) -> String {
    format!("dep{class}")
}

struct Factors {
    a: Vec<f64>,
    b: Vec<f64>,
    prototypes: Vec<Vec<f64>>,
    lexicon: Vec<Vec<f64>>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factors = Factors {
        a: mixing(&mut rng, cfg.dim_out, cfg.dim_struct),
        b: mixing(&mut rng, cfg.dim_out, cfg.dim_lex),
        prototypes: (0..cfg.n_dep_labels)
            .map(|_| gaussian(&mut rng, cfg.dim_struct, 1.0))
            .collect(),
        lexicon: (0..cfg.vocab_size)
            .map(|_| gaussian(&mut rng, cfg.dim_lex, 1.0))
            .collect(),
    };

    let per_group: Vec<(Vec<TokenRecord>, Vec<f32>)> = (0..cfg.n_groups)
        .into_par_iter()
        .map(|g| generate_group(cfg, &factors, g))
        .collect();

    let mut tokens = Vec::with_capacity(cfg.n_groups * cfg.variants_per_group * cfg.sent_len);
    let mut data = Vec::with_capacity(tokens.capacity() * cfg.dim_out);
    for (t, d) in per_group {
        tokens.extend(t);
        data.extend(d);
    }
    let store = VectorStore::new(cfg.dim_out, data)?;
    Ok(Dataset::new(store, tokens, false, true)?)
}

fn generate_group(cfg: &SynthConfig, f: &Factors, g: usize) -> (Vec<TokenRecord>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(g as u64 + 1);

    let positions: Vec<(usize, &'static str, Vec<f64>)> = (0..cfg.sent_len)
        .map(|_| {
            let class = rng.random_range(0..cfg.n_dep_labels);
            let pos = POS_TAGS[(class + rng.random_range(0..2)) % POS_TAGS.len()];
            let code = f.prototypes[class]
                .iter()
                .zip(gaussian(&mut rng, cfg.dim_struct, cfg.class_jitter))
                .map(|(p, j)| p + j)
                .collect();
            (class, pos, code)
        })
        .collect();
    let structural: Vec<Vec<f64>> = positions
        .iter()
        .map(|(_, _, s)| {
            let mut out = vec![0.0; cfg.dim_out];
            matvec_into(&mut out, &f.a, s, cfg.struct_scale);
            out
        })
        .collect();

    let base_row = g * cfg.variants_per_group * cfg.sent_len;
    let mut tokens = Vec::with_capacity(cfg.variants_per_group * cfg.sent_len);
    let mut data = Vec::with_capacity(tokens.capacity() * cfg.dim_out);
    for v in 0..cfg.variants_per_group {
        let sent_id = (g * cfg.variants_per_group + v) as u64;
        for (i, (class, pos, _)) in positions.iter().enumerate() {
            let word = rng.random_range(0..cfg.vocab_size);
            let mut x = structural[i].clone();
            matvec_into(&mut x, &f.b, &f.lexicon[word], cfg.lex_scale);
            if cfg.noise_scale > 0.0 {
                for (xi, e) in x.iter_mut().zip(gaussian(&mut rng, cfg.dim_out, cfg.noise_scale)) {
                    *xi += e;
                }
            }
            data.extend(x.iter().map(|&v| v as f32));
            tokens.push(TokenRecord {
                group_id: g as u64,
                sent_id,
                variant: v as u32,
                tok_idx: i,
                form: format!("w{word}"),
                lex_id: word as u64,
                pos: pos.to_string(),
                is_function: false,
                dep: dep_label(*class),
                head_dep: dep_label((class + 1) % cfg.n_dep_labels),
                depth: (class % DEPTH_CLASSES) as i64,
                cpath: Vec::new(),
                row: base_row + v * cfg.sent_len + i,
            });
        }
    }
    (tokens, data)
}
