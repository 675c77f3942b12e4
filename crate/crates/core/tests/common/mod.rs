//! Builders and reference implementations shared by the integration tests.
//! The references are deliberately naive: plain loops, no shared helpers from
//! the crate under test.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use structdist::{Dataset, TokenRecord, VectorStore};

pub const LABELS: [&str; 5] = ["nsubj", "obj", "amod", "advmod", "obl"];

/// Value on a coarse dyadic grid. Sums and products of a few of these are
/// exact in `f64`, so every summation order yields the same bits.
pub fn grid_value(rng: &mut ChaCha8Rng) -> f32 {
    rng.random_range(-8i32..=8) as f32 / 4.0
}

pub struct DatasetShape {
    pub groups: usize,
    pub max_variants: usize,
    pub max_len: usize,
    pub dim: usize,
    pub with_function_words: bool,
    pub with_constituency: bool,
}

/// Random valid dataset on the dyadic grid. Rows are sequential in token
/// order; some rows are exact duplicates to force distance ties.
pub fn grid_dataset(rng: &mut ChaCha8Rng, shape: &DatasetShape) -> Dataset {
    let mut tokens = Vec::new();
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut sent_id = 0u64;
    for g in 0..shape.groups {
        let variants = rng.random_range(1..=shape.max_variants);
        let len = rng.random_range(1..=shape.max_len);
        let function: Vec<bool> = (0..len)
            .map(|_| shape.with_function_words && rng.random_bool(0.2))
            .collect();
        let deps: Vec<usize> = (0..len).map(|_| rng.random_range(0..LABELS.len())).collect();
        for v in 0..variants {
            for i in 0..len {
                let row = if !rows.is_empty() && rng.random_bool(0.05) {
                    rows[rng.random_range(0..rows.len())].clone()
                } else {
                    (0..shape.dim).map(|_| grid_value(rng)).collect()
                };
                let lex = rng.random_range(0..30u64);
                let cpath = if shape.with_constituency {
                    let depth = rng.random_range(1..=4);
                    (0..depth).map(|k| ["NP", "VP", "PP", "S"][(k + deps[i]) % 4].to_string()).collect()
                } else {
                    Vec::new()
                };
                tokens.push(TokenRecord {
                    group_id: g as u64,
                    sent_id,
                    variant: v as u32,
                    tok_idx: i,
                    form: format!("w{lex}"),
                    lex_id: lex,
                    pos: ["NOUN", "VERB", "ADJ"][deps[i] % 3].to_string(),
                    is_function: function[i],
                    dep: LABELS[deps[i]].to_string(),
                    head_dep: LABELS[(deps[i] + 1) % LABELS.len()].to_string(),
                    depth: rng.random_range(0..5),
                    cpath,
                    row: rows.len(),
                });
                rows.push(row);
            }
            sent_id += 1;
        }
    }
    let store = VectorStore::from_rows(shape.dim, &rows).unwrap();
    Dataset::new(store, tokens, shape.with_constituency, true).unwrap()
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Cosine distance written straight from the definition.
pub fn naive_cosine(u: &[f64], v: &[f64]) -> f64 {
    let uu = naive_dot(u, u);
    let vv = naive_dot(v, v);
    if uu.sqrt() < 1e-12 || vv.sqrt() < 1e-12 {
        return 1.0;
    }
    let c = naive_dot(u, v) / (uu * vv).sqrt();
    1.0 - c.clamp(-1.0, 1.0)
}

pub fn naive_matvec(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| naive_dot(row, x)).collect()
}

pub fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}
