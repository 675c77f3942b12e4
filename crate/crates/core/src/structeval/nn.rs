use std::collections::HashSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{hard_subset, pearson};
use super::{EvalConfig, EvalError, EvalReport, Exclusion, Representation};
use crate::sylinear::{cosine_from_parts, dot, LinearMap};
use crate::vecstore::{Dataset, TokenRecord};

/// Closest value found for one query token.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: usize,
    /// `None` when the exclusion rule left no candidate.
    pub value: Option<usize>,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct NnOutcome {
    pub report: EvalReport,
    pub results: Vec<QueryResult>,
}

/// Seeded sample of content tokens, optionally restricted to the
/// highest-entropy POS tags. Returns token indices and the tag filter used.
pub fn select_queries(d: &Dataset, cfg: &EvalConfig) -> Result<(Vec<usize>, Vec<String>), EvalError> {
    let hard = if cfg.hard_top_pos > 0 {
        hard_subset(d, cfg.hard_top_pos)?
    } else {
        Vec::new()
    };
    let allowed: HashSet<&str> = hard.iter().map(String::as_str).collect();
    let eligible: Vec<usize> = d
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_function && (allowed.is_empty() || allowed.contains(t.pos.as_str())))
        .map(|(i, _)| i)
        .collect();
    let take = cfg.n_queries.min(eligible.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picked = index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|k| eligible[k])
        .collect();
    Ok((picked, hard))
}

fn excluded(rule: Exclusion, q: usize, qt: &TokenRecord, c: usize, ct: &TokenRecord) -> bool {
    match rule {
        Exclusion::SelfToken => q == c,
        Exclusion::Sentence => qt.sent_id == ct.sent_id,
        Exclusion::Group => qt.group_id == ct.group_id,
    }
}

const QUERY_BLOCK: usize = 32;

/// Exact cosine nearest neighbour of each query among content tokens; ties
/// go to the smallest store row.
pub fn nn_queries(d: &Dataset, rep: &Representation, queries: &[usize], rule: Exclusion) -> Vec<QueryResult> {
    let mut pool: Vec<usize> = (0..d.tokens.len()).filter(|&i| !d.tokens[i].is_function).collect();
    pool.sort_by_key(|&i| (d.tokens[i].row, i));

    // Queries are scanned in tiles so each candidate row is reused from cache;
    // every query still visits candidates in pool order.
    queries
        .par_chunks(QUERY_BLOCK)
        .flat_map_iter(|block| {
            let mut best: Vec<Option<(f64, usize)>> = vec![None; block.len()];
            for &c in &pool {
                let ct = &d.tokens[c];
                let cv = rep.row(ct.row);
                let cn = rep.sq_norm(ct.row);
                for (slot, &q) in best.iter_mut().zip(block) {
                    let qt = &d.tokens[q];
                    if excluded(rule, q, qt, c, ct) {
                        continue;
                    }
                    let dist = cosine_from_parts(dot(rep.row(qt.row), cv), rep.sq_norm(qt.row), cn).value;
                    if slot.is_none_or(|(bd, _)| dist < bd) {
                        *slot = Some((dist, c));
                    }
                }
            }
            block.iter().zip(best).map(|(&q, b)| QueryResult {
                query: q,
                value: b.map(|b| b.1),
                distance: b.map_or(f64::NAN, |b| b.0),
            })
        })
        .collect()
}

fn prefix_eq(a: &[String], b: &[String], len: usize) -> bool {
    a[..a.len().min(len)] == b[..b.len().min(len)]
}

fn rate(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Aggregates per-query retrievals into agreement rates.
pub fn summarize(d: &Dataset, results: &[QueryResult]) -> Result<EvalReport, EvalError> {
    let used: Vec<(&TokenRecord, &TokenRecord)> = results
        .iter()
        .filter_map(|r| r.value.map(|v| (&d.tokens[r.query], &d.tokens[v])))
        .collect();
    let n = used.len();
    let count = |f: &dyn Fn(&TokenRecord, &TokenRecord) -> bool| used.iter().filter(|(q, v)| f(q, v)).count();
    let depths_q: Vec<f64> = used.iter().map(|(q, _)| q.depth as f64).collect();
    let depths_v: Vec<f64> = used.iter().map(|(_, v)| v.depth as f64).collect();
    let p = pearson(&depths_q, &depths_v)?;

    let mut report = EvalReport {
        dep_edge: rate(count(&|q, v| q.dep == v.dep), n),
        head_dep_edge: rate(count(&|q, v| q.head_dep == v.head_dep), n),
        depth_pearson: p.r,
        depth_pearson_degenerate: p.degenerate,
        lexical_match: rate(count(&|q, v| q.lex_id == v.lex_id), n),
        n_queries_requested: results.len(),
        n_queries_used: n,
        n_queries_skipped: results.len() - n,
        ..Default::default()
    };
    if d.has_constituency {
        report.cpath_complete = Some(rate(count(&|q, v| q.cpath == v.cpath), n));
        report.cpath_l3 = Some(rate(count(&|q, v| prefix_eq(&q.cpath, &v.cpath, 3)), n));
        report.cpath_l2 = Some(rate(count(&|q, v| prefix_eq(&q.cpath, &v.cpath, 2)), n));
    }
    Ok(report)
}

pub fn nn_outcome(d: &Dataset, transform: Option<&LinearMap>, cfg: &EvalConfig) -> Result<NnOutcome, EvalError> {
    cfg.validate()?;
    if !d.has_dependency {
        return Err(EvalError::MissingAnnotations("dependency"));
    }
    let rep = Representation::of(d, transform)?;
    let (queries, hard) = select_queries(d, cfg)?;
    let results = nn_queries(d, &rep, &queries, cfg.exclusion);
    let mut report = summarize(d, &results)?;
    report.transformed = transform.is_some();
    report.exclusion = cfg.exclusion;
    report.hard_pos = hard;
    Ok(NnOutcome { report, results })
}

/// Closest-word agreement report (nearest-neighbour fields only).
pub fn nn_agreement(d: &Dataset, transform: Option<&LinearMap>, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    Ok(nn_outcome(d, transform, cfg)?.report)
}
