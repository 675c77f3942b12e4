use std::collections::BTreeMap;

use super::EvalError;
use crate::vecstore::Dataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pearson {
    pub r: f64,
    /// Set when either series has zero variance; `r` is then 0.
    pub degenerate: bool,
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Pearson, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Ok(Pearson { r: 0.0, degenerate: true });
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Pearson { r: 0.0, degenerate: true });
    }
    Ok(Pearson {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Shannon entropy (nats) of a count histogram.
pub fn entropy<I: IntoIterator<Item = usize>>(counts: I) -> f64 {
    let counts: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / t;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Entropy of the dependency-label distribution of each POS tag over content
/// tokens.
pub fn dep_label_entropy(d: &Dataset) -> Result<BTreeMap<String, f64>, EvalError> {
    if !d.has_dependency {
        return Err(EvalError::MissingAnnotations("dependency"));
    }
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for t in d.tokens.iter().filter(|t| !t.is_function) {
        *counts.entry(&t.pos).or_default().entry(&t.dep).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(pos, labels)| (pos.to_string(), entropy(labels.into_values())))
        .collect())
}

/// The `top` POS tags with the highest dependency-label entropy; ties go to
/// the lexicographically smaller tag.
pub fn hard_subset(d: &Dataset, top: usize) -> Result<Vec<String>, EvalError> {
    if top == 0 {
        return Err(EvalError::InvalidConfig("hard subset size must be at least 1".into()));
    }
    let mut tags: Vec<(String, f64)> = dep_label_entropy(d)?.into_iter().collect();
    // BTreeMap iteration is already tag-ordered and the sort is stable.
    tags.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(tags.into_iter().take(top).map(|(t, _)| t).collect())
}
