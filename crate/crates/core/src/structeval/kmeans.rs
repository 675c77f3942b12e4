use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EvalConfig, EvalError, Representation};
use crate::sylinear::LinearMap;
use crate::trainer::derive_seed;
use crate::vecstore::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center; ties go to the smaller center index.
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seeding(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `acc` just short of `target`.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every point coincides with a center: take an unused one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centers.push(points[next].clone());
        let c = centers.last().unwrap();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centers
}

/// Lloyd's algorithm with k-means++ seeding. Stops after `max_iters` rounds
/// or when no center moves by `tol` or more. Empty clusters are reseeded to
/// the point farthest from its own center.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, tol: f64, seed: u64) -> Result<KMeansResult, EvalError> {
    let n = points.len();
    if k == 0 {
        return Err(EvalError::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(EvalError::TooManyClusters { k, n });
    }
    if k == n {
        return Ok(KMeansResult {
            assignment: (0..n).collect(),
            centers: points.to_vec(),
            iterations: 0,
        });
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seeding(points, k, &mut rng);
    let mut assigned: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centers)).collect();
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut sizes = vec![0usize; k];
        for (p, &(c, _)) in points.iter().zip(&assigned) {
            sizes[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let new_center = if sizes[c] == 0 {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if assigned[b].1 >= assigned[i].1 => Some(b),
                        _ => Some(i),
                    })
                    .expect("k < n leaves a free point");
                taken[far] = true;
                points[far].clone()
            } else {
                sums[c].iter().map(|s| s / sizes[c] as f64).collect()
            };
            shift = shift.max(sq_dist(&new_center, &centers[c]).sqrt());
            centers[c] = new_center;
        }
        assigned = points.par_iter().map(|p| nearest(p, &centers)).collect();
        if shift < tol {
            break;
        }
    }
    Ok(KMeansResult {
        assignment: assigned.into_iter().map(|(c, _)| c).collect(),
        centers,
        iterations,
    })
}

/// Size-weighted purity: the fraction of points carrying their cluster's
/// most frequent label.
pub fn purity_from_assignments<L: Eq + std::hash::Hash>(assignment: &[usize], labels: &[L]) -> Result<f64, EvalError> {
    if assignment.len() != labels.len() {
        return Err(EvalError::LengthMismatch(assignment.len(), labels.len()));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut counts: HashMap<usize, HashMap<&L, usize>> = HashMap::new();
    for (c, l) in assignment.iter().zip(labels) {
        *counts.entry(*c).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(hits as f64 / labels.len() as f64)
}

/// Purity of unit-normalized points for each `k`.
pub fn kmeans_purity_points<L: Eq + std::hash::Hash>(
    points: &[Vec<f64>],
    labels: &[L],
    ks: &[usize],
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    let unit: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                p.iter().map(|v| v / norm).collect()
            } else {
                p.clone()
            }
        })
        .collect();
    let mut out = BTreeMap::new();
    for &k in ks {
        let r = kmeans(&unit, k, max_iters, tol, derive_seed(seed, k as u64))?;
        out.insert(k, purity_from_assignments(&r.assignment, labels)?);
    }
    Ok(out)
}

/// Dependency-label purity of content-token clusters in the evaluated space.
pub fn kmeans_purity(
    d: &Dataset,
    transform: Option<&LinearMap>,
    cfg: &EvalConfig,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    let rep = Representation::of(d, transform)?;
    kmeans_purity_with(d, &rep, cfg)
}

/// As [`kmeans_purity`] over a supplied representation, e.g. externally
/// produced 2-D projections aligned with the dataset's rows.
pub fn kmeans_purity_with(
    d: &Dataset,
    rep: &Representation,
    cfg: &EvalConfig,
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if !d.has_dependency {
        return Err(EvalError::MissingAnnotations("dependency"));
    }
    if rep.len() != d.store.count() {
        return Err(EvalError::LengthMismatch(rep.len(), d.store.count()));
    }
    let content: Vec<usize> = (0..d.tokens.len()).filter(|&i| !d.tokens[i].is_function).collect();
    let chosen: Vec<usize> = if cfg.purity_points == 0 || cfg.purity_points >= content.len() {
        content
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5055));
        let mut picked: Vec<usize> = index::sample(&mut rng, content.len(), cfg.purity_points)
            .into_iter()
            .map(|k| content[k])
            .collect();
        picked.sort_unstable();
        picked
    };
    let points: Vec<Vec<f64>> = chosen.iter().map(|&t| rep.row(d.tokens[t].row).to_vec()).collect();
    let labels: Vec<&str> = chosen.iter().map(|&t| d.tokens[t].dep.as_str()).collect();
    kmeans_purity_points(&points, &labels, &cfg.kmeans_ks, cfg.kmeans_iters, cfg.kmeans_tol, cfg.seed)
}
