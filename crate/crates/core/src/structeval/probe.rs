use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EvalError, Representation};
use crate::sylinear::{adam_step, AdamConfig, AdamState, LinearMap, Matrix};
use crate::vecstore::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub iters: usize,
    pub l2: f64,
    pub lr: f64,
    pub eval_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            l2: 1e-4,
            lr: 0.05,
            eval_size: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Held-out accuracy of always predicting the training pool's most
    /// frequent label.
    pub majority_baseline: f64,
    pub accuracy: BTreeMap<usize, f64>,
    pub eval_size: usize,
}

struct Labelled<'a> {
    rep: &'a Representation,
    rows: Vec<usize>,
    labels: Vec<usize>,
}

impl Labelled<'_> {
    /// Features with a trailing constant for the intercept.
    fn features(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.rep.row(self.rows[i]).iter().copied().chain(std::iter::once(1.0))
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - hi).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn logits(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|c| w.row(c).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// Multinomial logistic regression fitted by full-batch Adam with an L2
/// penalty on the non-intercept weights.
fn fit(data: &Labelled, idx: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<LinearMap, EvalError> {
    let width = data.rep.dim() + 1;
    let xs: Vec<Vec<f64>> = idx.iter().map(|&i| data.features(i).collect()).collect();
    let mut map = LinearMap::new(Matrix::zeros(n_classes, width))?;
    let mut adam = AdamState::for_map(
        &map,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    )?;
    let inv_n = 1.0 / idx.len() as f64;
    for _ in 0..cfg.iters {
        let w = map.weights();
        let mut grad = Matrix::zeros(n_classes, width);
        for (x, &i) in xs.iter().zip(idx) {
            let mut p = logits(w, x);
            softmax_in_place(&mut p);
            p[data.labels[i]] -= 1.0;
            for (c, pc) in p.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    grad[(c, j)] += pc * xj * inv_n;
                }
            }
        }
        for c in 0..n_classes {
            for j in 0..width - 1 {
                grad[(c, j)] += cfg.l2 * w[(c, j)];
            }
        }
        (map, adam) = adam_step(&map, &adam, &grad)?;
    }
    Ok(map)
}

/// Fits a dependency-label probe on `n` sampled content tokens for each
/// `n` in `train_sizes` and scores it on a fixed held-out split.
pub fn probe_fewshot(
    d: &Dataset,
    transform: Option<&LinearMap>,
    train_sizes: &[usize],
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeReport, EvalError> {
    if !d.has_dependency {
        return Err(EvalError::MissingAnnotations("dependency"));
    }
    let rep = Representation::of(d, transform)?;
    let mut content: Vec<usize> = (0..d.tokens.len()).filter(|&i| !d.tokens[i].is_function).collect();
    let largest = train_sizes.iter().copied().max().unwrap_or(0);
    if content.len() < cfg.eval_size + largest || cfg.eval_size == 0 {
        return Err(EvalError::InsufficientData(format!(
            "{} content tokens cannot supply {} evaluation and {} training tokens",
            content.len(),
            cfg.eval_size,
            largest
        )));
    }
    if train_sizes.contains(&0) {
        return Err(EvalError::InvalidConfig("probe training sizes must be positive".into()));
    }
    let names: BTreeMap<&str, usize> = {
        let mut set: Vec<&str> = content.iter().map(|&i| d.tokens[i].dep.as_str()).collect();
        set.sort_unstable();
        set.dedup();
        set.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    };
    let n_classes = names.len();

    content.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let data = Labelled {
        rep: &rep,
        rows: content.iter().map(|&i| d.tokens[i].row).collect(),
        labels: content.iter().map(|&i| names[d.tokens[i].dep.as_str()]).collect(),
    };
    let eval: Vec<usize> = (0..cfg.eval_size).collect();
    let pool: Vec<usize> = (cfg.eval_size..content.len()).collect();

    let mut freq = vec![0usize; n_classes];
    for &i in &pool {
        freq[data.labels[i]] += 1;
    }
    let majority = argmax(&freq.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let score = |predict: &dyn Fn(usize) -> usize| {
        eval.iter().filter(|&&i| predict(i) == data.labels[i]).count() as f64 / eval.len() as f64
    };
    let majority_baseline = score(&|_| majority);

    let mut accuracy = BTreeMap::new();
    for &n in train_sizes {
        let model = fit(&data, &pool[..n], n_classes, cfg)?;
        let acc = score(&|i| {
            let x: Vec<f64> = data.features(i).collect();
            argmax(&logits(model.weights(), &x))
        });
        accuracy.insert(n, acc);
    }
    Ok(ProbeReport {
        majority_baseline,
        accuracy,
        eval_size: cfg.eval_size,
    })
}
