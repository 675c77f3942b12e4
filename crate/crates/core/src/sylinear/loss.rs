use rayon::prelude::*;

use super::map::dot;
use super::{LinearMap, Matrix, ModelError};
use crate::sampler::TripletBatch;
use crate::vecstore::VectorStore;

/// Norms below this make cosine distance undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineDistance {
    pub value: f64,
    /// Set when either input norm is below [`DEGENERATE_NORM`]; `value` is then 1.
    pub degenerate: bool,
}

/// `1 - u·v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> CosineDistance {
    cosine_from_parts(dot(u, v), dot(u, u), dot(v, v))
}

/// Cosine distance from `u·v` and the squared norms. Dividing by
/// `sqrt(|u|²|v|²)` keeps `d(u, u)` exactly 0.
pub(crate) fn cosine_from_parts(uv: f64, uu: f64, vv: f64) -> CosineDistance {
    if uu.sqrt() < DEGENERATE_NORM || vv.sqrt() < DEGENERATE_NORM {
        return CosineDistance {
            value: 1.0,
            degenerate: true,
        };
    }
    let c = (uv / (uu * vv).sqrt()).clamp(-1.0, 1.0);
    CosineDistance {
        value: 1.0 - c,
        degenerate: false,
    }
}

/// Softmax triplet loss `e^ap / (e^ap + e^an)`.
pub fn triplet_loss(d_ap: f64, d_an: f64) -> f64 {
    let hi = d_ap.max(d_an);
    let a = (d_ap - hi).exp();
    let b = (d_an - hi).exp();
    a / (a + b)
}

/// Gradient of `d(u, v)` with respect to `u`.
fn cosine_grad_u(u: &[f64], v: &[f64], nu: f64, nv: f64, uv: f64) -> Vec<f64> {
    let inv = 1.0 / (nu * nv);
    let k = uv / (nu * nu * nu * nv);
    u.iter().zip(v).map(|(&ui, &vi)| -(vi * inv - k * ui)).collect()
}

/// Input-space differences and transformed pair vectors for one batch.
#[derive(Debug, Clone)]
pub struct BatchVectors {
    pub anchor_deltas: Vec<Vec<f64>>,
    pub positive_deltas: Vec<Vec<f64>>,
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
}

fn delta(store: &VectorStore, rows: [usize; 2]) -> Vec<f64> {
    store
        .row(rows[0])
        .iter()
        .zip(store.row(rows[1]))
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect()
}

impl BatchVectors {
    pub fn compute(f: &LinearMap, store: &VectorStore, batch: &TripletBatch) -> Result<Self, ModelError> {
        if store.dim() != f.n() {
            return Err(ModelError::DimMismatch {
                expected: f.n(),
                found: store.dim(),
            });
        }
        for e in &batch.entries {
            for r in e.anchor_rows.iter().chain(&e.positive_rows) {
                if *r >= store.count() {
                    return Err(ModelError::RowOutOfRange(*r));
                }
            }
        }
        let per_entry: Vec<_> = batch
            .entries
            .par_iter()
            .map(|e| {
                let da = delta(store, e.anchor_rows);
                let dp = delta(store, e.positive_rows);
                let va = f.apply(&da);
                let vp = f.apply(&dp);
                (da, dp, va, vp)
            })
            .collect();
        let mut out = BatchVectors {
            anchor_deltas: Vec::with_capacity(per_entry.len()),
            positive_deltas: Vec::with_capacity(per_entry.len()),
            anchors: Vec::with_capacity(per_entry.len()),
            positives: Vec::with_capacity(per_entry.len()),
        };
        for (da, dp, va, vp) in per_entry {
            out.anchor_deltas.push(da);
            out.positive_deltas.push(dp);
            out.anchors.push(va);
            out.positives.push(vp);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Matrix,
    /// Entries dropped because a pair vector had a degenerate norm.
    pub skipped: usize,
}

/// Mean softmax triplet loss over the batch and its gradient with respect to
/// the map weights. Token vectors are constants.
pub fn batch_loss_grad(f: &LinearMap, store: &VectorStore, batch: &TripletBatch) -> Result<LossGrad, ModelError> {
    let vectors = BatchVectors::compute(f, store, batch)?;
    loss_grad_from_vectors(f, &vectors, batch)
}

/// Loss and the gradients with respect to the anchor, positive and negative
/// pair vectors of one entry, already scaled by `L(1 - L)`.
type EntryTerms = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

pub fn loss_grad_from_vectors(
    f: &LinearMap,
    v: &BatchVectors,
    batch: &TripletBatch,
) -> Result<LossGrad, ModelError> {
    let b = batch.entries.len();
    if batch.negative_index.len() != b || v.anchors.len() != b {
        return Err(ModelError::UnminedBatch);
    }
    let m = f.m();
    let sq_a: Vec<f64> = v.anchors.iter().map(|x| dot(x, x)).collect();

    // Per-entry terms, computed independently then merged in index order.
    let terms: Vec<Option<EntryTerms>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let j = batch.negative_index[i];
            let (va, vp, vn) = (&v.anchors[i], &v.positives[i], &v.anchors[j]);
            let sq_p = dot(vp, vp);
            let (na, np, nn) = (sq_a[i].sqrt(), sq_p.sqrt(), sq_a[j].sqrt());
            if na < DEGENERATE_NORM || np < DEGENERATE_NORM || nn < DEGENERATE_NORM {
                return None;
            }
            let ap_dot = dot(va, vp);
            let an_dot = dot(va, vn);
            let d_ap = cosine_from_parts(ap_dot, sq_a[i], sq_p).value;
            let d_an = cosine_from_parts(an_dot, sq_a[i], sq_a[j]).value;
            let loss = triplet_loss(d_ap, d_an);
            let s = loss * (1.0 - loss);
            let ga_ap = cosine_grad_u(va, vp, na, np, ap_dot);
            let ga_an = cosine_grad_u(va, vn, na, nn, an_dot);
            let gp = cosine_grad_u(vp, va, np, na, ap_dot);
            let gn = cosine_grad_u(vn, va, nn, na, an_dot);
            let g_anchor: Vec<f64> = ga_ap.iter().zip(&ga_an).map(|(x, y)| s * (x - y)).collect();
            let g_pos: Vec<f64> = gp.iter().map(|x| s * x).collect();
            let g_neg: Vec<f64> = gn.iter().map(|x| -s * x).collect();
            Some((loss, g_anchor, g_pos, g_neg))
        })
        .collect();

    // Coefficients multiplying each input-space delta.
    let mut coef_a = vec![vec![0.0; m]; b];
    let mut coef_p = vec![vec![0.0; m]; b];
    let mut total = 0.0;
    let mut skipped = 0;
    for (i, t) in terms.into_iter().enumerate() {
        let Some((loss, ga, gp, gn)) = t else {
            skipped += 1;
            continue;
        };
        total += loss;
        let j = batch.negative_index[i];
        for r in 0..m {
            coef_a[i][r] += ga[r];
            coef_p[i][r] += gp[r];
            coef_a[j][r] += gn[r];
        }
    }

    let scale = if b == 0 { 0.0 } else { 1.0 / b as f64 };
    let mut grad = Matrix::zeros(m, f.n());
    grad.par_rows_mut().enumerate().for_each(|(r, row)| {
        for k in 0..b {
            let (ca, cp) = (coef_a[k][r], coef_p[k][r]);
            if ca != 0.0 {
                for (g, x) in row.iter_mut().zip(&v.anchor_deltas[k]) {
                    *g += ca * x;
                }
            }
            if cp != 0.0 {
                for (g, x) in row.iter_mut().zip(&v.positive_deltas[k]) {
                    *g += cp * x;
                }
            }
        }
        for g in row.iter_mut() {
            *g *= scale;
        }
    });
    Ok(LossGrad {
        loss: total * scale,
        grad,
        skipped,
    })
}
