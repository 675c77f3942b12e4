use serde::{Deserialize, Serialize};

use super::{LinearMap, Matrix, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidHyperparameters(format!("{self:?}")))
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m1: Matrix,
    pub m2: Matrix,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            step: 0,
            m1: Matrix::zeros(rows, cols),
            m2: Matrix::zeros(rows, cols),
            config,
        })
    }

    pub fn for_map(f: &LinearMap, config: AdamConfig) -> Result<Self, ModelError> {
        Self::new(f.m(), f.n(), config)
    }
}

/// One bias-corrected Adam update. Inputs are left untouched.
pub fn adam_step(f: &LinearMap, s: &AdamState, grad: &Matrix) -> Result<(LinearMap, AdamState), ModelError> {
    let shape = f.weights().shape();
    for found in [s.m1.shape(), s.m2.shape(), grad.shape()] {
        if found != shape {
            return Err(ModelError::DimMismatch {
                expected: shape.0 * shape.1,
                found: found.0 * found.1,
            });
        }
    }
    let AdamConfig { lr, beta1, beta2, eps } = s.config;
    let step = s.step + 1;
    let t = step as f64;
    let c1 = 1.0 - beta1.powf(t);
    let c2 = 1.0 - beta2.powf(t);

    let mut next = s.clone();
    next.step = step;
    let mut g = f.clone();
    let w = g.weights_mut().as_mut_slice();
    let m1 = next.m1.as_mut_slice();
    let m2 = next.m2.as_mut_slice();
    for (i, &gi) in grad.as_slice().iter().enumerate() {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * gi;
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * gi * gi;
        let mhat = m1[i] / c1;
        let vhat = m2[i] / c2;
        w[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite);
    }
    Ok((g, next))
}
