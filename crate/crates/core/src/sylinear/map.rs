use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ModelError;

pub const SMAP_MAGIC: [u8; 4] = *b"SMAP";
pub const SMAP_VERSION: u16 = 1;
pub const SMAP_HEADER_LEN: usize = 14;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ModelError> {
        if data.len() != rows * cols {
            return Err(ModelError::DimMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn par_rows_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        self.data.par_chunks_mut(self.cols)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Inner product with eight interleaved partial sums. The summation order is
/// fixed, so every caller gets bit-identical results for the same inputs.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// The learned transformation `x ↦ W x`. There is no bias: it cancels in
/// every pair vector, so training cannot identify it.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    w: Matrix,
}

impl LinearMap {
    pub fn new(w: Matrix) -> Result<Self, ModelError> {
        if w.rows == 0 || w.cols == 0 {
            return Err(ModelError::InvalidDims { n: w.cols, m: w.rows });
        }
        if w.data.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self { w })
    }

    pub fn identity(n: usize) -> Self {
        Self { w: Matrix::identity(n) }
    }

    /// Input dimension.
    pub fn n(&self) -> usize {
        self.w.cols
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.w.rows
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.w
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x.len())?;
        Ok(self.apply(x))
    }

    /// `W (x - y)`, i.e. `forward(x) - forward(y)`.
    pub fn pair_vector(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x.len())?;
        self.check_input(y.len())?;
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        Ok(self.apply(&diff))
    }

    /// Applies the map to an `f32` storage row.
    pub fn forward_f32(&self, x: &[f32]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x.len())?;
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        Ok(self.apply(&x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.w.rows).map(|r| dot(self.w.row(r), x)).collect()
    }

    fn check_input(&self, len: usize) -> Result<(), ModelError> {
        if len != self.n() {
            return Err(ModelError::DimMismatch {
                expected: self.n(),
                found: len,
            });
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&SMAP_MAGIC)?;
        w.write_all(&SMAP_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u32).to_le_bytes())?;
        w.write_all(&(self.m() as u32).to_le_bytes())?;
        for v in &self.w.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ModelError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = [0u8; SMAP_HEADER_LEN];
        r.read_exact(&mut header)?;
        let magic: [u8; 4] = header[0..4].try_into().unwrap();
        if magic != SMAP_MAGIC {
            return Err(ModelError::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
        if version != SMAP_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let n = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(header[10..14].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != 8 * n * m {
            return Err(ModelError::DimMismatch {
                expected: 8 * n * m,
                found: body.len(),
            });
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(Matrix::from_vec(m, n, data)?)
    }
}

/// Uniform init in `[-1/sqrt(n), 1/sqrt(n)]`.
pub fn init_map(n: usize, m: usize, seed: u64) -> Result<LinearMap, ModelError> {
    if n == 0 || m == 0 {
        return Err(ModelError::InvalidDims { n, m });
    }
    let bound = 1.0 / (n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * m).map(|_| rng.random_range(-bound..=bound)).collect();
    LinearMap::new(Matrix::from_vec(m, n, data)?)
}
