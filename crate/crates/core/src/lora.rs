//! Low-rank adapters for attention projections.
//!
//! Vectors are rows and matrices act on the right: a projection
//! `W in R^{d_in x d_out}` maps `x in R^{d_in}` to `x W`. An adapter adds
//! `scale * A B` with `A in R^{d_in x r}`, `B in R^{r x d_out}`, so the
//! adapted projection is `x W' = x W + scale * (x A) B`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::nn;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matmul inner dimension",
                expected: self.cols,
                got: other.rows,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: other.cols,
            data: nn::matmul(&self.data, &other.data, self.rows, self.cols, other.cols),
        })
    }

    /// `x M` for a row vector `x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.rows,
                got: x.len(),
            });
        }
        Ok(nn::matmul(x, &self.data, 1, self.rows, self.cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Projection {
    Query,
    Key,
    Value,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::Query, Projection::Key, Projection::Value];

    pub fn tag(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.tag() == tag)
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    target: Projection,
    a: Matrix,
    b: Matrix,
    scale: f64,
}

impl LoraAdapter {
    pub fn new(target: Projection, a: Matrix, b: Matrix, scale: f64) -> Result<Self> {
        if a.cols != b.rows {
            return Err(Error::DimensionMismatch {
                what: "lora rank (B rows)",
                expected: a.cols,
                got: b.rows,
            });
        }
        let rank = a.cols;
        if rank == 0 || rank >= a.rows.min(b.cols) {
            return Err(Error::RankTooLarge {
                rank,
                d_in: a.rows,
                d_out: b.cols,
            });
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite("lora scale"));
        }
        Ok(Self { target, a, b, scale })
    }

    pub fn target(&self) -> Projection {
        self.target
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    pub fn d_in(&self) -> usize {
        self.a.rows
    }

    pub fn d_out(&self) -> usize {
        self.b.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn set_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Matrix {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Matrix {
        &mut self.b
    }

    /// `(A, B)` entries as disjoint mutable slices.
    pub fn factors_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.a.data, &mut self.b.data)
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.a.data.len() + self.b.data.len()
    }

    /// Dense `scale * A B`.
    pub fn delta(&self) -> Matrix {
        let mut ab = self.a.matmul(&self.b).expect("adapter shapes validated at construction");
        ab.data.iter_mut().for_each(|v| *v *= self.scale);
        ab
    }

    fn check_base(&self, base: &Matrix) -> Result<()> {
        if base.rows != self.d_in() || base.cols != self.d_out() {
            return Err(Error::DimensionMismatch {
                what: "base weight (rows * cols)",
                expected: self.d_in() * self.d_out(),
                got: base.rows * base.cols,
            });
        }
        Ok(())
    }
}

/// Fresh adapter: `A ~ N(0, 1/rank)` elementwise, `B = 0`, scale 1.
pub fn init_lora(target: Projection, d_in: usize, d_out: usize, rank: usize, seed: u64) -> Result<LoraAdapter> {
    if rank == 0 || rank >= d_in.min(d_out) {
        return Err(Error::RankTooLarge { rank, d_in, d_out });
    }
    let mut rng = rng::seeded(seed);
    let std = 1.0 / libm::sqrt(rank as f64);
    let a = Matrix::new(d_in, rank, rng::normal_vec(&mut rng, d_in * rank, std))?;
    LoraAdapter::new(target, a, Matrix::zeros(rank, d_out), 1.0)
}

/// `x W + scale * (x A) B`, without forming `W + scale * A B`.
pub fn adapted_forward(base: &Matrix, adapter: &LoraAdapter, x: &[f64]) -> Result<Vec<f64>> {
    adapter.check_base(base)?;
    let mut y = base.apply(x)?;
    if adapter.scale == 0.0 {
        return Ok(y);
    }
    let low = adapter.a.apply(x)?;
    let delta = adapter.b.apply(&low)?;
    for (o, d) in y.iter_mut().zip(delta) {
        *o += adapter.scale * d;
    }
    Ok(y)
}

/// Dense `W + scale * A B`.
pub fn merge_lora(base: &Matrix, adapter: &LoraAdapter) -> Result<Matrix> {
    adapter.check_base(base)?;
    if adapter.b.data.iter().all(|&v| v == 0.0) || adapter.scale == 0.0 {
        return Ok(base.clone());
    }
    let delta = adapter.delta();
    let data = base.data.iter().zip(&delta.data).map(|(w, d)| w + d).collect();
    Matrix::new(base.rows, base.cols, data)
}
