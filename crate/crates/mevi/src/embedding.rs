//! Dense vector storage: a flat row-major matrix plus the id-mapped
//! embedding set used as build and query input.

use std::collections::HashSet;

use crate::error::{MeviError, Result};

/// Row-major matrix of 32-bit floats. Rows are vectors, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    /// Builds a matrix from a flat row-major buffer. `data.len()` must be a
    /// multiple of `dim`.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(MeviError::DimensionMismatch {
                expected: dim,
                got: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A corpus (or query set) of `n` vectors of dimension `d` with unique
/// external string ids.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    vectors: Matrix,
}

impl EmbeddingSet {
    /// Validates and assembles an embedding set: ids unique, one id per row,
    /// every component finite.
    pub fn new(ids: Vec<String>, vectors: Matrix) -> Result<Self> {
        if ids.len() != vectors.rows() {
            return Err(MeviError::InvalidArgument(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.rows()
            )));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(MeviError::DuplicateId(id.clone()));
            }
        }
        if !vectors.data().iter().all(|v| v.is_finite()) {
            return Err(MeviError::NonFinite);
        }
        Ok(Self { ids, vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn count(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        self.vectors.row(i)
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn into_parts(self) -> (Vec<String>, Matrix) {
        (self.ids, self.vectors)
    }
}
