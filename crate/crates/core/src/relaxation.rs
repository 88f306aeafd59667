//! Annihilator matrices for the structural relaxation.
//!
//! For a convex weight vector β ∈ R^d the matrix Λ_β has d(d−1)/2 rows; row
//! (i, j) with i < j holds β_j in column i and −β_i in column j, so every row
//! evaluates to β_jβ_i − β_iβ_j = 0 against β. Λ_β is linear in β, hence it is
//! represented by its values at the vertices e_1, …, e_d.

use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct AnnihilatorFamily {
    dim: usize,
    vertex: Vec<DMatrix<f64>>,
    kron: Vec<DMatrix<f64>>,
}

/// Λ_β for a given β, built row block by row block.
pub fn annihilator_at(beta: &[f64]) -> DMatrix<f64> {
    let d = beta.len();
    let rows = d * d.saturating_sub(1) / 2;
    let mut m = DMatrix::zeros(rows, d);
    let mut r = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            m[(r, i)] = beta[j];
            m[(r, j)] = -beta[i];
            r += 1;
        }
    }
    m
}

/// A ⊗ I_2.
pub fn kron_i2(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * a.nrows(), 2 * a.ncols());
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            out[(2 * r, 2 * c)] = a[(r, c)];
            out[(2 * r + 1, 2 * c + 1)] = a[(r, c)];
        }
    }
    out
}

impl AnnihilatorFamily {
    pub fn new(dim: usize) -> Self {
        let vertex: Vec<DMatrix<f64>> = (0..dim)
            .map(|i| {
                let mut e = vec![0.0; dim];
                e[i] = 1.0;
                annihilator_at(&e)
            })
            .collect();
        let kron = vertex.iter().map(kron_i2).collect();
        AnnihilatorFamily { dim, vertex, kron }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.dim * self.dim.saturating_sub(1) / 2
    }

    /// Λ_i = Λ_β evaluated at β = e_i.
    pub fn vertex(&self, i: usize) -> &DMatrix<f64> {
        &self.vertex[i]
    }

    /// Λ̄_i = Λ_i ⊗ I_2.
    pub fn kron(&self, i: usize) -> &DMatrix<f64> {
        &self.kron[i]
    }

    /// Σ_i β_i Λ_i.
    pub fn reconstruct(&self, beta: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.dim);
        for (b, v) in beta.iter().zip(&self.vertex) {
            m += v * *b;
        }
        m
    }
}

/// Cached family for dimension `d`.
pub fn build_annihilator(d: usize) -> Arc<AnnihilatorFamily> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<AnnihilatorFamily>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("annihilator cache poisoned");
    guard
        .entry(d)
        .or_insert_with(|| Arc::new(AnnihilatorFamily::new(d)))
        .clone()
}
