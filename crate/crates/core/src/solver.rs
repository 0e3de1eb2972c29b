//! Symmetric positive definite solves for graph-Laplacian systems.
//!
//! The sparsity graph is split into connected blocks. Blocks below
//! `dense_threshold` rows are factored with a dense Cholesky decomposition;
//! larger blocks use conjugate gradients with a Jacobi preconditioner.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::union_find::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative residual target for conjugate gradients.
    pub tol: f64,
    /// Iteration cap per CG block; `None` means `10 * block size`.
    pub max_iter: Option<usize>,
    /// Blocks with fewer rows are solved densely.
    pub dense_threshold: usize,
    /// Replace the volume mass matrix `diag(|I|)` by the identity.
    pub identity_mass: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
            dense_threshold: 200,
            identity_mass: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: matrix has {expected} rows, vector has {got}")]
    Dimension { expected: usize, got: usize },
}

/// Symmetric matrix stored as a diagonal plus both triangles of the
/// off-diagonal part in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    pub diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetricMatrix {
    /// Assemble from a diagonal and upper-or-lower off-diagonal triplets;
    /// duplicates are summed and each entry is mirrored.
    pub fn from_triplets(diag: Vec<f64>, off: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let n = diag.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in off {
            assert!(i != j, "off-diagonal triplet on the diagonal");
            rows[i].push((j, v));
            rows[j].push((i, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|&(j, _)| j);
            let mut k = 0;
            while k < r.len() {
                let j = r[k].0;
                let mut v = 0.0;
                while k < r.len() && r[k].0 == j {
                    v += r[k].1;
                    k += 1;
                }
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { diag, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.diag[i] * x[i] + self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Connected blocks of the sparsity pattern, each sorted.
    fn blocks(&self) -> Vec<Vec<usize>> {
        let n = self.dim();
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            for (j, _) in self.row(i) {
                uf.union(i, j);
            }
        }
        let (labels, k) = uf.labels();
        let mut blocks = vec![Vec::new(); k];
        for (i, l) in labels.into_iter().enumerate() {
            blocks[l].push(i);
        }
        blocks
    }

    /// Principal submatrix on the sorted index set `idx`.
    fn submatrix(&self, idx: &[usize]) -> SymmetricMatrix {
        let mut local = std::collections::HashMap::with_capacity(idx.len());
        for (k, &i) in idx.iter().enumerate() {
            local.insert(i, k);
        }
        let diag = idx.iter().map(|&i| self.diag[i]).collect();
        let mut off = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            for (j, v) in self.row(i) {
                if let Some(&l) = local.get(&j) {
                    if l > k {
                        off.push((k, l, v));
                    }
                }
            }
        }
        SymmetricMatrix::from_triplets(diag, off)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
/// Returns the solution and the number of iterations used.
pub fn pcg(a: &SymmetricMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize), SolverError> {
    let n = a.dim();
    if b.len() != n {
        return Err(SolverError::Dimension { expected: n, got: b.len() });
    }
    let mut x = vec![0.0; n];
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    if a.diag.iter().any(|&d| d <= 0.0) {
        return Err(SolverError::NotPositiveDefinite);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = a.mul_vec(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SolverError::NotPositiveDefinite);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * b_norm {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolverError::NotConverged {
        iterations: max_iter,
        residual: norm(&r) / b_norm,
    })
}

enum BlockSolver {
    Diagonal(f64),
    Dense(Cholesky<f64, Dyn>),
    Iterative(SymmetricMatrix),
}

/// A factored SPD system, reusable across right-hand sides.
pub struct PreparedSystem {
    matrix: SymmetricMatrix,
    blocks: Vec<(Vec<usize>, BlockSolver)>,
    opts: SolverOptions,
}

/// Outcome of a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Total CG iterations across iterative blocks (0 if all blocks were dense).
    pub iterations: usize,
    /// `‖A x − b‖ / ‖b‖` on the full system (0 for a zero right-hand side).
    pub relative_residual: f64,
}

impl PreparedSystem {
    pub fn new(matrix: SymmetricMatrix, opts: SolverOptions) -> Result<Self, SolverError> {
        let blocks = matrix
            .blocks()
            .into_iter()
            .map(|idx| {
                let solver = if idx.len() == 1 {
                    let d = matrix.diag[idx[0]];
                    if d <= 0.0 {
                        return Err(SolverError::NotPositiveDefinite);
                    }
                    BlockSolver::Diagonal(d)
                } else if idx.len() < opts.dense_threshold {
                    let dense = matrix.submatrix(&idx).to_dense();
                    BlockSolver::Dense(Cholesky::new(dense).ok_or(SolverError::NotPositiveDefinite)?)
                } else {
                    BlockSolver::Iterative(matrix.submatrix(&idx))
                };
                Ok((idx, solver))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { matrix, blocks, opts })
    }

    pub fn matrix(&self) -> &SymmetricMatrix {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Solution, SolverError> {
        let n = self.matrix.dim();
        if b.len() != n {
            return Err(SolverError::Dimension { expected: n, got: b.len() });
        }
        let mut x = vec![0.0; n];
        let mut iterations = 0;
        for (idx, solver) in &self.blocks {
            let rhs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
            let local = match solver {
                BlockSolver::Diagonal(d) => vec![rhs[0] / d],
                BlockSolver::Dense(chol) => chol.solve(&DVector::from_vec(rhs)).as_slice().to_vec(),
                BlockSolver::Iterative(m) => {
                    let max_iter = self.opts.max_iter.unwrap_or(10 * idx.len());
                    let (y, it) = pcg(m, &rhs, self.opts.tol, max_iter)?;
                    iterations += it;
                    y
                }
            };
            for (k, &i) in idx.iter().enumerate() {
                x[i] = local[k];
            }
        }
        let b_norm = norm(b);
        let relative_residual = if b_norm == 0.0 {
            0.0
        } else {
            let ax = self.matrix.mul_vec(&x);
            norm(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>()) / b_norm
        };
        Ok(Solution { x, iterations, relative_residual })
    }
}
