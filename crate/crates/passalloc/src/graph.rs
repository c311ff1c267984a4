//! Weighted undirected communication graphs and their spectral data.
//!
//! The dual (multiplier) dynamics of the controller diffuse along this graph;
//! the smallest positive Laplacian eigenvalue `c` lower-bounds the consensus
//! contraction rate and enters the convergence analysis.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors from graph construction and basis computation.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("weight matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("graph must have at least one node")]
    Empty,
    #[error("weights[{i}][{j}] = {w} is negative")]
    NegativeWeight { i: usize, j: usize, w: f64 },
    #[error("weights[{i}][{j}] = {a} != weights[{j}][{i}] = {b}, matrix must be symmetric")]
    Asymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("self-loop at node {i}: diagonal weight {w} must be zero")]
    SelfLoop { i: usize, w: f64 },
    #[error("edge ({i}, {j}) references a node outside 0..{n}")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },
    #[error("consensus basis needs n >= 2, got {n}")]
    BasisDimension { n: usize },
}

/// An undirected communication graph on `n` nodes with symmetric nonnegative
/// edge weights `a_ij` and zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    weights: DMatrix<f64>,
}

/// Laplacian matrix of a graph together with its sorted spectrum.
///
/// `c` is the smallest positive eigenvalue (absent for an edgeless graph);
/// for a connected graph it equals the second-smallest eigenvalue.
#[derive(Debug, Clone)]
pub struct LaplacianInfo {
    pub l: DMatrix<f64>,
    /// Eigenvalues sorted ascending.
    pub eigenvalues: Vec<f64>,
    /// Smallest eigenvalue above the positivity threshold, if any.
    pub c: Option<f64>,
}

/// Orthonormal splitting of R^n into the consensus direction `r = 1/√n · 1`
/// and its complement, the columns of `big_r`.
///
/// Satisfies `big_rᵀ r = 0`, `big_rᵀ big_r = I_{n-1}` and
/// `big_r big_rᵀ = I_n − r rᵀ`.
#[derive(Debug, Clone)]
pub struct ConsensusBasis {
    pub r: DVector<f64>,
    pub big_r: DMatrix<f64>,
}

impl Graph {
    /// Builds a graph from a full weight matrix, validating symmetry,
    /// nonnegativity and a zero diagonal.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        let (rows, cols) = weights.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(GraphError::Empty);
        }
        for i in 0..rows {
            if weights[(i, i)] != 0.0 {
                return Err(GraphError::SelfLoop {
                    i,
                    w: weights[(i, i)],
                });
            }
            for j in 0..rows {
                let w = weights[(i, j)];
                if w < 0.0 {
                    return Err(GraphError::NegativeWeight { i, j, w });
                }
                if w != weights[(j, i)] {
                    return Err(GraphError::Asymmetric {
                        i,
                        j,
                        a: w,
                        b: weights[(j, i)],
                    });
                }
            }
        }
        Ok(Self { n: rows, weights })
    }

    /// Builds a graph from an edge list with unit weights (0-based nodes).
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        Self::from_weighted_edges(n, &weighted)
    }

    /// Builds a graph from a weighted edge list (0-based nodes).
    pub fn from_weighted_edges(
        n: usize,
        edges: &[(usize, usize, f64)],
    ) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut weights = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n || i == j {
                return Err(GraphError::EdgeOutOfRange { i, j, n });
            }
            if w < 0.0 {
                return Err(GraphError::NegativeWeight { i, j, w });
            }
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
        Ok(Self { n, weights })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Neighbors of node `i`: indices with strictly positive weight.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        (0..self.n)
            .filter(|&j| self.weights[(i, j)] > 0.0)
            .map(|j| (j, self.weights[(i, j)]))
            .collect()
    }

    /// Laplacian `l_ii = Σ_{j≠i} a_ij`, `l_ij = −a_ij` with sorted spectrum.
    pub fn laplacian(&self) -> LaplacianInfo {
        let n = self.n;
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut degree = 0.0;
            for j in 0..n {
                if i != j {
                    degree += self.weights[(i, j)];
                    l[(i, j)] = -self.weights[(i, j)];
                }
            }
            l[(i, i)] = degree;
        }
        let mut eigenvalues: Vec<f64> = l
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let max_abs = eigenvalues.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
        let threshold = 1e-9 * max_abs.max(1.0);
        let c = eigenvalues.iter().copied().find(|&e| e > threshold);
        LaplacianInfo { l, eigenvalues, c }
    }

    /// True iff every node pair is joined by a path of positive-weight edges.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0_usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for (j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }
}

impl LaplacianInfo {
    /// Number of eigenvalues below the positivity threshold.
    pub fn zero_eigenvalue_count(&self) -> usize {
        let max_abs = self.eigenvalues.iter().fold(0.0_f64, |m, &e| m.max(e.abs()));
        let threshold = 1e-9 * max_abs.max(1.0);
        self.eigenvalues.iter().filter(|&&e| e <= threshold).count()
    }
}

/// Orthonormal consensus basis for dimension `n`, built by Gram-Schmidt
/// against `r = 1/√n · 1`.
pub fn consensus_basis(n: usize) -> Result<ConsensusBasis, GraphError> {
    if n < 2 {
        return Err(GraphError::BasisDimension { n });
    }
    let r = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut columns: Vec<DVector<f64>> = vec![r.clone()];
    // Orthonormalize the standard basis against r, keeping n-1 directions.
    for k in 0..n {
        if columns.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for c in &columns {
            let proj = c.dot(&v);
            v -= c * proj;
        }
        let norm = v.norm();
        if norm > 1e-10 {
            columns.push(v / norm);
        }
    }
    let mut big_r = DMatrix::zeros(n, n - 1);
    for (idx, c) in columns.iter().skip(1).enumerate() {
        big_r.set_column(idx, c);
    }
    Ok(ConsensusBasis { r, big_r })
}
