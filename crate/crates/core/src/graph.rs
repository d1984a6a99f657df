//! Graphs, Laplacians, the vertex sampling operator and the block precision.

use std::io::{BufRead, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("weight matrix has nonzero diagonal at {0}")]
    NonZeroDiagonal(usize),
    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("invalid vertex selection: {0}")]
    InvalidSelection(String),
    #[error("L + eps I is not positive definite (eps = {epsilon})")]
    NotPositiveDefinite { epsilon: f64 },
    #[error("malformed matrix csv: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<(), GraphError> {
    if m.nrows() != m.ncols() {
        return Err(GraphError::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Err(GraphError::NonFinite { i, j });
            }
            if j > i && m[(i, j)] != m[(j, i)] {
                return Err(GraphError::NotSymmetric { i, j });
            }
        }
    }
    Ok(())
}

/// Undirected weighted graph: symmetric weights, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: DMatrix<f64>,
}

impl WeightedGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, GraphError> {
        check_square_symmetric(&weights)?;
        if let Some(i) = (0..weights.nrows()).find(|&i| weights[(i, i)] != 0.0) {
            return Err(GraphError::NonZeroDiagonal(i));
        }
        Ok(Self { weights })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn degree(&self, i: usize) -> usize {
        self.weights.row(i).iter().filter(|w| **w != 0.0).count()
    }

    /// Vertex pairs `(i, j)`, `i < j`, with nonzero weight.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_vertices();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.weights[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let next = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - next) + v;
        } else {
            carry += (v - next) + sum;
        }
        sum = next;
    }
    sum + carry
}

/// Symmetric matrix with zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianEstimate {
    values: DMatrix<f64>,
}

impl LaplacianEstimate {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: DMatrix::zeros(n, n),
        }
    }

    /// Takes the off-diagonal part of `m` and re-derives the diagonal.
    pub fn from_off_diagonal(m: DMatrix<f64>) -> Result<Self, GraphError> {
        check_square_symmetric(&m)?;
        let mut out = Self { values: m };
        out.rederive_diagonal();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Sets `ℓ_ij = ℓ_ji = value`; the diagonal is left stale until
    /// [`rederive_diagonal`](Self::rederive_diagonal).
    pub fn set_off_diagonal(&mut self, i: usize, j: usize, value: f64) {
        assert!(i != j, "diagonal entries are derived, not set");
        self.values[(i, j)] = value;
        self.values[(j, i)] = value;
    }

    /// `ℓ_ii = -Σ_{j≠i} ℓ_ij`.
    pub fn rederive_diagonal(&mut self) {
        let n = self.n();
        for i in 0..n {
            let off = compensated_sum((0..n).filter(|&j| j != i).map(|j| self.values[(i, j)]));
            self.values[(i, i)] = -off;
        }
    }

    /// Weighted adjacency `W = -offdiag(L)`.
    pub fn to_graph(&self) -> WeightedGraph {
        let mut w = -self.values.clone();
        w.fill_diagonal(0.0);
        WeightedGraph { weights: w }
    }

    pub fn eigen_sorted(&self) -> (DVector<f64>, DMatrix<f64>) {
        sorted_eigen(&self.values)
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues. Ties keep the
/// order returned by the decomposition.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// `L = diag(W 1) - W`, with compensated row sums.
pub fn laplacian_from_weights(g: &WeightedGraph) -> LaplacianEstimate {
    let mut values = -g.weights.clone();
    let mut out = {
        values.fill_diagonal(0.0);
        LaplacianEstimate { values }
    };
    out.rederive_diagonal();
    out
}

/// Block-diagonal 0/1 selection `Ψ = diag(A_1, ..., A_K)`, stored as index lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingOperator {
    n: usize,
    selections: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

impl SamplingOperator {
    pub fn new(n: usize, selections: Vec<Vec<usize>>) -> Result<Self, GraphError> {
        let mut offsets = Vec::with_capacity(selections.len() + 1);
        offsets.push(0);
        for (k, sel) in selections.iter().enumerate() {
            let mut seen = vec![false; n];
            for &i in sel {
                if i >= n {
                    return Err(GraphError::InvalidSelection(format!(
                        "snapshot {k}: vertex {i} out of range for N = {n}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(GraphError::InvalidSelection(format!(
                        "snapshot {k}: vertex {i} selected twice"
                    )));
                }
            }
            offsets.push(offsets[k] + sel.len());
        }
        Ok(Self {
            n,
            selections,
            offsets,
        })
    }

    /// The same selection for each of `k` snapshots.
    pub fn replicated(n: usize, k: usize, selection: Vec<usize>) -> Result<Self, GraphError> {
        Self::new(n, vec![selection; k])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.selections.len()
    }

    pub fn m_total(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn selection(&self, k: usize) -> &[usize] {
        &self.selections[k]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    fn check_len(expected: usize, got: usize) -> Result<(), GraphError> {
        if expected == got {
            Ok(())
        } else {
            Err(GraphError::DimensionMismatch { expected, got })
        }
    }

    /// `Ψ x` by gathering.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>, GraphError> {
        Self::check_len(self.n * self.k(), x.len())?;
        let mut out = DVector::zeros(self.m_total());
        let mut row = 0;
        for (k, sel) in self.selections.iter().enumerate() {
            for &i in sel {
                out[row] = x[k * self.n + i];
                row += 1;
            }
        }
        Ok(out)
    }

    /// `Ψᵀ y` by scattering; unsampled coordinates are zero.
    pub fn adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>, GraphError> {
        Self::check_len(self.m_total(), y.len())?;
        let mut out = DVector::zeros(self.n * self.k());
        let mut row = 0;
        for (k, sel) in self.selections.iter().enumerate() {
            for &i in sel {
                out[k * self.n + i] = y[row];
                row += 1;
            }
        }
        Ok(out)
    }

    /// Diagonal of `ΨᵀΨ` restricted to snapshot `k`.
    pub fn mask(&self, k: usize) -> Vec<bool> {
        let mut m = vec![false; self.n];
        for &i in &self.selections[k] {
            m[i] = true;
        }
        m
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut psi = DMatrix::zeros(self.m_total(), self.n * self.k());
        let mut row = 0;
        for (k, sel) in self.selections.iter().enumerate() {
            for &i in sel {
                psi[(row, k * self.n + i)] = 1.0;
                row += 1;
            }
        }
        psi
    }
}

/// Observed samples `y`, stacked snapshot by snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedObservations {
    y: DVector<f64>,
    offsets: Vec<usize>,
}

impl StackedObservations {
    pub fn new(y: DVector<f64>, op: &SamplingOperator) -> Result<Self, GraphError> {
        if y.len() != op.m_total() {
            return Err(GraphError::DimensionMismatch {
                expected: op.m_total(),
                got: y.len(),
            });
        }
        Ok(Self {
            y,
            offsets: op.offsets().to_vec(),
        })
    }

    /// Samples `signals[k][i]` at the selected vertices; `signals` is K×N.
    pub fn from_signals(signals: &DMatrix<f64>, op: &SamplingOperator) -> Result<Self, GraphError> {
        if signals.nrows() != op.k() || signals.ncols() != op.n() {
            return Err(GraphError::DimensionMismatch {
                expected: op.k() * op.n(),
                got: signals.len(),
            });
        }
        let stacked = DVector::from_iterator(
            op.k() * op.n(),
            (0..op.k()).flat_map(|k| (0..op.n()).map(move |i| signals[(k, i)])),
        );
        Self::new(op.apply(&stacked)?, op)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        &self.y.as_slice()[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// `B = I_K ⊗ (L + εI)`, kept as its single N×N block and its Cholesky factor.
#[derive(Debug, Clone)]
pub struct PrecisionAssembly {
    epsilon: f64,
    k: usize,
    block: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PrecisionAssembly {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn block(&self) -> &DMatrix<f64> {
        &self.block
    }

    pub fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// `B x`, one block at a time.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>, GraphError> {
        let n = self.block.nrows();
        if x.len() != n * self.k {
            return Err(GraphError::DimensionMismatch {
                expected: n * self.k,
                got: x.len(),
            });
        }
        let mut out = DVector::zeros(x.len());
        for k in 0..self.k {
            let seg = &self.block * x.rows(k * n, n);
            out.rows_mut(k * n, n).copy_from(&seg);
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.block.nrows();
        let mut b = DMatrix::zeros(n * self.k, n * self.k);
        for k in 0..self.k {
            b.view_mut((k * n, k * n), (n, n)).copy_from(&self.block);
        }
        b
    }
}

pub fn assemble_precision(
    l: &LaplacianEstimate,
    epsilon: f64,
    k: usize,
) -> Result<PrecisionAssembly, GraphError> {
    if !(epsilon > 0.0) {
        return Err(GraphError::NotPositiveDefinite { epsilon });
    }
    let n = l.n();
    let block = l.values() + DMatrix::identity(n, n) * epsilon;
    let chol = Cholesky::new(block.clone()).ok_or(GraphError::NotPositiveDefinite { epsilon })?;
    Ok(PrecisionAssembly {
        epsilon,
        k,
        block,
        chol,
    })
}

/// Dense matrix as CSV: a header line `N,<cols>`, then one row per line.
pub fn write_matrix_csv<W: Write>(mut out: W, m: &DMatrix<f64>) -> Result<(), GraphError> {
    writeln!(out, "N,{}", m.ncols())?;
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: BufRead>(input: R) -> Result<DMatrix<f64>, GraphError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| GraphError::Parse("missing header".into()))??;
    let cols: usize = header
        .strip_prefix("N,")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| GraphError::Parse(format!("bad header {header:?}")))?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| GraphError::Parse(format!("line {}: {e}", lineno + 2)))?;
        if vals.len() != cols {
            return Err(GraphError::Parse(format!(
                "line {}: expected {cols} values, found {}",
                lineno + 2,
                vals.len()
            )));
        }
        data.extend(vals);
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
