//! Compressed sparse design matrix with both row and column access.
//!
//! Rows are training samples. The row-major (CSR) arrays are the primary
//! storage; a column-major (CSC) mirror is built once at construction so
//! that coordinate work (partial gradients, `A_S t`) touches only the
//! columns in the sampled subset.

use crate::error::{FcdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesignMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    col_values: Vec<f64>,
}

impl SparseDesignMatrix {
    /// Build from CSR arrays. Column indices within each row must be
    /// strictly increasing and below `cols`.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 {
            return Err(FcdError::InvalidMatrix(format!(
                "row_ptr has length {}, expected {}",
                row_ptr.len(),
                rows + 1
            )));
        }
        if row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(FcdError::InvalidMatrix(
                "row_ptr does not match the stored nonzero count".into(),
            ));
        }
        if col_idx.len() != values.len() {
            return Err(FcdError::InvalidMatrix(format!(
                "{} column indices but {} values",
                col_idx.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let (s, e) = (row_ptr[r], row_ptr[r + 1]);
            if s > e {
                return Err(FcdError::InvalidMatrix(format!("row_ptr decreases at row {r}")));
            }
            let row = &col_idx[s..e];
            if row.iter().any(|&c| c >= cols) {
                return Err(FcdError::InvalidMatrix(format!("column index out of range in row {r}")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(FcdError::InvalidMatrix(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FcdError::NonFinite("matrix values"));
        }

        // Counting sort into CSC; row indices come out sorted per column.
        let mut col_ptr = vec![0usize; cols + 1];
        for &c in &col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..cols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; col_idx.len()];
        let mut col_values = vec![0.0; col_idx.len()];
        for r in 0..rows {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[k];
                row_idx[next[c]] = r;
                col_values[next[c]] = values[k];
                next[c] += 1;
            }
        }

        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
            col_ptr,
            row_idx,
            col_values,
        })
    }

    /// Build from per-row `(column, value)` lists. Entries are sorted;
    /// duplicate columns in a row are rejected and explicit zeros dropped.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut sorted: Vec<(usize, f64)> = row.iter().copied().filter(|&(_, v)| v != 0.0).collect();
            sorted.sort_by_key(|&(c, _)| c);
            if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(FcdError::InvalidMatrix(format!("duplicate column in row {r}")));
            }
            for (c, v) in sorted {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self::from_csr(rows.len(), cols, row_ptr, col_idx, values)
    }

    /// Build from a dense row-major array, dropping exact zeros.
    pub fn from_dense(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FcdError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..rows {
            for c in 0..cols {
                let v = data[r * cols + c];
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self::from_csr(rows, cols, row_ptr, col_idx, values)
    }

    pub fn identity(n: usize) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        Self::from_rows(n, &rows).expect("identity is well formed")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero fraction `nnz / (rows * cols)`.
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.nnz() as f64 / (self.rows as f64 * self.cols as f64)
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn column(&self, c: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.row_idx[s..e], &self.col_values[s..e])
    }

    pub fn column_sq_norm(&self, c: usize) -> f64 {
        self.column(c).1.iter().map(|v| v * v).sum()
    }

    /// `out = A x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let (idx, vals) = self.row(r);
            *o = idx.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        }
    }

    /// `out = A^T y`
    pub fn mul_transpose_vec(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (c, o) in out.iter_mut().enumerate() {
            let (idx, vals) = self.column(c);
            *o = idx.iter().zip(vals).map(|(&r, v)| v * y[r]).sum();
        }
    }

    /// Inner product of column `c` with a dense row-space vector.
    pub fn column_dot(&self, c: usize, y: &[f64]) -> f64 {
        let (idx, vals) = self.column(c);
        idx.iter().zip(vals).map(|(&r, v)| v * y[r]).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                d[r * self.cols + c] = v;
            }
        }
        d
    }
}

/// Sparse accumulator over row space: a dense buffer plus the list of
/// touched rows, so that clearing costs only the touched entries.
#[derive(Debug, Clone)]
pub struct RowAccumulator {
    values: Vec<f64>,
    mark: Vec<bool>,
    touched: Vec<usize>,
}

impl RowAccumulator {
    pub fn new(rows: usize) -> Self {
        Self {
            values: vec![0.0; rows],
            mark: vec![false; rows],
            touched: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.values[r] = 0.0;
            self.mark[r] = false;
        }
        self.touched.clear();
    }

    pub fn add(&mut self, r: usize, v: f64) {
        if !self.mark[r] {
            self.mark[r] = true;
            self.touched.push(r);
        }
        self.values[r] += v;
    }

    /// Accumulate `A_S t` column by column.
    pub fn accumulate_columns(&mut self, a: &SparseDesignMatrix, subset: &[usize], t: &[f64]) {
        for (&c, &tc) in subset.iter().zip(t) {
            if tc == 0.0 {
                continue;
            }
            let (idx, vals) = a.column(c);
            for (&r, &v) in idx.iter().zip(vals) {
                self.add(r, v * tc);
            }
        }
    }

    /// Touched rows in ascending order with their accumulated values.
    pub fn drain_sorted(&mut self) -> (Vec<usize>, Vec<f64>) {
        let mut rows = self.touched.clone();
        rows.sort_unstable();
        let vals = rows.iter().map(|&r| self.values[r]).collect();
        self.clear();
        (rows, vals)
    }
}
