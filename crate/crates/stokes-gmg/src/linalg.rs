//! Minimal sparse and dense linear algebra.
//!
//! Compressed sparse row storage with sorted, unique column indices per row.
//! Structural zeros are kept: downstream code derives Vanka subdomains from
//! the sparsity pattern, and entries that cancel numerically (they do, on
//! symmetric patches) must stay visible.
//!
//! The dense side is a row-major matrix plus an LU factorization with partial
//! pivoting. Besides the usual solve, the factorization offers a transposed
//! solve; solving `Mᵀ y = e_j` yields row `j` of `M⁻¹`, which is how the
//! restricted smoother materializes only the rows it writes.

use crate::error::{Error, Result};

/// Sparse matrix in CSR format. Column indices are sorted and unique per row.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from triplets. Duplicate entries are summed; explicit zeros are
    /// kept as structural entries.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        for &(i, j, _) in &triplets {
            assert!(i < n_rows && j < n_cols, "triplet ({i}, {j}) out of bounds");
        }
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut counts = vec![0usize; n_rows];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(j);
                values.push(v);
                counts[i] += 1;
                last = Some((i, j));
            }
        }
        let mut row_offsets = vec![0usize; n_rows + 1];
        for i in 0..n_rows {
            row_offsets[i + 1] = row_offsets[i] + counts[i];
        }
        CsrMatrix { n_rows, n_cols, row_offsets, col_indices, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_offsets[i];
        let hi = self.row_offsets[i + 1];
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), or 0.0 when the entry is not structural.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// y = M x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols, "spmv dimension mismatch");
        assert_eq!(y.len(), self.n_rows, "spmv output dimension mismatch");
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// y = Mᵀ x without materializing the transpose.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows, "transposed spmv dimension mismatch");
        let mut y = vec![0.0; self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let xi = x[i];
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// r = b - M x, restricted to the given rows, written into `out` (same
    /// length as `rows`).
    pub fn residual_rows(&self, rows: &[usize], b: &[f64], x: &[f64], out: &mut [f64]) {
        for (k, &i) in rows.iter().enumerate() {
            let (cols, vals) = self.row(i);
            let mut acc = b[i];
            for (&j, &v) in cols.iter().zip(vals) {
                acc -= v * x[j];
            }
            out[k] = acc;
        }
    }

    /// r = b - M x over all rows.
    pub fn residual(&self, b: &[f64], x: &[f64], out: &mut [f64]) {
        assert_eq!(b.len(), self.n_rows);
        assert_eq!(out.len(), self.n_rows);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = b[i];
            for (&j, &v) in cols.iter().zip(vals) {
                acc -= v * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                triplets.push((j, i, v));
            }
        }
        CsrMatrix::from_triplets(self.n_cols, self.n_rows, triplets)
    }

    /// Dense submatrix at the given row/column index sets (in the given order).
    pub fn extract_dense(&self, rows: &[usize], cols: &[usize]) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(rows.len(), cols.len());
        for (k, &i) in rows.iter().enumerate() {
            assert!(i < self.n_rows, "row index {i} out of range");
            let (rcols, rvals) = self.row(i);
            for (l, &j) in cols.iter().enumerate() {
                assert!(j < self.n_cols, "column index {j} out of range");
                if let Ok(pos) = rcols.binary_search(&j) {
                    m[(k, l)] = rvals[pos];
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        DenseMatrix { n_rows, n_cols, data: vec![0.0; n_rows * n_cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n_rows = rows.len();
        let n_cols = if n_rows == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix { n_rows, n_cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_slice_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "dense matvec dimension mismatch");
        (0..self.n_rows)
            .map(|i| self.row_slice(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn mul_mat(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.n_cols, other.n_rows, "dense matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for k in 0..self.n_cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.n_cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            for j in 0..self.n_cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        assert_eq!(self.n_rows, other.n_rows);
        assert_eq!(self.n_cols, other.n_cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        &self.data[i * self.n_cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        &mut self.data[i * self.n_cols + j]
    }
}

/// LU factorization with partial pivoting, PM = LU.
///
/// A pivot counts as singular when its magnitude is at most
/// `1e-14 · ‖row‖∞` of the corresponding original row.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    /// Packed factors: strictly lower part of L (unit diagonal implied) and U.
    lu: DenseMatrix,
    /// perm[k] = original row index now in position k.
    perm: Vec<usize>,
}

pub const PIVOT_RELATIVE_TOLERANCE: f64 = 1e-14;

impl DenseLu {
    pub fn factor(m: &DenseMatrix) -> Result<DenseLu> {
        assert_eq!(m.n_rows(), m.n_cols(), "LU needs a square matrix");
        let n = m.n_rows();
        let mut lu = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let row_norms: Vec<f64> = (0..n)
            .map(|i| m.row_slice(i).iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
            .collect();
        for k in 0..n {
            let (piv_row, piv_abs) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty pivot search");
            let tol = PIVOT_RELATIVE_TOLERANCE * row_norms[perm[piv_row]];
            if piv_abs <= tol {
                return Err(Error::SingularMatrix { context: "dense LU" });
            }
            if piv_row != k {
                perm.swap(k, piv_row);
                for j in 0..n {
                    let a = lu[(k, j)];
                    lu[(k, j)] = lu[(piv_row, j)];
                    lu[(piv_row, j)] = a;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in (k + 1)..n {
                    let u = lu[(k, j)];
                    lu[(i, j)] -= factor * u;
                }
            }
        }
        Ok(DenseLu { n, lu, perm })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves M x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "LU solve dimension mismatch");
        let n = self.n;
        // forward: L y = P b
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        // backward: U x = y
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Solves Mᵀ x = b. With b = e_j this produces row j of M⁻¹.
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "transposed LU solve dimension mismatch");
        let n = self.n;
        // Mᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, then Lᵀ w = z, then x = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            let mut acc = z[i];
            for j in 0..i {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for j in (i + 1)..n {
                acc -= self.lu[(j, i)] * z[j];
            }
            z[i] = acc;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}
