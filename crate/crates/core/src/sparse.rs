//! Compressed sparse row matrices with element-block structure.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(invalid("malformed CSR row pointer"));
        }
        if col_idx.len() != values.len() {
            return Err(invalid("CSR column and value arrays differ in length"));
        }
        for r in 0..nrows {
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= ncols) {
                return Err(invalid(format!("row {r} has unsorted or out-of-range columns")));
            }
        }
        Ok(CsrMatrix { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    col_idx.push(j);
                    values.push(a[(i, j)]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: a.nrows(), ncols: a.ncols(), row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|p| vals[p]).unwrap_or(0.0)
    }

    /// `y = A x`, rows in parallel; each row sums in a fixed order.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_iter_mut().with_min_len(256).enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&c, v)| v * x[c]).sum();
        });
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                col_idx[next[c]] = i;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr, col_idx, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T| / max |A|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(i, c)).abs());
            }
            let (tcols, tvals) = t.row(i);
            for (&c, &v) in tcols.iter().zip(tvals) {
                worst = worst.max((v - self.get(i, c)).abs());
            }
        }
        worst / scale
    }

    /// `self + alpha * other` for matrices with identical sparsity.
    pub fn add_same_pattern(&self, alpha: f64, other: &CsrMatrix) -> Result<CsrMatrix> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(invalid("matrices have different sparsity patterns"));
        }
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(out)
    }

    /// Adds `alpha * blocks[e]` to the diagonal block of element `e`.
    pub fn add_block_diagonal(&mut self, block_size: usize, blocks: &[DMatrix<f64>], alpha: f64) -> Result<()> {
        if blocks.len() * block_size != self.nrows {
            return Err(invalid("block count does not match matrix size"));
        }
        for (e, b) in blocks.iter().enumerate() {
            for i in 0..block_size {
                let row = e * block_size + i;
                let start = self.row_ptr[row];
                let cols = &self.col_idx[start..self.row_ptr[row + 1]];
                let first = cols
                    .binary_search(&(e * block_size))
                    .map_err(|_| invalid(format!("missing diagonal block for element {e}")))?;
                for j in 0..block_size {
                    debug_assert_eq!(cols[first + j], e * block_size + j);
                    self.values[start + first + j] += alpha * b[(i, j)];
                }
            }
        }
        Ok(())
    }

    /// Dense copy of the square block `[r0, r0+n) x [c0, c0+n)`.
    pub fn dense_block(&self, r0: usize, c0: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| self.get(r0 + i, c0 + j))
    }

    /// `P A P^T` for the permutation `perm` (new index `i` holds old `perm[i]`).
    pub fn permute_symmetric(&self, perm: &[usize]) -> Result<CsrMatrix> {
        if perm.len() != self.nrows || self.nrows != self.ncols {
            return Err(invalid("permutation length does not match a square matrix"));
        }
        let mut inverse = vec![usize::MAX; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            if old >= perm.len() || inverse[old] != usize::MAX {
                return Err(invalid("not a permutation"));
            }
            inverse[old] = new;
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::with_capacity(self.nnz());
        let mut values = Vec::with_capacity(self.nnz());
        for &old in perm {
            let (cols, vals) = self.row(old);
            let mut entries: Vec<(usize, f64)> = cols.iter().map(|&c| inverse[c]).zip(vals.iter().copied()).collect();
            entries.sort_unstable_by_key(|e| e.0);
            for (c, v) in entries {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values })
    }

    /// Writes the matrix in MatrixMarket coordinate format.
    pub fn write_matrix_market(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", i + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Dot product with a reduction order independent of the thread count.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 4096;
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, 0.0, 5.0]);
        CsrMatrix::from_dense(&a)
    }

    #[test]
    fn matvec_and_transpose() {
        let a = sample();
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![5.0, 5.0, 5.0]);
        let t = a.transpose();
        assert_eq!(t.get(0, 1), 2.0);
        assert_eq!(t.get(1, 0), 1.0);
        assert!((a.asymmetry() - 1.0 / 5.0).abs() < 1e-15);
        assert_eq!(CsrMatrix::identity(4).asymmetry(), 0.0);
    }

    #[test]
    fn permutation_round_trip() {
        let a = sample();
        let p = a.permute_symmetric(&[2, 0, 1]).unwrap();
        assert_eq!(p.get(0, 0), 5.0);
        assert_eq!(p.get(1, 2), 1.0);
        assert!(a.permute_symmetric(&[0, 0, 1]).is_err());
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(CsrMatrix::new(2, 2, vec![0, 1], vec![0], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn matrix_market_header() {
        let mut buf = Vec::new();
        sample().write_matrix_market(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("%%MatrixMarket matrix coordinate real general\n3 3 5\n1 1 "));
    }

    #[test]
    fn dot_is_deterministic_across_pools() {
        let a: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..50_000).map(|i| (i as f64 * 0.11).cos()).collect();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| dot(&a, &b));
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| dot(&a, &b));
        assert_eq!(one.to_bits(), four.to_bits());
    }
}
