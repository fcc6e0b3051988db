//! Small sparse and banded kernels used by the interior-point solvers.

use nalgebra::DMatrix;

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(ncols: usize) -> Self {
        Self { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row given as `(column, value)` pairs; explicit zeros are kept.
    pub fn push_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, entries: I) {
        for (c, v) in entries {
            debug_assert!(c < self.ncols);
            self.indices.push(c);
            self.values.push(v);
        }
        self.indptr.push(self.indices.len());
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut out = Self::new(m.ncols());
        for i in 0..m.nrows() {
            out.push_row((0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).map(|j| (j, m[(i, j)])));
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let (idx, val) = self.row(i);
            *o = idx.iter().zip(val).map(|(&j, v)| v * x[j]).sum();
        }
    }

    pub fn tr_mul_into(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, zi) in z.iter().enumerate() {
            let (idx, val) = self.row(i);
            for (&j, v) in idx.iter().zip(val) {
                out[j] += v * zi;
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            let (idx, val) = self.row(i);
            for (&j, v) in idx.iter().zip(val) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Largest column spread within a single row.
    pub fn row_bandwidth(&self) -> usize {
        (0..self.nrows())
            .filter_map(|i| {
                let (idx, _) = self.row(i);
                let lo = idx.iter().min()?;
                let hi = idx.iter().max()?;
                Some(hi - lo)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Why a Cholesky factorization stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    /// Position (in band order) of the failing pivot.
    pub position: usize,
    pub pivot: f64,
}

/// Symmetric banded matrix stored by lower diagonals, factorized in place as `L L^T`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    // entry (i, i - d) lives at data[i * (bw + 1) + d]
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn copy_from(&mut self, other: &BandedSym) {
        debug_assert_eq!((self.n, self.bw), (other.n, other.bw));
        self.data.copy_from_slice(&other.data);
    }

    /// Adds `v` at `(i, j)`; `(i, j)` and `(j, i)` are the same entry.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(hi - lo <= self.bw, "entry ({hi}, {lo}) outside band {}", self.bw);
        self.data[hi * (self.bw + 1) + (hi - lo)] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.data[hi * (self.bw + 1) + (hi - lo)]
        }
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * (self.bw + 1)]
    }

    pub fn add_diag(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * (self.bw + 1)] += v;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.diag(i)).sum()
    }

    /// Banded copy of a dense symmetric matrix permuted into band order, `pos[col]` giving each position.
    pub fn from_dense_permuted(m: &DMatrix<f64>, pos: &[usize], bw: usize) -> Self {
        let mut out = Self::zeros(m.nrows(), bw);
        for i in 0..m.nrows() {
            for j in 0..=i {
                let v = m[(i, j)];
                if v != 0.0 {
                    out.add(pos[i], pos[j], v);
                }
            }
        }
        out
    }

    /// In-place Cholesky. A pivot is rejected when it is not above `rel_tol`
    /// times the largest pivot seen so far.
    pub fn factorize(&mut self, rel_tol: f64) -> Result<(), PivotFailure> {
        let n = self.n;
        let w = self.bw + 1;
        let mut largest: f64 = 0.0;
        for j in 0..n {
            // diagonal
            let mut d = self.data[j * w];
            let k0 = j.saturating_sub(self.bw);
            for k in k0..j {
                let l = self.data[j * w + (j - k)];
                d -= l * l;
            }
            largest = largest.max(d);
            if !(d > rel_tol * largest) || !d.is_finite() {
                return Err(PivotFailure { position: j, pivot: d });
            }
            let d = d.sqrt();
            self.data[j * w] = d;
            // column below the diagonal
            let i_end = (j + self.bw).min(n - 1);
            for i in j + 1..=i_end {
                let mut s = self.data[i * w + (i - j)];
                let k0 = i.saturating_sub(self.bw);
                for k in k0..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                self.data[i * w + (i - j)] = s / d;
            }
        }
        Ok(())
    }

    /// Solves `L L^T x = rhs` in place after [`factorize`](Self::factorize).
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let w = self.bw + 1;
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.data[i * w + (i - k)] * x[k];
            }
            x[i] = s / self.data[i * w];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..=(i + self.bw).min(n - 1) {
                s -= self.data[k * w + (k - i)] * x[k];
            }
            x[i] = s / self.data[i * w];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn banded_matches_dense_cholesky() {
        let n = 9;
        let bw = 2;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) <= bw {
                    dense[(i, j)] = 1.0 / (1.0 + (i + j) as f64);
                }
            }
            dense[(i, i)] += 3.0;
        }
        let pos: Vec<usize> = (0..n).collect();
        let mut band = BandedSym::from_dense_permuted(&dense, &pos, bw);
        band.factorize(1e-12).unwrap();
        let rhs = DVector::from_fn(n, |i, _| (i as f64).sin());
        let mut x = rhs.as_slice().to_vec();
        band.solve_in_place(&mut x);
        let expected = dense.cholesky().unwrap().solve(&rhs);
        for i in 0..n {
            assert_abs_diff_eq!(x[i], expected[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn singular_pivot_is_reported() {
        let dense = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let mut band = BandedSym::from_dense_permuted(&dense, &[0, 1, 2], 2);
        let err = band.factorize(1e-10).unwrap_err();
        assert_eq!(err.position, 1);
    }

    #[test]
    fn sparse_products() {
        let dense = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 3.0, 0.0, -1.0]);
        let s = SparseRows::from_dense(&dense);
        let mut out = [0.0; 3];
        s.mul_into(&[1.0, 2.0], &mut out);
        assert_eq!(out, [1.0, 8.0, -2.0]);
        let mut back = [0.0; 2];
        s.tr_mul_into(&[1.0, 1.0, 1.0], &mut back);
        assert_eq!(back, [3.0, 2.0]);
        assert_eq!(s.to_dense(), dense);
        assert_eq!(s.row_bandwidth(), 1);
    }
}
