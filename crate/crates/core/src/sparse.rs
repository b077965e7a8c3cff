//! Compressed sparse rows and a profile (envelope) Cholesky factorization.
//!
//! Grid-ordered finite element matrices have a narrow, nearly constant
//! envelope, so a row-oriented envelope factorization is both compact and
//! fast: the inner kernels are contiguous dot products.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from row-sorted column lists; `rows[i]` must be sorted and unique.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < n);
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub(crate) fn from_parts(n: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let rows = a
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(c, v)| (c, *v))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn zeros(n: usize) -> Self {
        CsrMatrix::from_rows(vec![Vec::new(); n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        match c.binary_search(&j) {
            Ok(k) => v[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `alpha * self + beta * other`; both must share the sparsity pattern.
    pub fn linear_combination(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!(self.row_ptr, other.row_ptr, "pattern mismatch");
        assert_eq!(self.cols, other.cols, "pattern mismatch");
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals: self
                .vals
                .iter()
                .zip(&other.vals)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v *= s);
        m
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        d
    }

    pub fn is_symmetric_exact(&self) -> bool {
        (0..self.n).all(|i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).all(|(&j, &a)| self.get(j, i).to_bits() == a.to_bits())
        })
    }

    /// Dump as `row col value` lines.
    pub fn write_coordinate(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                writeln!(w, "{i} {j} {a:.17e}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Cholesky factor `L` stored row by row over each row's envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

/// Pivots below this fraction of the original diagonal are treated as breakdown.
const PIVOT_RATIO: f64 = 1e-10;

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::factor_shifted(a, &[])
    }

    /// Factor `A + diag(shift)`; an empty `shift` means no shift.
    pub fn factor_shifted(a: &CsrMatrix, shift: &[f64]) -> Result<Self> {
        let n = a.n();
        let mut first = Vec::with_capacity(n);
        let mut start = Vec::with_capacity(n + 1);
        let mut len = 0usize;
        for i in 0..n {
            let (c, _) = a.row(i);
            let f = c.first().copied().unwrap_or(i).min(i);
            first.push(f);
            start.push(len);
            len += i - f + 1;
        }
        start.push(len);
        let mut data = vec![0.0; len];

        for i in 0..n {
            let fi = first[i];
            let si = start[i];
            let (c, v) = a.row(i);
            let mut diag = 0.0;
            for (&j, &x) in c.iter().zip(v) {
                if j < i {
                    data[si + j - fi] = x;
                } else if j == i {
                    diag = x;
                }
            }
            if let Some(s) = shift.get(i) {
                diag += s;
            }
            let (before, row_i) = data.split_at_mut(si);
            let row_i = &mut row_i[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &before[start[j]..start[j + 1]];
                let s = dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..j - fj]);
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let off = &row_i[..i - fi];
            let d = diag - dot(off, off);
            if !(d > PIVOT_RATIO * diag.abs()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { row: i, pivot: d });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(EnvelopeCholesky {
            n,
            first,
            start,
            data,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[self.start[i]..self.start[i + 1]]
    }

    /// `L y = b` in place, skipping the leading zeros of `b`.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let Some(s) = b.iter().position(|&x| x != 0.0) else {
            return;
        };
        self.forward_from(b, s);
    }

    /// `L y = b` assuming `b[..s]` is zero.
    pub fn forward_from(&self, b: &mut [f64], s: usize) {
        for i in s..self.n {
            let fi = self.first[i];
            let row = self.row(i);
            let k0 = fi.max(s);
            let acc = dot(&row[k0 - fi..i - fi], &b[k0..i]);
            b[i] = (b[i] - acc) / row[i - fi];
        }
    }

    /// `Lᵀ x = y` in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            let xi = y[i] / row[i - fi];
            y[i] = xi;
            if xi != 0.0 {
                for (yk, &l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                    *yk -= l * xi;
                }
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators; fixed association keeps results reproducible
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dense Cholesky for the small Schur complements of the constraint systems.
#[derive(Clone, Debug)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    /// Factor a row-major SPD matrix. Rows whose pivot collapses relative to
    /// their diagonal are reported together as linearly dependent.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![0.0; n * n];
        let mut dependent = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l[i * n..i * n + j], &l[j * n..j * n + j]);
                if i == j {
                    let d = a[i * n + i] - s;
                    if !(d > 1e-12 * a[i * n + i].abs()) {
                        dependent.push(i);
                        // keep going so every dependent row gets reported
                        l[i * n + i] = f64::INFINITY;
                    } else {
                        l[i * n + i] = d.sqrt();
                    }
                } else {
                    let ljj = l[j * n + j];
                    l[i * n + j] = if ljj.is_infinite() { 0.0 } else { (a[i * n + j] - s) / ljj };
                }
            }
        }
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { rows: dependent });
        }
        Ok(DenseCholesky { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&self.l[i * n..i * n + i], &y[..i]);
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let a = CsrMatrix::identity(5);
        let b = vec![1.0, -2.0, 3.0, 0.5, 0.0];
        let x = EnvelopeCholesky::factor(&a).unwrap().solve(&b);
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let x = EnvelopeCholesky::factor(&a).unwrap().solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            EnvelopeCholesky::factor(&a),
            Err(Error::NotPositiveDefinite { row: 1, .. })
        ));
    }

    #[test]
    fn banded_random_spd_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        // banded SPD: B Bᵀ + n I with B banded
        let mut b = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(4)..=i {
                b[i][j] = rng.random_range(-1.0..1.0);
            }
        }
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            }
            a[i][i] += 1.0;
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = EnvelopeCholesky::factor(&CsrMatrix::from_dense(&a)).unwrap().solve(&rhs);
        let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let oracle = na.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-10, "{i}");
        }
    }

    #[test]
    fn sparse_rhs_forward_skips_zeros() {
        let a = CsrMatrix::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 4.0, 1.0],
            vec![0.0, 1.0, 4.0],
        ]);
        let f = EnvelopeCholesky::factor(&a).unwrap();
        let mut b1 = vec![0.0, 0.0, 2.0];
        let mut b2 = b1.clone();
        f.forward_in_place(&mut b1);
        f.forward_from(&mut b2, 0);
        assert_eq!(b1, b2);
    }

    #[test]
    fn dense_cholesky_flags_dependent_rows() {
        // rows 0 and 2 equal
        let a = [2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        match DenseCholesky::factor(&a, 3) {
            Err(Error::RankDeficient { rows }) => assert_eq!(rows, vec![2]),
            other => panic!("{other:?}"),
        }
    }
}
