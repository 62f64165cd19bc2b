//! Minimal compressed-sparse-row complex matrix.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::C64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<C64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: impl IntoIterator<Item = (usize, usize, C64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize), C64> = BTreeMap::new();
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            *acc.entry((r, c)).or_default() += v;
        }
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(acc.len());
        let mut data = Vec::with_capacity(acc.len());
        for ((r, c), v) in acc {
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            data.push(v);
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, C64::new(1.0, 0.0))))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Iterates (row, col, value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.data[k]))
        })
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.row(r).find(|&(cc, _)| cc == c).map(|(_, v)| v).unwrap_or_default()
    }

    pub fn adjoint(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.ncols, self.nrows, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> CsrMatrix {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        CsrMatrix::from_triplets(self.nrows, self.ncols, self.iter().chain(other.iter()))
    }

    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows);
        let mut trip = Vec::new();
        for (r, k, a) in self.iter() {
            for (c, b) in other.row(k) {
                trip.push((r, c, a * b));
            }
        }
        CsrMatrix::from_triplets(self.nrows, other.ncols, trip)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &CsrMatrix) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, a) in self.iter() {
            for (r2, c2, b) in other.iter() {
                trip.push((r1 * other.nrows + r2, c1 * other.ncols + c2, a * b));
            }
        }
        CsrMatrix::from_triplets(self.nrows * other.nrows, self.ncols * other.ncols, trip)
    }

    /// Restriction to the rows/columns listed in `keep`.
    pub fn restrict(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.nrows.max(self.ncols)];
        for (new, &old) in keep.iter().enumerate() {
            map[old] = new;
        }
        let trip = self
            .iter()
            .filter(|&(r, c, _)| map[r] != usize::MAX && map[c] != usize::MAX)
            .map(|(r, c, v)| (map[r], map[c], v));
        CsrMatrix::from_triplets(keep.len(), keep.len(), trip)
    }

    /// `y += alpha * A x`.
    #[inline]
    pub fn mul_vec_add(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yr += alpha * acc;
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Largest |A - A†| entry.
    pub fn hermiticity_residual(&self) -> f64 {
        let adj = self.adjoint();
        let diff = self.add(&adj.scale(C64::new(-1.0, 0.0)));
        diff.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Coordinate-list text: one `row col re im` line per stored entry.
    pub fn to_coo_text(&self) -> String {
        let mut s = String::new();
        for (r, c, v) in self.iter() {
            s.push_str(&format!("{r} {c} {:.17e} {:.17e}\n", v.re, v.im));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 0, c(0.0))]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(0, 1), c(3.0));
    }

    #[test]
    fn kron_and_matmul_match_dense() {
        let a = CsrMatrix::from_triplets(2, 2, [(0, 1, c(1.0)), (1, 1, C64::new(0.0, 2.0))]);
        let b = CsrMatrix::from_triplets(3, 3, [(0, 0, c(1.0)), (2, 1, c(-1.5))]);
        let k = a.kron(&b).to_dense();
        assert_eq!(k, a.to_dense().kronecker(&b.to_dense()));
        let p = a.matmul(&a.adjoint()).to_dense();
        assert_eq!(p, a.to_dense() * a.to_dense().adjoint());
    }

    #[test]
    fn restrict_keeps_submatrix() {
        let m = CsrMatrix::from_triplets(3, 3, [(0, 2, c(1.0)), (2, 0, c(2.0)), (1, 1, c(5.0))]);
        let r = m.restrict(&[0, 2]);
        assert_eq!(r.get(0, 1), c(1.0));
        assert_eq!(r.get(1, 0), c(2.0));
        assert_eq!(r.nnz(), 2);
    }
}
