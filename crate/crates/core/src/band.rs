//! Banded matrices and Gaussian elimination without pivoting.
//!
//! Used for the window chains of the walk oracles, whose generator `I - Q`
//! is a diagonally dominant M-matrix with bandwidth equal to the longest
//! admissible jump. Elimination without pivoting is stable for that class
//! and keeps all fill inside the band.

use crate::error::{Error, Result};

/// Residual bound every certified solve must meet.
pub const RESIDUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-14;

/// Square band matrix with `kl` sub- and `ku` super-diagonals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    /// Builds from sparse rows `(column, value)`; bandwidths are inferred.
    pub fn from_rows(rows: &[Vec<(usize, f64)>]) -> Self {
        let n = rows.len();
        let (mut kl, mut ku) = (0, 0);
        for (i, row) in rows.iter().enumerate() {
            for &(j, _) in row {
                assert!(j < n, "column {j} out of range");
                kl = kl.max(i.saturating_sub(j));
                ku = ku.max(j.saturating_sub(i));
            }
        }
        let mut m = Self::zeros(n, kl, ku);
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                m.add(i, j, v);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            for j in self.cols(i) {
                t.add(j, i, self.get(i, j));
            }
        }
        t
    }

    fn cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.cols(i).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    /// `‖A x - b‖∞`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(b).map(|(ax, bi)| (ax - bi).abs()).fold(0.0, f64::max)
    }

    /// In-place LU factorization (unit lower factor stored below the diagonal).
    pub fn factor(&self) -> Result<BandLu> {
        let mut lu = self.clone();
        let n = self.n;
        for k in 0..n {
            let piv = lu.data[lu.idx(k, k)];
            let scale = lu.cols(k).map(|j| lu.get(k, j).abs()).fold(0.0, f64::max);
            if !(piv.abs() > PIVOT_TOL * scale.max(1.0)) {
                return Err(Error::Singular(format!("zero pivot at row {k} of {n}")));
            }
            let i_end = (k + self.kl + 1).min(n);
            let j_end = (k + self.ku + 1).min(n);
            for i in k + 1..i_end {
                let ik = lu.idx(i, k);
                let l = lu.data[ik] / piv;
                lu.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..j_end {
                        let kj = lu.data[lu.idx(k, j)];
                        let ij = lu.idx(i, j);
                        lu.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(BandLu { a: self.clone(), lu })
    }

    /// Solves `A x = b` and certifies the residual.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.factor()?.solve(b)
    }
}

/// A factored band matrix, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct BandLu {
    a: BandMatrix,
    lu: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let lu = &self.lu;
        let n = lu.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in 0..n {
            let s: f64 = (i.saturating_sub(lu.kl)..i).map(|j| lu.data[lu.idx(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..(i + lu.ku + 1).min(n)).map(|j| lu.data[lu.idx(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / lu.data[lu.idx(i, i)];
        }
        let r = self.a.residual(&x, b);
        if !(r < RESIDUAL_TOL) {
            return Err(Error::Singular(format!("residual {r:.3e} exceeds {RESIDUAL_TOL:e}")));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn dense(m: &BandMatrix) -> DMatrix<f64> {
        DMatrix::from_fn(m.n(), m.n(), |i, j| m.get(i, j))
    }

    #[test]
    fn tridiagonal_known_solution() {
        let rows: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|i| {
                let mut r = vec![(i, 2.0)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i < 4 {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        let m = BandMatrix::from_rows(&rows);
        assert_eq!(m.bandwidths(), (1, 1));
        let x = m.solve(&[1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        for xi in x {
            assert!((xi - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = BandMatrix::from_rows(&[vec![(0, 1.0), (1, -1.0)], vec![(0, -1.0), (1, 1.0)]]);
        assert!(matches!(m.solve(&[0.0, 0.0]), Err(Error::Singular(_))));
    }

    proptest! {
        #[test]
        fn agrees_with_dense_lu(
            n in 1usize..40,
            kl in 0usize..6,
            ku in 0usize..6,
            entries in proptest::collection::vec(0.0f64..1.0, 40 * 13),
            rhs in proptest::collection::vec(-1.0f64..1.0, 40),
        ) {
            // Diagonally dominant M-matrix with random off-diagonal pattern.
            let mut m = BandMatrix::zeros(n, kl, ku);
            for i in 0..n {
                let mut off = 0.0;
                for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                    if j != i {
                        let v = entries[(i * 13 + j + kl - i) % entries.len()];
                        m.add(i, j, -v);
                        off += v;
                    }
                }
                m.add(i, i, off + 0.1);
            }
            let b = &rhs[..n];
            let x = m.solve(b).unwrap();
            let d = dense(&m).lu().solve(&DVector::from_row_slice(b)).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - d[i]).abs() < 1e-9 * (1.0 + d[i].abs()));
            }
            let t = m.transpose();
            prop_assert_eq!(dense(&t), dense(&m).transpose());
        }
    }
}
