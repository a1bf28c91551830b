//! Compressed sparse complex matrices and a direct solver backed by `faer`.

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Mat};

use crate::{CMat, CVec, Error, Result, C64};

/// Row-compressed sparse matrix with summed duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, C64)>) -> Self {
        trips.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in trips {
            assert!(i < nrows && j < ncols, "entry ({i}, {j}) out of bounds");
            if last == Some((i, j)) {
                *vals.last_mut().expect("nonempty") += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { nrows, ncols, row_ptr, cols, vals }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn mul_vec(&self, x: &CVec) -> CVec {
        assert_eq!(x.len(), self.ncols);
        CVec::from_fn(self.nrows, |i, _| self.row(i).map(|(j, v)| v * x[j]).sum())
    }

    /// `A^H x`.
    pub fn adjoint_mul_vec(&self, x: &CVec) -> CVec {
        assert_eq!(x.len(), self.nrows);
        let mut out = CVec::zeros(self.ncols);
        for (i, j, v) in self.triplets() {
            out[j] += v.conj() * x[i];
        }
        out
    }

    /// `max |a_ij - conj(a_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Restriction to the given row and column index lists (in that order).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> SparseMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &c) in cols.iter().enumerate() {
            col_map[c] = k;
        }
        let mut trips = Vec::new();
        for (ni, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                let nj = col_map[j];
                if nj != usize::MAX {
                    trips.push((ni, nj, v));
                }
            }
        }
        SparseMatrix::from_triplets(rows.len(), cols.len(), trips)
    }

    /// `P^T A P` for a (possibly non-injective) index map `p: old -> new`;
    /// entries whose row or column map to `None` are dropped.
    pub fn condense(&self, map: &[Option<usize>], n_new: usize) -> SparseMatrix {
        let trips = self
            .triplets()
            .filter_map(|(i, j, v)| Some((map[i]?, map[j]?, v)))
            .collect();
        SparseMatrix::from_triplets(n_new, n_new, trips)
    }

    pub fn add_scaled(&self, other: &SparseMatrix, s: C64) -> SparseMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let trips = self.triplets().chain(other.triplets().map(|(i, j, v)| (i, j, v * s))).collect();
        SparseMatrix::from_triplets(self.nrows, self.ncols, trips)
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn lu(&self) -> Result<SparseLu> {
        if self.nrows != self.ncols {
            return Err(Error::Solver("matrix is not square".into()));
        }
        let trips: Vec<Triplet<usize, usize, faer::c64>> =
            self.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
        let a = SparseColMat::<usize, faer::c64>::try_new_from_triplets(self.nrows, self.ncols, &trips)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        let lu = a.sp_lu().map_err(|e| Error::Solver(format!("{e:?}")))?;
        Ok(SparseLu { lu, n: self.nrows })
    }
}

/// Sparse LU factorization.
pub struct SparseLu {
    lu: Lu<usize, faer::c64>,
    n: usize,
}

impl SparseLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    fn run(&self, b: &CVec, adjoint: bool) -> CVec {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::<faer::c64>::from_fn(self.n, 1, |i, _| b[i]);
        if adjoint {
            self.lu.solve_transpose_in_place_with_conj(Conj::Yes, rhs.as_mut());
        } else {
            self.lu.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        }
        CVec::from_fn(self.n, |i, _| rhs[(i, 0)])
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &CVec) -> CVec {
        self.run(b, false)
    }

    /// Solve `A^H x = b`.
    pub fn solve_adjoint(&self, b: &CVec) -> CVec {
        self.run(b, true)
    }

    /// Solve for several right-hand sides (columns).
    pub fn solve_columns(&self, b: &CMat) -> CMat {
        assert_eq!(b.nrows(), self.n);
        let mut rhs = Mat::<faer::c64>::from_fn(self.n, b.ncols(), |i, j| b[(i, j)]);
        self.lu.solve_in_place_with_conj(Conj::No, rhs.as_mut());
        CMat::from_fn(self.n, b.ncols(), |i, j| rhs[(i, j)])
    }
}

/// Relative residual `|A x - b| / |b|` (or `|A x|` when `b = 0`).
pub fn relative_residual(a: &SparseMatrix, x: &CVec, b: &CVec) -> f64 {
    let r = a.mul_vec(x) - b;
    let nb = b.norm();
    if nb > 0.0 {
        r.norm() / nb
    } else {
        r.norm()
    }
}
