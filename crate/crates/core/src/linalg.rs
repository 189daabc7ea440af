//! Sparse matrices, a restarted GMRES and thin wrappers over faer's sparse LU.

use faer::c64;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Explicit zeros from assembly are kept so
/// that operators built over the same connectivity share a pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        let mut row: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            row.clear();
            row.extend((counts[r]..counts[r + 1]).map(|i| (cols[i], vals[i])));
            row.sort_by_key(|e| e.0);
            let mut last = usize::MAX;
            for &(c, v) in &row {
                if c == last {
                    *values.last_mut().expect("nonempty") += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows, ncols, indptr, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
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

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()].iter().copied().zip(self.values[range].iter().copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Index of entry `(r, c)` in the value array, if stored.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()].binary_search(&c).ok().map(|i| range.start + i)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.indptr[r]..self.indptr[r + 1];
        match self.indices[range.clone()].binary_search(&c) {
            Ok(i) => self.values[range.start + i],
            Err(_) => 0.0,
        }
    }

    /// `y += alpha A x`.
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[i] * x[self.indices[i]];
            }
            *yr += alpha * acc;
        }
    }

    /// `y += alpha A^T x`.
    pub fn mul_add_transpose(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for i in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[i]] += alpha * self.values[i] * xr;
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_add(1.0, x, &mut y);
        y
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.mul_add_transpose(1.0, x, &mut y);
        y
    }

    /// `y^T A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        dot(y, &self.mul_vec(x))
    }

    /// Submatrix on the given rows and columns. `col_map[c]` is the new
    /// column of `c`, or `None` to drop it.
    pub fn select(&self, rows: &[usize], col_map: &[Option<usize>], ncols: usize) -> CsrMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &r in rows {
            for (c, v) in self.row(r) {
                if let Some(nc) = col_map[c] {
                    indices.push(nc);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        // columns stay sorted when col_map is monotone; otherwise re-sort
        let mut m = CsrMatrix { nrows: rows.len(), ncols, indptr, indices, values };
        if !m.columns_sorted() {
            let t: Vec<_> = m.iter().collect();
            m = CsrMatrix::from_triplets(m.nrows, ncols, &t);
        }
        m
    }

    fn columns_sorted(&self) -> bool {
        (0..self.nrows).all(|r| self.indices[self.indptr[r]..self.indptr[r + 1]].windows(2).all(|w| w[0] < w[1]))
    }

    /// Values of `self` laid out on `pattern`'s sparsity (which must contain
    /// every entry of `self`).
    pub fn values_on(&self, pattern: &CsrMatrix) -> Vec<f64> {
        assert_eq!((self.nrows, self.ncols), (pattern.nrows, pattern.ncols));
        let mut out = vec![0.0; pattern.nnz()];
        for r in 0..self.nrows {
            let prange = pattern.indptr[r]..pattern.indptr[r + 1];
            let pcols = &pattern.indices[prange.clone()];
            let mut j = 0;
            for (c, v) in self.row(r) {
                while pcols[j] < c {
                    j += 1;
                }
                assert_eq!(pcols[j], c, "entry ({r}, {c}) missing from pattern");
                out[prange.start + j] = v;
            }
        }
        out
    }

    /// Copy with the same pattern and new values.
    pub fn with_values(&self, values: Vec<f64>) -> CsrMatrix {
        assert_eq!(values.len(), self.nnz());
        CsrMatrix { values, ..self.clone() }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let t: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &t)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            d[(r, c)] += v;
        }
        d
    }

    pub fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let t: Vec<_> = self.iter().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .map_err(|e| Error::InvalidArgument(format!("sparse matrix construction: {e:?}")))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Direct sparse LU of a real matrix.
pub struct DirectSolver {
    lu: Lu<usize, f64>,
    n: usize,
}

impl DirectSolver {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch("LU of a non-square matrix".into()));
        }
        let lu = matrix
            .to_faer()?
            .sp_lu()
            .map_err(|e| Error::SolverFailure { slab: 0, message: format!("sparse LU: {e:?}") })?;
        Ok(DirectSolver { lu, n: matrix.nrows() })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = Mat::<f64>::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Sparse LU of a complex matrix given as `(row, col, value)` triplets,
/// with the symbolic analysis reusable for matrices of the same pattern.
pub struct ComplexSolver {
    lu: Lu<usize, c64>,
    n: usize,
}

impl ComplexSolver {
    pub fn symbolic(n: usize, triplets: &[(usize, usize, c64)]) -> Result<SymbolicLu<usize>> {
        let m = complex_matrix(n, triplets)?;
        SymbolicLu::try_new(m.symbolic())
            .map_err(|e| Error::SolverFailure { slab: 0, message: format!("symbolic LU: {e:?}") })
    }

    pub fn new(symbolic: SymbolicLu<usize>, n: usize, triplets: &[(usize, usize, c64)]) -> Result<Self> {
        let m = complex_matrix(n, triplets)?;
        let lu = Lu::try_new_with_symbolic(symbolic, m.as_ref())
            .map_err(|e| Error::SolverFailure { slab: 0, message: format!("sparse LU: {e:?}") })?;
        Ok(ComplexSolver { lu, n })
    }

    /// Solves for several right-hand sides stored column-wise.
    pub fn solve(&self, rhs: &Mat<c64>) -> Mat<c64> {
        debug_assert_eq!(rhs.nrows(), self.n);
        self.lu.solve(rhs)
    }
}

fn complex_matrix(n: usize, triplets: &[(usize, usize, c64)]) -> Result<SparseColMat<usize, c64>> {
    let t: Vec<_> = triplets.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    SparseColMat::try_new_from_triplets(n, n, &t)
        .map_err(|e| Error::InvalidArgument(format!("sparse matrix construction: {e:?}")))
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Right-preconditioned restarted GMRES for `A x = b`, starting from the
/// contents of `x`. The relative residual is measured against `|b|` with
/// the true (not recursive) residual at every restart.
pub fn gmres(
    apply: &dyn Fn(&[f64], &mut [f64]),
    precondition: &dyn Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iters: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return GmresOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut total = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        apply(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= tol || total >= max_iters {
            return GmresOutcome { iterations: total, relative_residual: rel, converged: rel <= tol };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut steps = 0;
        for j in 0..restart {
            precondition(&basis[j], &mut z);
            apply(&z, &mut w);
            for _ in 0..2 {
                for (i, v) in basis.iter().enumerate() {
                    let c = dot(&w, v);
                    h[i][j] += c;
                    w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= c * vk);
                }
            }
            let hn = norm(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let d = h[j][j].hypot(h[j + 1][j]);
            cs[j] = h[j][j] / d;
            sn[j] = h[j + 1][j] / d;
            h[j][j] = d;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            steps = j + 1;
            total += 1;
            if g[j + 1].abs() / bnorm <= 0.1 * tol || hn == 0.0 || total >= max_iters {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let s: f64 = (i + 1..steps).map(|k| h[i][k] * y[k]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (yi, v) in y.iter().zip(&basis) {
            update.iter_mut().zip(v).for_each(|(u, vk)| *u += yi * vk);
        }
        precondition(&update, &mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(n: usize, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 8.0 + rng.gen::<f64>()));
            for _ in 0..4 {
                t.push((i, rng.gen_range(0..n), rng.gen_range(-1.0..1.0)));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 0.5)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(1, 2), 1.5);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![2.0, 4.5]);
        assert_eq!(m.mul_vec_transpose(&[1.0, 1.0]), vec![3.0, 2.0, 1.5]);
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn select_and_pattern_values() {
        let m = random_sparse(30, 1);
        let rows: Vec<_> = (0..30).step_by(2).collect();
        let mut col_map = vec![None; 30];
        for (i, c) in (0..30).filter(|c| c % 3 != 0).enumerate() {
            col_map[c] = Some(i);
        }
        let s = m.select(&rows, &col_map, 20);
        for (i, &r) in rows.iter().enumerate() {
            for c in 0..30 {
                if let Some(nc) = col_map[c] {
                    assert_eq!(s.get(i, nc), m.get(r, c));
                }
            }
        }
        let sub = CsrMatrix::from_triplets(30, 30, &[(3, m.row(3).next().unwrap().0, 7.0)]);
        let v = sub.values_on(&m);
        assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(m.with_values(v).get(3, m.row(3).next().unwrap().0), 7.0);
    }

    #[test]
    fn direct_solver_examples() {
        let id = CsrMatrix::identity(4);
        let b = vec![1.0, -2.0, 3.0, 0.5];
        assert_eq!(DirectSolver::new(&id).unwrap().solve(&b), b);
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = DirectSolver::new(&m).unwrap().solve(&[3.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_sparse_residual() {
        let m = random_sparse(500, 3);
        let b: Vec<f64> = (0..500).map(|i| (i as f64).sin()).collect();
        let x = DirectSolver::new(&m).unwrap().solve(&b);
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm(&r) <= 1e-12 * norm(&b));
    }

    #[test]
    fn gmres_converges_with_and_without_preconditioner() {
        let m = random_sparse(300, 4);
        let b: Vec<f64> = (0..300).map(|i| (i as f64).cos()).collect();
        let apply = |x: &[f64], y: &mut [f64]| {
            y.iter_mut().for_each(|v| *v = 0.0);
            m.mul_add(1.0, x, y);
        };
        let ident = |x: &[f64], y: &mut [f64]| y.copy_from_slice(x);
        let mut x = vec![0.0; 300];
        let out = gmres(&apply, &ident, &b, &mut x, 1e-12, 40, 400);
        assert!(out.converged, "{out:?}");
        let r: Vec<f64> = m.mul_vec(&x).iter().zip(&b).map(|(a, b)| a - b).collect();
        assert!(norm(&r) <= 1e-12 * norm(&b));

        let lu = DirectSolver::new(&m).unwrap();
        let pre = |x: &[f64], y: &mut [f64]| y.copy_from_slice(&lu.solve(x));
        let mut x = vec![0.0; 300];
        let out = gmres(&apply, &pre, &b, &mut x, 1e-12, 40, 400);
        assert!(out.converged && out.iterations <= 2, "{out:?}");
    }

    #[test]
    fn complex_solver_round_trip() {
        let n = 3;
        let t = vec![
            (0, 0, c64::new(2.0, 1.0)),
            (1, 1, c64::new(1.0, -1.0)),
            (2, 2, c64::new(0.0, 3.0)),
            (0, 2, c64::new(1.0, 0.0)),
        ];
        let s = ComplexSolver::new(ComplexSolver::symbolic(n, &t).unwrap(), n, &t).unwrap();
        let b = Mat::<c64>::from_fn(3, 1, |i, _| c64::new(i as f64, 1.0));
        let x = s.solve(&b);
        let x2 = x[(2, 0)];
        let r0 = c64::new(2.0, 1.0) * x[(0, 0)] + x2 - b[(0, 0)];
        assert!(r0.norm() < 1e-14);
        assert!((c64::new(0.0, 3.0) * x2 - b[(2, 0)]).norm() < 1e-14);
    }
}
