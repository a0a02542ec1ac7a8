//! Dense row-major matrices and symmetric eigensolvers.

use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer has wrong length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Fails on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims(cols, r.len(), format!("row {i}")));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; an empty-width matrix yields empty rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · v` for a column vector `v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dims(self.rows, other.rows, "hstack row count"));
        }
        let mut data = Vec::with_capacity(self.rows * (self.cols + other.cols));
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix::from_vec(self.rows, self.cols + other.cols, data))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows)
                .all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Eigendecomposition of a symmetric matrix: `values` ascending, column `j`
/// of `vectors` is the unit eigenvector for `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Dense symmetric eigensolver: Householder tridiagonalisation followed by
/// implicit-shift QL iterations.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dims(n, a.cols(), "symmetric_eigen needs a square matrix"));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: vec![],
            vectors: Matrix::zeros(0, 0),
        });
    }
    let mut v = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

fn tridiagonalize(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(v: &mut Matrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Internal(
                        "symmetric eigensolver failed to converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..n] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Result of [`top_eigenpairs`]: `values` descending, column `j` of
/// `vectors` (n×k) pairs with `values[j]`.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    /// Largest residual norm `‖A u − θ u‖` over the returned pairs.
    pub max_residual: f64,
}

/// Orthonormalises `v` against `basis` (two Gram-Schmidt passes). Returns
/// `None` when `v` is numerically inside the span.
fn orthonormalize_against(basis: &[Vec<f64>], mut v: Vec<f64>) -> Option<Vec<f64>> {
    let start = norm(&v);
    if start == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
    }
    let len = norm(&v);
    if len <= 1e-10 * start {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= len);
    Some(v)
}

/// The `k` algebraically largest eigenpairs of a symmetric matrix, by block
/// Krylov expansion with full reorthogonalisation and Rayleigh-Ritz
/// extraction. The block width equals `k`, so eigenvalues of multiplicity up
/// to `k` are resolved. Falls back to the dense solver for small `n`.
pub fn top_eigenpairs(a: &Matrix, k: usize, seed: u64) -> Result<TopEigen> {
    let n = a.rows();
    if k == 0 || k > n {
        return Err(Error::BadRank { rank: k, max: n });
    }
    if n <= DENSE_CUTOFF {
        return dense_top(a, k);
    }
    krylov_top(a, k, seed, KRYLOV_TOL, KRYLOV_MAX_BASIS.min(n))
}

/// Matrices at most this large are decomposed densely.
pub const DENSE_CUTOFF: usize = 400;
const KRYLOV_TOL: f64 = 1e-10;
const KRYLOV_MAX_BASIS: usize = 800;

fn dense_top(a: &Matrix, k: usize) -> Result<TopEigen> {
    let n = a.rows();
    let eig = symmetric_eigen(a)?;
    let mut vectors = Matrix::zeros(n, k);
    let mut values = Vec::with_capacity(k);
    for j in 0..k {
        let src = n - 1 - j;
        values.push(eig.values[src]);
        for i in 0..n {
            vectors[(i, j)] = eig.vectors[(i, src)];
        }
    }
    let max_residual = residual(a, &values, &vectors);
    Ok(TopEigen {
        values,
        vectors,
        max_residual,
    })
}

fn residual(a: &Matrix, values: &[f64], vectors: &Matrix) -> f64 {
    (0..values.len())
        .map(|j| {
            let u = vectors.column(j);
            let au = a.matvec(&u);
            au.iter()
                .zip(&u)
                .map(|(x, y)| (x - values[j] * y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Block Krylov solver; exposed so tests can exercise it below the dense cutoff.
pub fn krylov_top(a: &Matrix, k: usize, seed: u64, tol: f64, max_basis: usize) -> Result<TopEigen> {
    let n = a.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();

    let mut block: Vec<Vec<f64>> = Vec::new();
    while block.len() < k {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut against = basis.clone();
        against.extend(block.iter().cloned());
        if let Some(q) = orthonormalize_against(&against, v) {
            block.push(q);
        }
    }

    let scale = a.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    loop {
        let added = block.len();
        for q in block.drain(..) {
            images.push(a.matvec(&q));
            basis.push(q);
        }
        let m = basis.len();
        // Rayleigh quotient H = Qᵀ A Q, symmetrised against rounding.
        let mut h = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let x = 0.5 * (dot(&basis[i], &images[j]) + dot(&basis[j], &images[i]));
                h[(i, j)] = x;
                h[(j, i)] = x;
            }
        }
        let eig = symmetric_eigen(&h)?;
        let mut values = Vec::with_capacity(k);
        let mut vectors = Matrix::zeros(n, k);
        let mut max_residual: f64 = 0.0;
        for j in 0..k.min(m) {
            let src = m - 1 - j;
            let theta = eig.values[src];
            let mut u = vec![0.0; n];
            let mut au = vec![0.0; n];
            for c in 0..m {
                let y = eig.vectors[(c, src)];
                for i in 0..n {
                    u[i] += y * basis[c][i];
                    au[i] += y * images[c][i];
                }
            }
            let r = au
                .iter()
                .zip(&u)
                .map(|(x, y)| (x - theta * y).powi(2))
                .sum::<f64>()
                .sqrt();
            max_residual = max_residual.max(r);
            values.push(theta);
            for i in 0..n {
                vectors[(i, j)] = u[i];
            }
        }

        let converged = m >= k && max_residual <= tol * scale;
        let mut next = Vec::new();
        if !converged && m < max_basis {
            let fresh: Vec<Vec<f64>> = images[m - added..].to_vec();
            for v in fresh {
                let mut against = basis.clone();
                against.extend(next.iter().cloned());
                if let Some(q) = orthonormalize_against(&against, v) {
                    next.push(q);
                    if basis.len() + next.len() >= max_basis {
                        break;
                    }
                }
            }
        }
        if next.is_empty() {
            if !converged {
                log::warn!(
                    "eigensolver stopped at basis size {m} with residual {max_residual:.3e}"
                );
            }
            return Ok(TopEigen {
                values,
                vectors,
                max_residual,
            });
        }
        block = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x: f64 = rng.gen_range(-1.0..1.0);
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    #[test]
    fn diagonal_matrix_eigenvalues_sorted() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = -1.0;
        a[(2, 2)] = 2.0;
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.values, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        for seed in 0..5 {
            let a = random_symmetric(17, seed);
            let eig = symmetric_eigen(&a).unwrap();
            let v = &eig.vectors;
            // V diag(λ) Vᵀ == A and VᵀV == I
            for i in 0..17 {
                for j in 0..17 {
                    let mut rec = 0.0;
                    let mut gram = 0.0;
                    for k in 0..17 {
                        rec += v[(i, k)] * eig.values[k] * v[(j, k)];
                        gram += v[(k, i)] * v[(k, j)];
                    }
                    assert!((rec - a[(i, j)]).abs() < 1e-12);
                    let id = if i == j { 1.0 } else { 0.0 };
                    assert!((gram - id).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn one_by_one() {
        let a = Matrix::from_vec(1, 1, vec![4.5]);
        let eig = symmetric_eigen(&a).unwrap();
        assert_eq!(eig.values, vec![4.5]);
        assert_eq!(eig.vectors[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn krylov_matches_dense() {
        let a = random_symmetric(120, 9);
        let dense = dense_top(&a, 4).unwrap();
        let kry = krylov_top(&a, 4, 3, 1e-11, 120).unwrap();
        for j in 0..4 {
            assert!((dense.values[j] - kry.values[j]).abs() < 1e-9, "{j}");
            let d = dense.vectors.column(j);
            let k = kry.vectors.column(j);
            assert!(dot(&d, &k).abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn krylov_resolves_repeated_top_eigenvalue() {
        // Two identical disconnected blocks: the top eigenvalue is doubled.
        let n = 60;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if (i < 30) == (j < 30) && i != j {
                    a[(i, j)] = 1.0 / 29.0;
                }
            }
        }
        let kry = krylov_top(&a, 2, 5, 1e-12, n).unwrap();
        assert!((kry.values[0] - 1.0).abs() < 1e-10);
        assert!((kry.values[1] - 1.0).abs() < 1e-10);
    }
}
