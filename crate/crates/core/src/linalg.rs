use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Jitter doublings attempted before a factorization is declared singular.
pub(crate) const MAX_JITTER_DOUBLINGS: usize = 8;

pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Ratio of extreme eigenvalues, for error reports only.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization that adds `jitter`, doubling it up to
/// [`MAX_JITTER_DOUBLINGS`] times, when the plain factorization fails.
/// Returns the factor and the extra diagonal actually added.
pub(crate) fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    jitter: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let mut extra = jitter.max(f64::EPSILON * mean_abs_diag(m).max(1.0));
    for _ in 0..MAX_JITTER_DOUBLINGS {
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += extra;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, extra));
        }
        extra *= 2.0;
    }
    Err(Error::Numerical(format!(
        "matrix of order {} is not positive definite after jitter {extra:e} (condition estimate {:e})",
        m.nrows(),
        condition_estimate(m)
    )))
}

fn mean_abs_diag(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / m.nrows() as f64
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and the
/// eigenvector columns permuted to match.
pub(crate) fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// A symmetric matrix that is block diagonal after a permutation: each block
/// acts on an index set of the full space; indices outside every block are
/// zero rows and columns.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockDiag {
    pub dim: usize,
    pub blocks: Vec<(Vec<usize>, DMatrix<f64>)>,
}

impl BlockDiag {
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (idx, b) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                let mut acc = 0.0;
                for (c, &j) in idx.iter().enumerate() {
                    acc += b[(r, c)] * v[j];
                }
                out[i] = acc;
            }
        }
        out
    }

    /// `self · m` for a dense `dim × k` matrix.
    pub fn mul_left(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, m.ncols());
        for (idx, b) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                for col in 0..m.ncols() {
                    let mut acc = 0.0;
                    for (c, &j) in idx.iter().enumerate() {
                        acc += b[(r, c)] * m[(j, col)];
                    }
                    out[(i, col)] = acc;
                }
            }
        }
        out
    }

    /// `self · m · self` for a dense symmetric `m`.
    pub fn sandwich(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let left = self.mul_left(m);
        // (S (S M)ᵀ)ᵀ = S M S because S is symmetric.
        let mut out = self.mul_left(&left.transpose()).transpose();
        symmetrize(&mut out);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (idx, b) in &self.blocks {
            for (r, &i) in idx.iter().enumerate() {
                for (c, &j) in idx.iter().enumerate() {
                    out[(i, j)] = b[(r, c)];
                }
            }
        }
        out
    }

    /// Clamps negative eigenvalues of every block to zero. Returns the
    /// repaired matrix and its symmetric square root.
    pub fn psd_repair_with_sqrt(&self) -> (BlockDiag, BlockDiag) {
        let mut repaired = Vec::with_capacity(self.blocks.len());
        let mut roots = Vec::with_capacity(self.blocks.len());
        for (idx, b) in &self.blocks {
            let eig = SymmetricEigen::new(b.clone());
            let clamped = eig.eigenvalues.map(|l| l.max(0.0));
            let v = &eig.eigenvectors;
            let fixed = v * DMatrix::from_diagonal(&clamped) * v.transpose();
            let root = v * DMatrix::from_diagonal(&clamped.map(f64::sqrt)) * v.transpose();
            let mut fixed = fixed;
            let mut root = root;
            symmetrize(&mut fixed);
            symmetrize(&mut root);
            repaired.push((idx.clone(), fixed));
            roots.push((idx.clone(), root));
        }
        (
            BlockDiag { dim: self.dim, blocks: repaired },
            BlockDiag { dim: self.dim, blocks: roots },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_block() -> BlockDiag {
        BlockDiag {
            dim: 5,
            blocks: vec![
                (vec![0, 3], DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])),
                (vec![4], DMatrix::from_element(1, 1, 3.0)),
            ],
        }
    }

    #[test]
    fn block_products_match_dense() {
        let s = sample_block();
        let dense = s.to_dense();
        let m = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let v = DVector::from_fn(5, |i, _| i as f64 - 1.5);
        assert!((s.mul_vec(&v) - &dense * &v).amax() < 1e-14);
        assert!((s.mul_left(&m) - &dense * &m).amax() < 1e-14);
        assert!((s.sandwich(&m) - &dense * &m * &dense).amax() < 1e-14);
    }

    #[test]
    fn repair_clamps_negative_eigenvalues() {
        let s = BlockDiag {
            dim: 2,
            blocks: vec![(vec![0, 1], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]))],
        };
        let (fixed, root) = s.psd_repair_with_sqrt();
        let (vals, _) = sorted_symmetric_eigen(&fixed.to_dense());
        assert!((vals[0] - 3.0).abs() < 1e-12 && vals[1].abs() < 1e-12);
        let r = root.to_dense();
        assert!((&r * &r - fixed.to_dense()).amax() < 1e-12);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let (_, extra) = cholesky_with_jitter(&m, 1e-6).unwrap();
        assert!(extra > 0.0);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_with_jitter(&bad, 1e-6).is_err());
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        let (vals, vecs) = sorted_symmetric_eigen(&m);
        assert_eq!(vals, vec![5.0, 3.0, 1.0]);
        assert_eq!(vecs[(1, 0)].abs(), 1.0);
    }
}
