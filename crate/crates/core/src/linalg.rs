//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;

/// Singular values of `m` in descending order (empty for an empty matrix).
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Numerical rank with relative threshold: `sigma_k > tol * sigma_max`.
pub fn rank(m: &Mat, tol: f64) -> usize {
    rank_of(&singular_values(m), tol)
}

pub fn rank_of(sv: &[f64], tol: f64) -> usize {
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the right nullspace of `m`.
///
/// Rows are zero-padded up to a square matrix so that the SVD yields the
/// full set of right singular vectors.
pub fn nullspace(m: &Mat, tol: f64) -> Mat {
    let n = m.ncols();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return Mat::identity(n, n);
    }
    let rows = m.nrows().max(n);
    let mut padded = Mat::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..sv.len()).filter(|&k| !(smax > 0.0 && sv[k] > tol * smax)).collect();
    let mut basis = Mat::zeros(n, keep.len());
    for (col, &k) in keep.iter().enumerate() {
        basis.set_column(col, &v_t.row(k).transpose());
    }
    basis
}

/// Vertical concatenation; all blocks must share the column count `ncols`.
pub fn vstack(blocks: &[&Mat], ncols: usize) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), ncols);
        out.view_mut((r, 0), (b.nrows(), ncols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[&Mat], nrows: usize) -> Mat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(nrows, cols);
    let mut c = 0;
    for b in blocks {
        debug_assert_eq!(b.nrows(), nrows);
        out.view_mut((0, c), (nrows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn spectral_norm(m: &Mat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Largest absolute row sum.
pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Least-squares solution via SVD pseudo-inverse, with its residual norm.
pub fn lstsq(a: &Mat, b: &Mat, tol: f64) -> (Mat, f64) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (tol * smax).max(f64::MIN_POSITIVE);
    let x = svd.solve(b, eps).expect("both factors computed");
    let resid = (a * &x - b).norm();
    (x, resid)
}

pub fn rows_to_mat(rows: &[Vec<f64>], ncols: usize) -> Mat {
    Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn column(v: &[f64]) -> Mat {
    Mat::from_column_slice(v.len(), 1, v)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_of_wide_matrix_is_complete() {
        let m = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = nullspace(&m, 1e-9);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - Mat::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn rank_of_zero_matrix() {
        assert_eq!(rank(&Mat::zeros(3, 2), 1e-9), 0);
        assert_eq!(rank(&Mat::zeros(0, 2), 1e-9), 0);
    }

    #[test]
    fn eigenvalues_sorted() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let ev = sym_eigenvalues(&m);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }
}
