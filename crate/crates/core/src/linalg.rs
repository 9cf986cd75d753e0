//! Small dense linear-algebra helpers shared by the geometry modules.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

/// Orthonormal basis (as columns) of the kernel of `a`; singular values at or below
/// `tol * max(1, σ_max)` count as zero.
pub(crate) fn null_space(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // pad wide systems so the thin SVD returns a full right basis
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    let mut out = DMatrix::zeros(cols, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &vt.row(i).transpose());
    }
    out
}

/// Orthonormal basis (as columns) of the column span of `a`.
pub(crate) fn column_span(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    if cols == 0 || rows == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = SVD::new(a.clone(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cut = tol * smax.max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    let mut out = DMatrix::zeros(rows, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues and eigenvectors of a symmetric matrix; closed form for 2×2.
pub(crate) fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    if a.nrows() == 2 {
        let (p, q, r) = (a[(0, 0)], 0.5 * (a[(0, 1)] + a[(1, 0)]), a[(1, 1)]);
        let mean = 0.5 * (p + r);
        let rad = (0.5 * (p - r)).hypot(q);
        // rotation angle of the first eigenvector
        let th = 0.5 * (2.0 * q).atan2(p - r);
        let (c, s) = (th.cos(), th.sin());
        return (
            vec![mean + rad, mean - rad],
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
        );
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    (eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors)
}

/// Apply `f` to the eigenvalues of the symmetric matrix `a`.
pub(crate) fn sym_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    if a.nrows() == 2 {
        let (lam, q) = sym_eigen(a);
        let (f0, f1) = (f(lam[0]), f(lam[1]));
        let (c, s) = (q[(0, 0)], q[(1, 0)]);
        let off = (f0 - f1) * c * s;
        return DMatrix::from_row_slice(2, 2, &[f0 * c * c + f1 * s * s, off, off, f0 * s * s + f1 * c * c]);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let fl = f(*lam);
        scaled.column_mut(j).scale_mut(fl);
    }
    symmetrize(&(scaled * q.transpose()))
}

pub(crate) fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v = sym_eigen(a).0;
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

pub(crate) fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}
