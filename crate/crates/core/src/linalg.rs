//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_TOL: f64 = 1e-10;

/// Relative eigenvalue floor used by [`psd_repair`].
pub const PSD_FLOOR: f64 = 1e-10;

/// Minimum-norm least-squares solution of `a x ~ b` through a thin SVD.
///
/// Fails with [`Error::Singular`] when any singular value falls below
/// `rel_tol * s_max`.
pub fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<DVector<f64>> {
    let dim = a.ncols();
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let cutoff = rel_tol * s_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < dim || !(s_max > 0.0) {
        return Err(Error::Singular { rank, dim });
    }
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut coef = u.transpose() * b;
    for (c, s) in coef.iter_mut().zip(svd.singular_values.iter()) {
        *c /= s;
    }
    Ok(vt.transpose() * coef)
}

/// Weighted least squares: minimise `sum_i w_i (r_i - b_i . x)^2`.
pub fn weighted_least_squares(
    basis: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sw = weights.map(f64::sqrt);
    let mut a = basis.clone();
    for (mut row, s) in a.row_iter_mut().zip(sw.iter()) {
        row *= *s;
    }
    let b = response.component_mul(&sw);
    svd_solve(&a, &b, RANK_TOL)
}

/// Average a square matrix with its transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrize, then lift every eigenvalue below `PSD_FLOOR * max_eigenvalue`
/// up to that floor. Returns the repaired matrix and whether any eigenvalue
/// was lifted.
pub fn psd_repair(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let floor = PSD_FLOOR * max.max(0.0);
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    let repaired = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    (symmetrize(&repaired), true)
}

/// Cholesky factor of a symmetric positive-definite matrix with its log
/// determinant cached.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let chol = Cholesky::new(m.clone())?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..m.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        Some(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `b' M^{-1} b`
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        b.dot(&self.solve(b))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// Lower-triangular factor `L` with `M = L L'`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Select the listed columns of `m`, in order.
pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Select the listed rows and columns of a square matrix.
pub fn submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}
