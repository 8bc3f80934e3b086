//! Dense matrix-calculus utilities.
//!
//! Everything here follows the Magnus–Neudecker conventions: `vec` stacks
//! columns, `vech` stacks the lower triangle (diagonal included) column by
//! column, `D_n` maps `vech(A)` to `vec(A)` for symmetric `A` and `N_n`
//! maps `vec(A)` to `vec((A + Aᵀ)/2)`.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, which is column-major, so `vec` is
//! the storage order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative threshold for the pseudoinverse.
pub const PINV_RTOL: f64 = 1e-10;

/// Singular values closer than this (relative to `max(1, σ_max)`) are
/// treated as coincident in [`omega_matrix`].
pub const SINGVAL_GAP_TOL: f64 = 1e-8;

/// Column stacking.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Matrix {
    assert_eq!(v.len(), rows * cols, "unvec: length mismatch");
    Matrix::from_column_slice(rows, cols, v.as_slice())
}

/// Lower-triangular column stacking of a square matrix.
pub fn vech(m: &Matrix) -> Vector {
    assert!(m.is_square(), "vech of a non-square matrix");
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            out.push(m[(i, j)]);
        }
    }
    Vector::from_vec(out)
}

/// Kronecker product; block `(i, j)` is `a[(i, j)] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Duplication matrix `D_n` (`n² × n(n+1)/2`).
pub fn duplication_matrix(n: usize) -> Matrix {
    assert!(n >= 1);
    let mut d = Matrix::zeros(n * n, n * (n + 1) / 2);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            d[(j * n + i, k)] = 1.0;
            d[(i * n + j, k)] = 1.0;
            k += 1;
        }
    }
    d
}

/// Symmetrizer `N_n = (I + K_n)/2` (`n² × n²`), with `K_n` the commutation matrix.
pub fn symmetrizer_matrix(n: usize) -> Matrix {
    assert!(n >= 1);
    let mut s = Matrix::zeros(n * n, n * n);
    for j in 0..n {
        for i in 0..n {
            let r = j * n + i;
            s[(r, r)] += 0.5;
            s[(r, i * n + j)] += 0.5;
        }
    }
    s
}

/// Thin singular value decomposition with singular values sorted
/// nonincreasingly.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub left: Matrix,
    pub singvals: Vector,
    pub right: Matrix,
}

impl SvdFactors {
    pub fn of(m: &Matrix) -> Self {
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let k = svd.singular_values.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .partial_cmp(&svd.singular_values[a])
                .expect("finite singular values")
        });
        let left = Matrix::from_fn(u.nrows(), k, |i, j| u[(i, order[j])]);
        let right = Matrix::from_fn(vt.ncols(), k, |i, j| vt[(order[j], i)]);
        let singvals = Vector::from_fn(k, |i, _| svd.singular_values[order[i]]);
        SvdFactors {
            left,
            singvals,
            right,
        }
    }

    /// Builds factors from given parts, checking shapes only.
    pub fn from_parts(left: Matrix, singvals: Vector, right: Matrix) -> Result<Self> {
        let k = singvals.len();
        if left.ncols() != k || right.ncols() != k {
            return Err(Error::Dimension(format!(
                "svd parts: U has {} cols, V has {} cols, {} singular values",
                left.ncols(),
                right.ncols(),
                k
            )));
        }
        if singvals.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        Ok(SvdFactors {
            left,
            singvals,
            right,
        })
    }

    pub fn reconstruct(&self) -> Matrix {
        &self.left * Matrix::from_diagonal(&self.singvals) * self.right.transpose()
    }

    pub fn rank(&self, rtol: f64) -> usize {
        let smax = self.singvals.iter().cloned().fold(0.0, f64::max);
        self.singvals.iter().filter(|&&s| s > rtol * smax).count()
    }
}

/// Moore–Penrose pseudoinverse. Singular values at or below `tol * σ_max`
/// are treated as zero.
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    assert!(tol > 0.0);
    if m.is_empty() {
        return Matrix::zeros(m.ncols(), m.nrows());
    }
    let f = SvdFactors::of(m);
    let smax = f.singvals.iter().cloned().fold(0.0, f64::max);
    let inv = f
        .singvals
        .map(|s| if smax > 0.0 && s > tol * smax { 1.0 / s } else { 0.0 });
    &f.right * Matrix::from_diagonal(&inv) * f.left.transpose()
}

/// Pseudoinverse of `σ_i² I − Σ²` as a diagonal, zeroing coincident entries.
fn shifted_inverse_diag(singvals: &Vector, i: usize) -> Vector {
    let smax = singvals.iter().cloned().fold(0.0, f64::max);
    let gap = SINGVAL_GAP_TOL * smax.max(1.0);
    let si = singvals[i];
    singvals.map(|sj| {
        if (si - sj).abs() <= gap {
            0.0
        } else {
            1.0 / (si * si - sj * sj)
        }
    })
}

/// The `n² × n²` matrix Ω stacking the blocks
/// `v_iᵀ ⊗ V (σ_i² I − Σ²)⁺ Vᵀ`, i.e. the Jacobian of the right singular
/// vectors with respect to `PᵀP`. Defined for square factors only.
pub fn omega_matrix(svd: &SvdFactors, n: usize) -> Result<Matrix> {
    let v = &svd.right;
    if v.nrows() != n || v.ncols() != n || svd.singvals.len() != n {
        return Err(Error::Dimension(format!(
            "omega_matrix needs square {n}×{n} factors, got V {}×{}",
            v.nrows(),
            v.ncols()
        )));
    }
    let mut omega = Matrix::zeros(n * n, n * n);
    for i in 0..n {
        let inner = v * Matrix::from_diagonal(&shifted_inverse_diag(&svd.singvals, i)) * v.transpose();
        let vi_t = Matrix::from_fn(1, n, |_, j| v[(j, i)]);
        let block = kron(&vi_t, &inner);
        omega.view_mut((i * n, 0), (n, n * n)).copy_from(&block);
    }
    Ok(omega)
}

/// Symmetric eigendecomposition with eigenvalues sorted nonincreasingly.
/// Ties keep the order returned by the underlying solver (stable sort), and
/// each eigenvector is signed so its first non-negligible entry is positive.
pub fn sym_eigen_desc(a: &Matrix) -> (Vector, Matrix) {
    assert!(a.is_square());
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .partial_cmp(&eig.eigenvalues[x])
            .expect("finite eigenvalues")
    });
    let values = Vector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = Matrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    for mut col in vectors.column_iter_mut() {
        let cmax = col.amax();
        if let Some(first) = col.iter().find(|x| x.abs() > 1e-8 * cmax).copied() {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
    (values, vectors)
}

/// Principal square root of a symmetric positive semidefinite matrix.
/// Slightly negative eigenvalues (roundoff) are clamped to zero.
pub fn sqrtm_psd(a: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = sym_eigen_desc(a);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if vals.iter().any(|&v| v < -1e-9 * scale) {
        return Err(Error::NotPositiveSemidefinite);
    }
    let d = vals.map(|v| v.max(0.0).sqrt());
    Ok(&vecs * Matrix::from_diagonal(&d) * vecs.transpose())
}

/// Inverse principal square root of a symmetric positive definite matrix.
pub fn inv_sqrtm_pd(a: &Matrix) -> Result<Matrix> {
    if !is_symmetric(a, 1e-10) {
        return Err(Error::NotPositiveDefinite);
    }
    let (vals, vecs) = sym_eigen_desc(a);
    let scale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if vals.iter().any(|&v| v <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::NotPositiveDefinite);
    }
    let d = vals.map(|v| 1.0 / v.sqrt());
    Ok(&vecs * Matrix::from_diagonal(&d) * vecs.transpose())
}

pub fn is_symmetric(a: &Matrix, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= tol * scale
}

/// Random matrix with i.i.d. standard normal entries.
pub fn gaussian_matrix<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// sign of `R`'s diagonal absorbed).
pub fn random_orthogonal<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let g = gaussian_matrix(rng, n, n);
    qr_orthonormal(&g)
}

/// Orthonormal factor of a QR decomposition, with columns signed so that
/// `R` has a nonnegative diagonal.
pub fn qr_orthonormal(a: &Matrix) -> Matrix {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
