//! Small dense linear-algebra helpers shared by every module.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`; the systems of interest
//! have a handful of states, so no attempt is made at blocking or sparsity.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Matrix exponential by scaling and squaring with a Padé approximant.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.exp()
}

/// Largest singular value, from the symmetric eigenproblem of `MᵀM`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.max().max(0.0).sqrt()
}

/// Largest absolute deviation between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks symmetry up to a scale-aware tolerance.
pub fn ensure_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSymmetric {
            asymmetry: f64::INFINITY,
        });
    }
    let asym = asymmetry(m);
    if asym > 1e-9 * (1.0 + m.amax()) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues in ascending order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut values: Vec<Complex<f64>> = m.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    values
}

/// Quadratic form `xᵀ P x`.
pub fn quad_form(p: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(p * x))
}

/// `(e^{At}, ∫₀ᵗ e^{Aτ}dτ · B)` from one exponential of the augmented matrix
/// `[[A, B], [0, 0]]·t`.
pub fn exp_and_hold(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * t));
    let e = expm(&aug);
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    )
}

/// Solves the continuous Lyapunov equation `AᵀX + XA + Q = 0` through the
/// Kronecker-vectorised linear system. Intended for small `n`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // Column-major vec: vec(AᵀX) = (I ⊗ Aᵀ) vec X, vec(XA) = (Aᵀ ⊗ I) vec X.
    let lhs = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = lhs.lu().solve(&rhs).ok_or_else(|| Error::Parameter {
        name: "A",
        detail: "Lyapunov operator is singular (A has eigenvalues λ_i + λ_j = 0)".into(),
    })?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}
