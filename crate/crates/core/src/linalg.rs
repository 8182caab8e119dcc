//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

/// Relative tolerance used by [`numeric_rank`].
pub const RANK_TOL: f64 = 1e-10;

/// Half-vectorization of `x xᵀ`: column-major lower triangle
/// `(x₁x₁, x₂x₁, …, x_d x₁, x₂x₂, …, x_d x_d)`.
pub fn vech_outer(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for c in 0..d {
        for r in c..d {
            out.push(x[r] * x[c]);
        }
    }
    out
}

/// Half-vectorization of a square matrix, same ordering as [`vech_outer`].
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for c in 0..d {
        for r in c..d {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Numeric rank of a row-major `n × d` matrix: the number of singular values
/// above `RANK_TOL · σ_max`.
pub fn numeric_rank(x: &[f64], n: usize, d: usize) -> usize {
    if n == 0 || d == 0 {
        return 0;
    }
    let m = DMatrix::from_row_slice(n, d, x);
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Projection of a symmetric matrix onto the PSD cone by clipping negative
/// eigenvalues at zero. Returns the projection and the number of clipped
/// eigenvalues. The input is symmetrized first.
pub fn clip_negative_eigenvalues(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym.clone());
    let clipped = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if clipped == 0 {
        return (sym, 0);
    }
    let lambda = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&lambda) * v.transpose();
    (symmetrize(&out), clipped)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, l| a.max(l.abs()))
}

/// Accumulates `weight · x xᵀ` into the lower triangle of `acc` (row-major
/// `d × d` buffer). Call [`fill_upper`] once accumulation is done.
#[inline]
pub(crate) fn add_outer_lower(acc: &mut [f64], x: &[f64], weight: f64) {
    let d = x.len();
    for r in 0..d {
        let wr = weight * x[r];
        let row = &mut acc[r * d..r * d + r + 1];
        for (c, slot) in row.iter_mut().enumerate() {
            *slot += wr * x[c];
        }
    }
}

/// Copies the lower triangle of a row-major `d × d` buffer into a symmetric
/// matrix.
pub(crate) fn fill_upper(acc: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |r, c| if r >= c { acc[r * d + c] } else { acc[c * d + r] })
}
