//! Two-way cluster-robust variance estimation for quantile regression.
//!
//! From the estimated scores `ψ̂_gh` three pieces are formed, each normalized
//! by `n²` (`G²H²` on a complete grid):
//!
//! - `Ω_I`: same-row, different-column cross products `ψ̂_gh ψ̂_gh'ᵀ`;
//! - `Ω_II`: same-column, different-row cross products `ψ̂_gh ψ̂_g'hᵀ`;
//! - `Ω_diag`: own products `ψ̂_gh ψ̂_ghᵀ`.
//!
//! The two-way estimator (CTW) projects `Ω_I` and `Ω_II` onto the PSD cone
//! separately and adds `Ω_diag`. The comparators reuse the same pieces:
//! CG = `Ω_I + Ω_diag`, CH = `Ω_II + Ω_diag`, CI = `Ω_diag` and
//! CTW_II = CG + CH.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jacobian::JacobianEstimate;
use crate::linalg::{add_outer_lower, clip_negative_eigenvalues, fill_upper, symmetrize};
use crate::qr::{QuantileFit, ScoreMatrix};
use crate::stats::normal_sf;

/// Relative eigenvalue floor below which `D̂` counts as singular.
pub const JACOBIAN_COND_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CrveError {
    #[error("need at least two clusters per dimension, got G={g}, H={h}")]
    TooFewClusters { g: usize, h: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not square ({0}×{1})")]
    NotSquare(usize, usize),
    #[error("Jacobian estimate is singular (min/max eigenvalue {0:.3e})")]
    SingularJacobian(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("standard error of coefficient {0} is zero")]
    ZeroStdError(usize),
    #[error("coefficient index {index} out of range for d = {d}")]
    IndexOutOfRange { index: usize, d: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrveKind {
    #[serde(rename = "CTW")]
    Ctw,
    #[serde(rename = "CG")]
    Cg,
    #[serde(rename = "CH")]
    Ch,
    #[serde(rename = "CI")]
    Ci,
    #[serde(rename = "CTW_II")]
    CtwII,
}

impl CrveKind {
    pub const ALL: [CrveKind; 5] = [CrveKind::Ctw, CrveKind::Cg, CrveKind::Ch, CrveKind::Ci, CrveKind::CtwII];

    pub fn tag(self) -> &'static str {
        match self {
            CrveKind::Ctw => "CTW",
            CrveKind::Cg => "CG",
            CrveKind::Ch => "CH",
            CrveKind::Ci => "CI",
            CrveKind::CtwII => "CTW_II",
        }
    }
}

impl fmt::Display for CrveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for CrveKind {
    type Err = String;

    /// Accepts the command-line spellings (`ctw|cg|ch|ci|ctw2`) and the tags.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ctw" => Ok(CrveKind::Ctw),
            "cg" => Ok(CrveKind::Cg),
            "ch" => Ok(CrveKind::Ch),
            "ci" => Ok(CrveKind::Ci),
            "ctw2" | "ctw_ii" => Ok(CrveKind::CtwII),
            _ => Err(format!("unknown CRVE kind `{s}` (expected ctw, cg, ch, ci or ctw2)")),
        }
    }
}

/// Eigenvalue correction: symmetrize, then clip negative eigenvalues at 0.
pub fn evc(m: &DMatrix<f64>) -> Result<DMatrix<f64>, CrveError> {
    evc_with_count(m).map(|(p, _)| p)
}

/// [`evc`] that also reports how many eigenvalues were clipped.
pub fn evc_with_count(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize), CrveError> {
    if m.nrows() != m.ncols() {
        return Err(CrveError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CrveError::NonFinite);
    }
    Ok(clip_negative_eigenvalues(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaComponents {
    pub kind: CrveKind,
    /// Same-row cross products, before EVC.
    pub omega_i_raw: DMatrix<f64>,
    /// Same-column cross products, before EVC.
    pub omega_ii_raw: DMatrix<f64>,
    pub omega_i: DMatrix<f64>,
    pub omega_ii: DMatrix<f64>,
    pub omega_diag: DMatrix<f64>,
    /// Kind-specific total used in the sandwich.
    pub omega_total: DMatrix<f64>,
    pub clipped_i: usize,
    pub clipped_ii: usize,
}

impl OmegaComponents {
    /// Full one-way row-cluster matrix `Ω_I + Ω_diag`.
    pub fn cg_form(&self) -> DMatrix<f64> {
        &self.omega_i_raw + &self.omega_diag
    }

    /// Full one-way column-cluster matrix `Ω_II + Ω_diag`.
    pub fn ch_form(&self) -> DMatrix<f64> {
        &self.omega_ii_raw + &self.omega_diag
    }

    /// The total for another kind, from the same pieces.
    pub fn total_for(&self, kind: CrveKind) -> DMatrix<f64> {
        match kind {
            CrveKind::Ctw => &self.omega_i + &self.omega_ii + &self.omega_diag,
            CrveKind::Cg => self.cg_form(),
            CrveKind::Ch => self.ch_form(),
            CrveKind::Ci => self.omega_diag.clone(),
            CrveKind::CtwII => &self.omega_i_raw + &self.omega_ii_raw + &self.omega_diag * 2.0,
        }
    }

    pub fn with_kind(mut self, kind: CrveKind) -> Self {
        self.omega_total = self.total_for(kind);
        self.kind = kind;
        self
    }
}

/// Raw pieces without the cluster-count guard.
pub(crate) fn omega_parts(scores: &ScoreMatrix) -> Result<OmegaComponents, CrveError> {
    let d = scores.d();
    let (g_count, h_count) = (scores.g_count(), scores.h_count());
    let mut row_sums = vec![0.0; g_count * d];
    let mut col_sums = vec![0.0; h_count * d];
    let mut diag = vec![0.0; d * d];
    for (i, c) in scores.cells().iter().enumerate() {
        let s = scores.score(i);
        add_outer_lower(&mut diag, s, 1.0);
        for j in 0..d {
            row_sums[c.g * d + j] += s[j];
            col_sums[c.h * d + j] += s[j];
        }
    }
    // clusters are visited in order of first appearance among the stored
    // cells, so renaming labels cannot change the floating-point sum order
    let mut rows = vec![0.0; d * d];
    for g in first_appearance(scores.cells().iter().map(|c| c.g), g_count) {
        add_outer_lower(&mut rows, &row_sums[g * d..(g + 1) * d], 1.0);
    }
    let mut cols = vec![0.0; d * d];
    for h in first_appearance(scores.cells().iter().map(|c| c.h), h_count) {
        add_outer_lower(&mut cols, &col_sums[h * d..(h + 1) * d], 1.0);
    }
    let n = scores.n() as f64;
    let norm = 1.0 / (n * n);
    let omega_diag = fill_upper(&diag, d) * norm;
    let cg = fill_upper(&rows, d) * norm;
    let ch = fill_upper(&cols, d) * norm;
    let omega_i_raw = &cg - &omega_diag;
    let omega_ii_raw = &ch - &omega_diag;
    if omega_diag.iter().chain(cg.iter()).chain(ch.iter()).any(|v| !v.is_finite()) {
        return Err(CrveError::NonFinite);
    }
    let (omega_i, clipped_i) = evc_with_count(&omega_i_raw)?;
    let (omega_ii, clipped_ii) = evc_with_count(&omega_ii_raw)?;
    let omega_total = &omega_i + &omega_ii + &omega_diag;
    Ok(OmegaComponents {
        kind: CrveKind::Ctw,
        omega_i_raw,
        omega_ii_raw,
        omega_i,
        omega_ii,
        omega_diag,
        omega_total,
        clipped_i,
        clipped_ii,
    })
}

fn first_appearance(ids: impl Iterator<Item = usize>, count: usize) -> Vec<usize> {
    let mut seen = vec![false; count];
    let mut order = Vec::with_capacity(count);
    for id in ids {
        if !seen[id] {
            seen[id] = true;
            order.push(id);
        }
    }
    order
}

fn require_two_way(scores: &ScoreMatrix) -> Result<(), CrveError> {
    if scores.g_count() < 2 || scores.h_count() < 2 {
        return Err(CrveError::TooFewClusters { g: scores.g_count(), h: scores.h_count() });
    }
    Ok(())
}

/// Two-way estimator `EVC(Ω_I) + EVC(Ω_II) + Ω_diag`.
pub fn omega_ctw(scores: &ScoreMatrix) -> Result<OmegaComponents, CrveError> {
    require_two_way(scores)?;
    omega_parts(scores)
}

/// Meat matrix for the requested estimator.
pub fn omega_variant(scores: &ScoreMatrix, kind: CrveKind) -> Result<OmegaComponents, CrveError> {
    match kind {
        CrveKind::Cg if scores.g_count() < 2 => {
            return Err(CrveError::TooFewClusters { g: scores.g_count(), h: scores.h_count() })
        }
        CrveKind::Ch if scores.h_count() < 2 => {
            return Err(CrveError::TooFewClusters { g: scores.g_count(), h: scores.h_count() })
        }
        CrveKind::Ctw | CrveKind::CtwII => require_two_way(scores)?,
        _ => {}
    }
    Ok(omega_parts(scores)?.with_kind(kind))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub kind: CrveKind,
    pub d_hat: DMatrix<f64>,
    pub omega: OmegaComponents,
    pub sigma_hat: DMatrix<f64>,
    pub std_errors: Vec<f64>,
}

/// Sandwich `Σ̂ = D̂⁻¹ Ω̂ D̂⁻¹` using one Cholesky factorization of `D̂`.
pub fn sandwich(
    d_hat: &JacobianEstimate,
    omega: &OmegaComponents,
    kind: CrveKind,
) -> Result<VarianceEstimate, CrveError> {
    let d = d_hat.d_hat.nrows();
    if omega.omega_total.nrows() != d {
        return Err(CrveError::DimensionMismatch { expected: d, got: omega.omega_total.nrows() });
    }
    let omega_total = if omega.kind == kind { omega.omega_total.clone() } else { omega.total_for(kind) };
    let sigma_hat = sandwich_matrix(&d_hat.d_hat, &omega_total)?;
    let std_errors = (0..d).map(|j| sigma_hat[(j, j)].max(0.0).sqrt()).collect();
    let mut omega = omega.clone();
    omega.kind = kind;
    omega.omega_total = omega_total;
    Ok(VarianceEstimate { kind, d_hat: d_hat.d_hat.clone(), omega, sigma_hat, std_errors })
}

/// `B⁻¹ M B⁻¹` for symmetric positive definite `B` and symmetric `M`.
pub fn sandwich_matrix(bread: &DMatrix<f64>, meat: &DMatrix<f64>) -> Result<DMatrix<f64>, CrveError> {
    if bread.iter().any(|v| !v.is_finite()) || meat.iter().any(|v| !v.is_finite()) {
        return Err(CrveError::NonFinite);
    }
    let eig = SymmetricEigen::new(symmetrize(bread)).eigenvalues;
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > 0.0) || lo <= JACOBIAN_COND_TOL * hi {
        return Err(CrveError::SingularJacobian(if hi > 0.0 { lo / hi } else { 0.0 }));
    }
    let chol = symmetrize(bread).cholesky().ok_or(CrveError::SingularJacobian(lo / hi))?;
    // B⁻¹ M, then (B⁻¹ (B⁻¹ M)ᵀ)ᵀ = B⁻¹ M B⁻¹
    let left = chol.solve(meat);
    let both = chol.solve(&left.transpose()).transpose();
    Ok(symmetrize(&both))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub coefficient_index: usize,
    pub null_value: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

/// Two-sided t-test of `β_j = b0` with standard normal critical values.
pub fn t_test(fit: &QuantileFit, var: &VarianceEstimate, j: usize, b0: f64) -> Result<TestResult, CrveError> {
    let d = var.std_errors.len();
    if j >= d || j >= fit.beta_hat.len() {
        return Err(CrveError::IndexOutOfRange { index: j, d });
    }
    t_test_from(fit.beta_hat[j], var.std_errors[j], j, b0)
}

pub(crate) fn t_test_from(estimate: f64, se: f64, j: usize, b0: f64) -> Result<TestResult, CrveError> {
    if !(se > 0.0) {
        return Err(CrveError::ZeroStdError(j));
    }
    let t_stat = (estimate - b0) / se;
    Ok(TestResult { coefficient_index: j, null_value: b0, t_stat, p_value: two_sided_p(t_stat) })
}

/// `2 (1 − Φ(|t|))`.
pub fn two_sided_p(t: f64) -> f64 {
    (2.0 * normal_sf(t.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::SolverStats;
    use approx::assert_relative_eq;

    fn scalar(m: &DMatrix<f64>) -> f64 {
        assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    #[test]
    fn evc_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(evc(&id).unwrap(), id);
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (p, clipped) = evc_with_count(&m).unwrap();
        assert_eq!(clipped, 1);
        for v in p.iter() {
            assert_relative_eq!(*v, 1.5, epsilon = 1e-14);
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(evc(&bad), Err(CrveError::NonFinite)));
        assert!(matches!(evc(&DMatrix::zeros(2, 3)), Err(CrveError::NotSquare(2, 3))));
    }

    #[test]
    fn two_by_two_scalar_scores() {
        // rows g, columns h: ψ = [[1, 2], [3, 4]]
        let s = ScoreMatrix::from_grid(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let o = omega_ctw(&s).unwrap();
        assert_relative_eq!(scalar(&o.omega_i_raw), 1.75, epsilon = 1e-15);
        assert_relative_eq!(scalar(&o.omega_ii_raw), 1.375, epsilon = 1e-15);
        assert_relative_eq!(scalar(&o.omega_diag), 1.875, epsilon = 1e-15);
        assert_relative_eq!(scalar(&o.omega_total), 5.0, epsilon = 1e-15);
        assert_relative_eq!(scalar(&omega_variant(&s, CrveKind::Cg).unwrap().omega_total), 3.625, epsilon = 1e-15);
        assert_relative_eq!(scalar(&omega_variant(&s, CrveKind::CtwII).unwrap().omega_total), 6.875, epsilon = 1e-15);
    }

    #[test]
    fn single_cell_has_no_cross_pairs() {
        let s = ScoreMatrix::from_grid(1, 1, 2, vec![2.0, -1.0]).unwrap();
        assert!(matches!(omega_ctw(&s), Err(CrveError::TooFewClusters { .. })));
        let o = omega_parts(&s).unwrap();
        assert_eq!(o.omega_i_raw, DMatrix::zeros(2, 2));
        assert_eq!(o.omega_ii_raw, DMatrix::zeros(2, 2));
        assert_eq!(o.omega_total, DMatrix::from_row_slice(2, 2, &[4.0, -2.0, -2.0, 1.0]));
    }

    #[test]
    fn zero_scores_give_zero_components() {
        let s = ScoreMatrix::from_grid(3, 2, 2, vec![0.0; 12]).unwrap();
        for kind in CrveKind::ALL {
            assert_eq!(omega_variant(&s, kind).unwrap().omega_total, DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn vanishing_column_sums_zero_ch() {
        // every row identical across h and rows sum to zero across g
        let s = ScoreMatrix::from_grid(2, 3, 1, vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0]).unwrap();
        assert_relative_eq!(scalar(&omega_variant(&s, CrveKind::Ch).unwrap().omega_total), 0.0);
    }

    #[test]
    fn sandwich_examples() {
        let omega = omega_ctw(&ScoreMatrix::from_grid(2, 2, 2, vec![1.0, 0.5, -0.3, 2.0, 0.7, 0.1, 0.2, -1.0]).unwrap())
            .unwrap();
        let eye = JacobianEstimate { d_hat: DMatrix::identity(2, 2), bandwidth: 1.0, kernel_hits: 4 };
        let v = sandwich(&eye, &omega, CrveKind::Ctw).unwrap();
        assert_relative_eq!(v.sigma_hat, omega.omega_total, epsilon = 1e-15);

        let two = JacobianEstimate { d_hat: DMatrix::identity(2, 2) * 2.0, bandwidth: 1.0, kernel_hits: 4 };
        let unit = sandwich_matrix(&two.d_hat, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(unit, DMatrix::identity(2, 2) * 0.25, epsilon = 1e-15);

        let singular = JacobianEstimate { d_hat: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), bandwidth: 1.0, kernel_hits: 4 };
        assert!(matches!(sandwich(&singular, &omega, CrveKind::Ctw), Err(CrveError::SingularJacobian(_))));
    }

    fn fit_with(beta: Vec<f64>) -> QuantileFit {
        QuantileFit {
            tau: 0.5,
            residuals: vec![],
            objective: 0.0,
            solver: SolverStats { iterations: 0, duality_gap: 0.0, converged: true },
            beta_hat: beta,
        }
    }

    fn var_with(se: Vec<f64>) -> VarianceEstimate {
        let d = se.len();
        let o = omega_parts(&ScoreMatrix::from_grid(1, 1, d, vec![0.0; d]).unwrap()).unwrap();
        VarianceEstimate {
            kind: CrveKind::Ctw,
            d_hat: DMatrix::identity(d, d),
            omega: o,
            sigma_hat: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, se.iter().map(|s| s * s))),
            std_errors: se,
        }
    }

    #[test]
    fn t_test_examples() {
        let r = t_test(&fit_with(vec![1.0, 2.0]), &var_with(vec![1.0, 0.5]), 1, 2.0).unwrap();
        assert_eq!(r.t_stat, 0.0);
        assert_eq!(r.p_value, 1.0);

        let up = t_test(&fit_with(vec![1.959964]), &var_with(vec![1.0]), 0, 0.0).unwrap();
        assert_relative_eq!(up.p_value, 0.05, epsilon = 1e-6);
        let down = t_test(&fit_with(vec![-1.959964]), &var_with(vec![1.0]), 0, 0.0).unwrap();
        assert_eq!(up.p_value, down.p_value);

        assert!(matches!(
            t_test(&fit_with(vec![1.0]), &var_with(vec![0.0]), 0, 0.0),
            Err(CrveError::ZeroStdError(0))
        ));
        assert!(matches!(
            t_test(&fit_with(vec![1.0]), &var_with(vec![1.0]), 3, 0.0),
            Err(CrveError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn kind_parsing() {
        for (s, k) in [("ctw", CrveKind::Ctw), ("CG", CrveKind::Cg), ("ch", CrveKind::Ch), ("ci", CrveKind::Ci), ("ctw2", CrveKind::CtwII)] {
            assert_eq!(s.parse::<CrveKind>().unwrap(), k);
        }
        assert!("cx".parse::<CrveKind>().is_err());
        assert_eq!(serde_json::to_string(&CrveKind::CtwII).unwrap(), "\"CTW_II\"");
    }
}
