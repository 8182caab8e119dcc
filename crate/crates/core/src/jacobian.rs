//! Powell's kernel estimator of the Jacobian `D(τ) = E[f(0|X) X Xᵀ]` and
//! its bandwidth rules.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{add_outer_lower, fill_upper, vech_outer};
use crate::panel::PanelArray;
use crate::qr::{check_tau, QrError};
use crate::stats::{mad, normal_pdf, normal_quantile};

/// Consistency constant turning the MAD into a Gaussian scale estimate.
pub const MAD_SCALE: f64 = 0.6745;

/// Residual scale, relative to `max |y|`, below which a fit is treated as exact.
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error(transparent)]
    Qr(#[from] QrError),
    #[error("residual scale is zero (MAD = 0)")]
    DegenerateScale,
    #[error("mean of vech(x xᵀ) is zero")]
    DegenerateDesign,
    #[error("bandwidth must be positive, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("bias vector is zero")]
    ZeroBias,
    #[error("trace term must be positive, got {0}")]
    NonpositiveTrace(f64),
    #[error("expected {expected} residuals, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least two cells, got {0}")]
    TooFewCells(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianEstimate {
    /// Symmetric `d × d` estimate, PSD by construction.
    pub d_hat: DMatrix<f64>,
    pub bandwidth: f64,
    /// Cells with `|residual| ≤ bandwidth`.
    pub kernel_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthDiagnostics {
    pub sigma_hat: f64,
    pub alpha_tau: f64,
    /// `(1/n) Σ ‖Q_gh‖²`
    pub q_norm_mean: f64,
    /// `‖(1/n) Σ Q_gh‖²`
    pub q_mean_norm: f64,
    pub ell: f64,
}

/// Gaussian-reference constant `α(τ) = (1 − Φ⁻¹(τ))² φ(Φ⁻¹(τ))` used by
/// the rule-of-thumb bandwidth.
pub fn alpha(tau: f64) -> Result<f64, QrError> {
    check_tau(tau)?;
    let q = normal_quantile(tau);
    Ok((1.0 - q).powi(2) * normal_pdf(q))
}

/// Rule-of-thumb bandwidth for the Gaussian location model:
///
/// `ℓ = σ̂ n^{-1/5} (4.5 · (1/n)Σ‖Q‖² / (α(τ) ‖(1/n)ΣQ‖²))^{1/5}`
///
/// with `Q_gh = vech(x_gh x_ghᵀ)`, `σ̂ = MAD(ê)/0.6745` and `n` the number
/// of present cells.
pub fn rule_of_thumb_bandwidth(
    panel: &PanelArray,
    residuals: &[f64],
    tau: f64,
) -> Result<BandwidthDiagnostics, JacobianError> {
    let n = panel.n();
    if residuals.len() != n {
        return Err(JacobianError::DimensionMismatch { expected: n, got: residuals.len() });
    }
    if n < 2 {
        return Err(JacobianError::TooFewCells(n));
    }
    let sigma_hat = mad(residuals).ok_or(JacobianError::DegenerateScale)? / MAD_SCALE;
    // residuals at rounding level of the response carry no scale information
    let y_scale = panel.y().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if sigma_hat <= RESIDUAL_FLOOR * y_scale || !sigma_hat.is_finite() {
        return Err(JacobianError::DegenerateScale);
    }
    let d = panel.d();
    let mut q_sum = vec![0.0; d * (d + 1) / 2];
    let mut q_norm_sum = 0.0;
    for i in 0..n {
        let q = vech_outer(panel.x_row(i));
        q_norm_sum += q.iter().map(|v| v * v).sum::<f64>();
        for (s, v) in q_sum.iter_mut().zip(&q) {
            *s += v;
        }
    }
    let nf = n as f64;
    let q_norm_mean = q_norm_sum / nf;
    let q_mean_norm = q_sum.iter().map(|s| (s / nf).powi(2)).sum::<f64>();
    bandwidth_from_moments(sigma_hat, n, q_norm_mean, q_mean_norm, tau)
}

/// Closed form of the rule-of-thumb bandwidth given its ingredients.
pub fn bandwidth_from_moments(
    sigma_hat: f64,
    n: usize,
    q_norm_mean: f64,
    q_mean_norm: f64,
    tau: f64,
) -> Result<BandwidthDiagnostics, JacobianError> {
    let alpha_tau = alpha(tau)?;
    if q_mean_norm <= 0.0 {
        return Err(JacobianError::DegenerateDesign);
    }
    if sigma_hat <= 0.0 {
        return Err(JacobianError::DegenerateScale);
    }
    let ratio = 4.5 * q_norm_mean / (alpha_tau * q_mean_norm);
    let ell = sigma_hat * (n as f64).powf(-0.2) * ratio.powf(0.2);
    Ok(BandwidthDiagnostics { sigma_hat, alpha_tau, q_norm_mean, q_mean_norm, ell })
}

/// Powell's estimator `D̂ = (1/(nℓ)) Σ K(û/ℓ) x xᵀ` with the uniform kernel
/// `K(u) = ½·1{|u| ≤ 1}`.
pub fn powell_jacobian(
    panel: &PanelArray,
    residuals: &[f64],
    ell: f64,
) -> Result<JacobianEstimate, JacobianError> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(JacobianError::NonpositiveBandwidth(ell));
    }
    let n = panel.n();
    if residuals.len() != n {
        return Err(JacobianError::DimensionMismatch { expected: n, got: residuals.len() });
    }
    let d = panel.d();
    let mut acc = vec![0.0; d * d];
    let mut kernel_hits = 0;
    for (i, &u) in residuals.iter().enumerate() {
        if u.abs() <= ell {
            kernel_hits += 1;
            add_outer_lower(&mut acc, panel.x_row(i), 1.0);
        }
    }
    let d_hat = fill_upper(&acc, d) * (0.5 / (n as f64 * ell));
    Ok(JacobianEstimate { d_hat, bandwidth: ell, kernel_hits })
}

/// AMSE-optimal bandwidth `n^{-1/5} (4.5 · trace / ‖bias‖²)^{1/5}` from
/// population moments: `trace_term = tr E[Q Qᵀ f(0|X)]`,
/// `bias_vec = E[f''(0|X) Q]`.
pub fn amse_optimal_bandwidth(trace_term: f64, bias_vec: &[f64], n: usize) -> Result<f64, JacobianError> {
    if !(trace_term > 0.0) {
        return Err(JacobianError::NonpositiveTrace(trace_term));
    }
    let b2: f64 = bias_vec.iter().map(|v| v * v).sum();
    if b2 == 0.0 {
        return Err(JacobianError::ZeroBias);
    }
    Ok((n as f64).powf(-0.2) * (4.5 * trace_term / b2).powf(0.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn alpha_values() {
        // reference values from an independent normal-distribution library
        assert_relative_eq!(alpha(0.5).unwrap(), 0.3989422804014327, epsilon = 1e-14);
        assert_relative_eq!(alpha(0.9).unwrap(), 0.013911978122784335, epsilon = 1e-12);
        assert_relative_eq!(alpha(0.1).unwrap(), 0.9135526262769621, epsilon = 1e-12);
        assert!(alpha(0.0).is_err());
        assert!(alpha(1.2).is_err());
    }

    #[test]
    fn identical_regressors_cancel() {
        for &tau in &[0.25, 0.5, 0.8] {
            let bw = bandwidth_from_moments(1.0, 1, 7.0, 7.0, tau).unwrap();
            assert_relative_eq!(bw.ell, (4.5 / alpha(tau).unwrap()).powf(0.2), epsilon = 1e-14);
        }
    }

    #[test]
    fn mad_scale_from_residuals() {
        let p = PanelArray::from_grid(1, 3, 1, vec![0.0; 3], vec![1.0; 3]).unwrap();
        let bw = rule_of_thumb_bandwidth(&p, &[-1.0, 0.0, 1.0], 0.5).unwrap();
        assert_relative_eq!(bw.sigma_hat, 1.0 / 0.6745, epsilon = 1e-15);
        assert_relative_eq!(bw.sigma_hat, 1.4826, epsilon = 1e-4);
    }

    #[test]
    fn degenerate_inputs() {
        let p = PanelArray::from_grid(1, 3, 1, vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert!(matches!(rule_of_thumb_bandwidth(&p, &[2.0; 3], 0.5), Err(JacobianError::DegenerateScale)));
        let p0 = PanelArray::from_grid(1, 3, 1, vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!(matches!(
            rule_of_thumb_bandwidth(&p0, &[-1.0, 0.0, 1.0], 0.5),
            Err(JacobianError::DegenerateDesign)
        ));
        assert!(matches!(powell_jacobian(&p, &[0.0; 3], 0.0), Err(JacobianError::NonpositiveBandwidth(_))));
        assert!(matches!(powell_jacobian(&p, &[0.0; 3], -1.0), Err(JacobianError::NonpositiveBandwidth(_))));
    }

    #[test]
    fn powell_small_cases() {
        let p = PanelArray::from_grid(1, 1, 1, vec![0.0], vec![1.0]).unwrap();
        let j = powell_jacobian(&p, &[0.0], 1.0).unwrap();
        assert_relative_eq!(j.d_hat[(0, 0)], 0.5);
        assert_eq!(j.kernel_hits, 1);

        let p = PanelArray::from_grid(1, 2, 1, vec![0.0; 2], vec![1.0; 2]).unwrap();
        let j = powell_jacobian(&p, &[0.5, 2.0], 1.0).unwrap();
        assert_relative_eq!(j.d_hat[(0, 0)], 0.25);
        assert_eq!(j.kernel_hits, 1);
        // closed boundary
        let j = powell_jacobian(&p, &[1.0, -1.0], 1.0).unwrap();
        assert_eq!(j.kernel_hits, 2);
    }

    #[test]
    fn amse_bandwidth() {
        assert_relative_eq!(amse_optimal_bandwidth(1.0 / 4.5, &[1.0], 1).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            amse_optimal_bandwidth(1.0, &[0.6, 0.8], 32).unwrap(),
            0.6754800192603068,
            epsilon = 1e-14
        );
        let a = amse_optimal_bandwidth(2.0, &[1.0, 1.0], 100).unwrap();
        let b = amse_optimal_bandwidth(2.0, &[1.0, 1.0], 200).unwrap();
        assert_relative_eq!(b / a, 2f64.powf(-0.2), epsilon = 1e-14);
        assert!(matches!(amse_optimal_bandwidth(1.0, &[0.0, 0.0], 5), Err(JacobianError::ZeroBias)));
        assert!(matches!(amse_optimal_bandwidth(0.0, &[1.0], 5), Err(JacobianError::NonpositiveTrace(_))));
    }
}
