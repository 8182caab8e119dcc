//! Monte Carlo designs for size experiments and variance-component oracles.
//!
//! The two-way design draws, for every regressor `j ≥ 2`,
//!
//! ```text
//! X_gh,j = wUx·U_g^{X,j} + wVx·V_h^{X,j} + wWx·W_gh^{X,j}
//! e_gh   = wUe·U_g^e     + wVe·V_h^e     + wWe·W_gh^e
//! y_gh   = 1 + Σ_j X_gh,j + e_gh
//! ```
//!
//! with all latents iid standard normal. Replication `r` of a run with seed
//! `s` is a pure function of `(s, r)`.

mod dgp;
mod experiment;
mod nongaussian;
mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crve::CrveKind;
use crate::qr::QrError;

pub use dgp::generate_dgp;
pub use experiment::{
    rejection_experiment, run_replication, MethodRejection, RejectionReport, ReplicationOutcome,
    NOMINAL_LEVEL,
};
pub use nongaussian::{nongaussian_demo, DemoSummary, NongaussianDemo, KAPPA_CALIBRATION_DRAWS};
pub use oracle::{oracle_variance_components, true_jacobian, OracleBudget, VarianceOracle};

/// Largest tolerated share of failed replications in a rejection experiment.
pub const MAX_FAILURE_SHARE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error("{failures} of {reps} replications failed (limit 1%)")]
    ExcessiveFailures { failures: usize, reps: usize, report: Box<RejectionReport> },
    #[error("{failures} of {reps} demo replications failed")]
    DemoFailures { failures: usize, reps: usize },
    #[error(transparent)]
    Qr(#[from] QrError),
}

/// Loadings of the latent row (`U`), column (`V`) and cell (`W`) components
/// on the regressors (`x`) and the error (`e`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    #[serde(rename = "wUx")]
    pub u_x: f64,
    #[serde(rename = "wVx")]
    pub v_x: f64,
    #[serde(rename = "wWx")]
    pub w_x: f64,
    #[serde(rename = "wUe")]
    pub u_e: f64,
    #[serde(rename = "wVe")]
    pub v_e: f64,
    #[serde(rename = "wWe")]
    pub w_e: f64,
}

impl Weights {
    /// All six loadings equal to one.
    pub fn two_way() -> Self {
        Weights { u_x: 1.0, v_x: 1.0, w_x: 1.0, u_e: 1.0, v_e: 1.0, w_e: 1.0 }
    }

    /// Only the cell components load.
    pub fn independent() -> Self {
        Weights { u_x: 0.0, v_x: 0.0, w_x: 1.0, u_e: 0.0, v_e: 0.0, w_e: 1.0 }
    }

    /// Clustering along `h` only (`wUx = wUe = 0`).
    pub fn one_way_h() -> Self {
        Weights { u_x: 0.0, v_x: 1.0, w_x: 1.0, u_e: 0.0, v_e: 1.0, w_e: 1.0 }
    }

    /// Swaps the roles of the row and column latents.
    pub fn transposed(self) -> Self {
        Weights { u_x: self.v_x, v_x: self.u_x, u_e: self.v_e, v_e: self.u_e, ..self }
    }

    /// Standard deviation of the error, `√(wUe² + wVe² + wWe²)`.
    pub fn error_sd(&self) -> f64 {
        (self.u_e.powi(2) + self.v_e.powi(2) + self.w_e.powi(2)).sqrt()
    }

    /// Variance of each slope regressor.
    pub fn regressor_var(&self) -> f64 {
        self.u_x.powi(2) + self.v_x.powi(2) + self.w_x.powi(2)
    }

    fn all(&self) -> [f64; 6] {
        [self.u_x, self.v_x, self.w_x, self.u_e, self.v_e, self.w_e]
    }
}

fn default_methods() -> Vec<CrveKind> {
    CrveKind::ALL.to_vec()
}

fn default_null() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "H")]
    pub h: usize,
    /// Regressor count including the intercept.
    pub d: usize,
    pub tau: f64,
    pub weights: Weights,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<CrveKind>,
    /// Null value for the last slope coefficient.
    #[serde(default = "default_null")]
    pub null_value: f64,
}

impl MonteCarloConfig {
    /// The default two-way design: G = H = 50, d = 10, τ = 0.5, all weights 1.
    pub fn two_way_default(reps: usize, seed: u64) -> Self {
        MonteCarloConfig {
            g: 50,
            h: 50,
            d: 10,
            tau: 0.5,
            weights: Weights::two_way(),
            reps,
            seed,
            methods: default_methods(),
            null_value: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::InvalidConfig(m.to_string()));
        if self.reps < 1 {
            return bad("reps must be at least 1");
        }
        if self.g < 2 || self.h < 2 {
            return bad("G and H must be at least 2");
        }
        if self.d < 2 {
            return bad("d must be at least 2 (intercept plus one slope)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if self.weights.all().iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and nonnegative");
        }
        if self.weights.w_x <= 0.0 {
            return bad("wWx must be positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        if !self.null_value.is_finite() {
            return bad("null_value must be finite");
        }
        Ok(())
    }

    /// True value of coefficient `j` (0-based) at quantile `tau`: slopes are
    /// 1, the intercept is `1 + σ_e Φ⁻¹(τ)`.
    pub fn true_coefficient(&self, j: usize) -> f64 {
        if j == 0 {
            1.0 + self.weights.error_sd() * crate::stats::normal_quantile(self.tau)
        } else {
            1.0
        }
    }

    /// Same design with `G ↔ H` and row/column loadings swapped.
    pub fn transposed(&self) -> Self {
        MonteCarloConfig { g: self.h, h: self.g, weights: self.weights.transposed(), ..self.clone() }
    }
}
