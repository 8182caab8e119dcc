//! Linear quantile regression on two-way clustered arrays.
//!
//! The crate covers the full inference pipeline for an array of cells
//! `(y_gh, x_gh)` indexed by a row cluster `g` and a column cluster `h`:
//!
//! - [`panel`]: the array data model, CSV ingestion and validation;
//! - [`qr`]: the check loss, an interior-point quantile regression solver and
//!   the estimated quantile scores;
//! - [`jacobian`]: Powell's kernel estimator of the Jacobian ("bread") and its
//!   bandwidth rules;
//! - [`crve`]: the two-way cluster-robust "meat", the one-way / intersection
//!   comparators, the sandwich and t-tests;
//! - [`montecarlo`]: the simulation designs, rejection-frequency experiments,
//!   variance-component oracles and the non-Gaussian interaction demo;
//! - [`simulate`]: grid runs over Monte Carlo designs with JSON/CSV output.

pub mod crve;
pub mod jacobian;
pub mod linalg;
pub mod montecarlo;
pub mod panel;
pub mod qr;
pub mod rng;
pub mod simulate;
pub mod stats;

pub use crve::{
    evc, omega_ctw, omega_variant, sandwich, t_test, CrveError, CrveKind, OmegaComponents,
    TestResult, VarianceEstimate,
};
pub use jacobian::{
    alpha, amse_optimal_bandwidth, powell_jacobian, rule_of_thumb_bandwidth,
    BandwidthDiagnostics, JacobianError, JacobianEstimate,
};
pub use montecarlo::{
    generate_dgp, nongaussian_demo, oracle_variance_components, rejection_experiment,
    McError, MonteCarloConfig, OracleBudget, RejectionReport, VarianceOracle, Weights,
};
pub use panel::{load_csv, read_headers, validate, PanelArray, PanelError, PanelSchema, ValidationReport};
pub use qr::{check_loss, fit_qr, score_matrix, score_matrix_from_residuals, QrError, QrOptions, QuantileFit, ScoreMatrix};
