use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_dgp, McError, MonteCarloConfig, MAX_FAILURE_SHARE};
use crate::crve::{omega_parts, sandwich, t_test, CrveKind};
use crate::jacobian::{powell_jacobian, rule_of_thumb_bandwidth};
use crate::qr::{fit_qr, score_matrix_from_residuals, QrOptions};

/// Nominal level of the two-sided tests.
pub const NOMINAL_LEVEL: f64 = 0.05;

/// Per-method t statistics of one replication, in `config.methods` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
}

impl ReplicationOutcome {
    pub fn rejects(&self, k: usize) -> bool {
        self.p_values[k] < NOMINAL_LEVEL
    }
}

/// Runs one replication: generate, fit, bandwidth, Jacobian, scores, every
/// requested meat matrix, sandwich and the t-test on the last coefficient.
pub fn run_replication(config: &MonteCarloConfig, rep: u64) -> Result<ReplicationOutcome, String> {
    let panel = generate_dgp(config, rep);
    let fit = fit_qr(&panel, config.tau, &QrOptions::default()).map_err(|e| e.to_string())?;
    let bw = rule_of_thumb_bandwidth(&panel, &fit.residuals, config.tau).map_err(|e| e.to_string())?;
    let jac = powell_jacobian(&panel, &fit.residuals, bw.ell).map_err(|e| e.to_string())?;
    let scores = score_matrix_from_residuals(&panel, &fit.residuals, config.tau).map_err(|e| e.to_string())?;
    let parts = omega_parts(&scores).map_err(|e| e.to_string())?;
    let j = config.d - 1;
    let mut t_stats = Vec::with_capacity(config.methods.len());
    let mut p_values = Vec::with_capacity(config.methods.len());
    for &kind in &config.methods {
        let var = sandwich(&jac, &parts, kind).map_err(|e| e.to_string())?;
        let test = t_test(&fit, &var, j, config.null_value).map_err(|e| e.to_string())?;
        t_stats.push(test.t_stat);
        p_values.push(test.p_value);
    }
    Ok(ReplicationOutcome { t_stats, p_values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRejection {
    pub method: CrveKind,
    pub rejections: usize,
    pub frequency: f64,
    /// `√(p̂(1 − p̂)/valid_reps)`
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub config: MonteCarloConfig,
    pub level: f64,
    pub valid_reps: usize,
    pub failures: usize,
    /// First failure message per distinct cause, with counts.
    pub failure_causes: Vec<(String, usize)>,
    pub methods: Vec<MethodRejection>,
}

impl RejectionReport {
    pub fn frequency(&self, kind: CrveKind) -> Option<f64> {
        self.method(kind).map(|m| m.frequency)
    }

    pub fn method(&self, kind: CrveKind) -> Option<&MethodRejection> {
        self.methods.iter().find(|m| m.method == kind)
    }
}

/// Rejection frequencies of the t-test of `β_d = null_value` at the 5% level.
///
/// Replications run in parallel on the current rayon pool; results are
/// collected by replication index, so the report does not depend on the
/// number of workers. Failed replications are excluded from the
/// denominators and counted; more than 1% failures is an error.
pub fn rejection_experiment(config: &MonteCarloConfig) -> Result<RejectionReport, McError> {
    config.validate()?;
    let outcomes: Vec<Result<ReplicationOutcome, String>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| run_replication(config, rep))
        .collect();

    let mut rejections = vec![0usize; config.methods.len()];
    let mut valid = 0usize;
    let mut causes: Vec<(String, usize)> = Vec::new();
    for outcome in &outcomes {
        match outcome {
            Ok(o) => {
                valid += 1;
                for (k, r) in rejections.iter_mut().enumerate() {
                    *r += usize::from(o.rejects(k));
                }
            }
            Err(msg) => match causes.iter_mut().find(|(m, _)| m == msg) {
                Some((_, c)) => *c += 1,
                None => causes.push((msg.clone(), 1)),
            },
        }
    }
    let failures = config.reps - valid;
    let methods = config
        .methods
        .iter()
        .zip(&rejections)
        .map(|(&method, &r)| {
            let (frequency, mc_se) = if valid > 0 {
                let p = r as f64 / valid as f64;
                (p, (p * (1.0 - p) / valid as f64).sqrt())
            } else {
                (f64::NAN, f64::NAN)
            };
            MethodRejection { method, rejections: r, frequency, mc_se }
        })
        .collect();
    let report = RejectionReport {
        config: config.clone(),
        level: NOMINAL_LEVEL,
        valid_reps: valid,
        failures,
        failure_causes: causes,
        methods,
    };
    if failures as f64 > MAX_FAILURE_SHARE * config.reps as f64 {
        return Err(McError::ExcessiveFailures { failures, reps: config.reps, report: Box::new(report) });
    }
    Ok(report)
}
