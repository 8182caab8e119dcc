use std::path::PathBuf;

use serde::Serialize;
use twqr::crve::{omega_variant, sandwich, t_test, CrveError, CrveKind};
use twqr::jacobian::{powell_jacobian, rule_of_thumb_bandwidth, JacobianError};
use twqr::panel::{load_csv, read_headers, PanelError, PanelSchema};
use twqr::qr::{fit_qr, score_matrix_from_residuals, QrError, QrOptions};

use crate::CliError;

pub struct FitRequest {
    pub input: PathBuf,
    pub tau: f64,
    pub kinds: Vec<CrveKind>,
    pub bandwidth: Option<f64>,
    pub null: Vec<f64>,
    pub g_col: String,
    pub h_col: String,
    pub y_col: String,
    pub x_cols: Vec<String>,
    pub intercept: bool,
}

#[derive(Debug, Serialize)]
pub struct KindResult {
    pub kind: CrveKind,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub evc_clipped_i: usize,
    pub evc_clipped_ii: usize,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub kernel_hits: usize,
    pub solver_iterations: usize,
    pub duality_gap: f64,
    pub bandwidth_source: &'static str,
}

#[derive(Debug, Serialize)]
pub struct FitResponse {
    pub tau: f64,
    pub n: usize,
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub coefficients: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub null_values: Vec<f64>,
    pub bandwidth: f64,
    pub results: Vec<KindResult>,
    pub diagnostics: Diagnostics,
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        CliError::input(format!("PanelError: {e}"))
    }
}

impl From<QrError> for CliError {
    fn from(e: QrError) -> Self {
        match e {
            QrError::InvalidTau(_) => CliError::input(format!("InvalidTau: {e}")),
            QrError::DimensionMismatch { .. } => CliError::input(format!("DimensionMismatch: {e}")),
            QrError::RankDeficient { .. } => CliError::numeric(format!("RankDeficient: {e}")),
            QrError::MaxIterExceeded { .. } => CliError::numeric(format!("MaxIterExceeded: {e}")),
            QrError::NumericalBreakdown => CliError::numeric(format!("NumericalBreakdown: {e}")),
        }
    }
}

impl From<JacobianError> for CliError {
    fn from(e: JacobianError) -> Self {
        match e {
            JacobianError::Qr(q) => q.into(),
            other => CliError::numeric(format!("JacobianError: {other}")),
        }
    }
}

impl From<CrveError> for CliError {
    fn from(e: CrveError) -> Self {
        match e {
            CrveError::TooFewClusters { .. } => CliError::input(format!("TooFewClusters: {e}")),
            CrveError::SingularJacobian(_) => CliError::numeric(format!("SingularJacobian: {e}")),
            other => CliError::numeric(format!("CrveError: {other}")),
        }
    }
}

pub fn run_fit(req: &FitRequest) -> Result<FitResponse, CliError> {
    if !(req.tau > 0.0 && req.tau < 1.0) {
        return Err(CliError::input(format!("InvalidTau: tau must lie in (0, 1), got {}", req.tau)));
    }
    if let Some(l) = req.bandwidth {
        if !(l > 0.0 && l.is_finite()) {
            return Err(CliError::input(format!("bandwidth must be positive, got {l}")));
        }
    }
    let x_cols = if req.x_cols.is_empty() {
        let reserved = [&req.g_col, &req.h_col, &req.y_col];
        read_headers(&req.input)?.into_iter().filter(|c| !reserved.contains(&c)).collect()
    } else {
        req.x_cols.clone()
    };
    if x_cols.is_empty() && !req.intercept {
        return Err(CliError::input("no regressor columns".into()));
    }
    let x_refs: Vec<&str> = x_cols.iter().map(String::as_str).collect();
    let schema = PanelSchema::new(&req.g_col, &req.h_col, &req.y_col, &x_refs);
    let mut panel = load_csv(&req.input, &schema)?;
    let mut coefficients = x_cols.clone();
    if req.intercept {
        let d = panel.d() + 1;
        let mut x = Vec::with_capacity(panel.n() * d);
        for i in 0..panel.n() {
            x.push(1.0);
            x.extend_from_slice(panel.x_row(i));
        }
        panel = panel.with_design(d, x)?;
        coefficients.insert(0, "(intercept)".into());
    }
    let d = panel.d();
    let null_values = match req.null.len() {
        0 => vec![0.0; d],
        1 => vec![req.null[0]; d],
        k if k == d => req.null.clone(),
        k => return Err(CliError::input(format!("--null has {k} values, expected 1 or {d}"))),
    };

    let fit = fit_qr(&panel, req.tau, &QrOptions::default())?;
    let (ell, source) = match req.bandwidth {
        Some(l) => (l, "user"),
        None => (rule_of_thumb_bandwidth(&panel, &fit.residuals, req.tau)?.ell, "rule_of_thumb"),
    };
    let jac = powell_jacobian(&panel, &fit.residuals, ell)?;
    let scores = score_matrix_from_residuals(&panel, &fit.residuals, req.tau)?;

    let mut results = Vec::with_capacity(req.kinds.len());
    for &kind in &req.kinds {
        let omega = omega_variant(&scores, kind)?;
        let var = sandwich(&jac, &omega, kind)?;
        let mut t_stats = Vec::with_capacity(d);
        let mut p_values = Vec::with_capacity(d);
        for (j, &b0) in null_values.iter().enumerate() {
            let t = t_test(&fit, &var, j, b0)?;
            t_stats.push(t.t_stat);
            p_values.push(t.p_value);
        }
        results.push(KindResult {
            kind,
            std_errors: var.std_errors.clone(),
            t_stats,
            p_values,
            evc_clipped_i: omega.clipped_i,
            evc_clipped_ii: omega.clipped_ii,
        });
    }
    Ok(FitResponse {
        tau: req.tau,
        n: panel.n(),
        g: panel.g_count(),
        h: panel.h_count(),
        coefficients,
        beta_hat: fit.beta_hat.clone(),
        null_values,
        bandwidth: ell,
        results,
        diagnostics: Diagnostics {
            kernel_hits: jac.kernel_hits,
            solver_iterations: fit.solver.iterations,
            duality_gap: fit.solver.duality_gap,
            bandwidth_source: source,
        },
    })
}

/// Long table: one row per `(kind, coefficient)`.
pub fn to_csv(resp: &FitResponse) -> String {
    let mut out = String::from("kind,coefficient,name,beta_hat,null_value,std_error,t_stat,p_value\n");
    for r in &resp.results {
        for (j, name) in resp.coefficients.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:?},{:?},{:?},{:?},{:?}\n",
                r.kind, j, quote(name), resp.beta_hat[j], resp.null_values[j], r.std_errors[j], r.t_stats[j], r.p_values[j]
            ));
        }
    }
    out
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
