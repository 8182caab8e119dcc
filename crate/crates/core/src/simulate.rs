//! Grid runs of the rejection experiment.
//!
//! A [`SimulateConfig`] is a [`MonteCarloConfig`] in which the sizes and the
//! loadings may be given as lists. The grid is the Cartesian product
//! `sizes × weight_grid`, expanded in the order listed (sizes outermost);
//! every design point reuses the same seed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::crve::CrveKind;
use crate::montecarlo::{rejection_experiment, McError, MonteCarloConfig, RejectionReport, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    pub g: Option<usize>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    pub h: Option<usize>,
    /// `[G, H]` pairs; overrides `G`/`H` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<[usize; 2]>>,
    pub d: usize,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    /// Loadings to sweep; overrides `weights` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_grid: Option<Vec<Weights>>,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "all_methods")]
    pub methods: Vec<CrveKind>,
    #[serde(default = "one")]
    pub null_value: f64,
}

fn all_methods() -> Vec<CrveKind> {
    CrveKind::ALL.to_vec()
}

fn one() -> f64 {
    1.0
}

impl From<MonteCarloConfig> for SimulateConfig {
    fn from(c: MonteCarloConfig) -> Self {
        SimulateConfig {
            g: Some(c.g),
            h: Some(c.h),
            sizes: None,
            d: c.d,
            tau: c.tau,
            weights: Some(c.weights),
            weight_grid: None,
            reps: c.reps,
            seed: c.seed,
            methods: c.methods,
            null_value: c.null_value,
        }
    }
}

impl SimulateConfig {
    pub fn from_json(text: &str) -> Result<Self, McError> {
        serde_json::from_str(text).map_err(|e| McError::InvalidConfig(e.to_string()))
    }

    /// Expands the grid into validated design points.
    pub fn design_points(&self) -> Result<Vec<MonteCarloConfig>, McError> {
        let sizes = match (&self.sizes, self.g, self.h) {
            (Some(s), _, _) if !s.is_empty() => s.clone(),
            (Some(_), _, _) => return Err(McError::InvalidConfig("sizes is empty".into())),
            (None, Some(g), Some(h)) => vec![[g, h]],
            _ => return Err(McError::InvalidConfig("either G and H or sizes is required".into())),
        };
        let weights = match (&self.weight_grid, self.weights) {
            (Some(w), _) if !w.is_empty() => w.clone(),
            (Some(_), _) => return Err(McError::InvalidConfig("weight_grid is empty".into())),
            (None, Some(w)) => vec![w],
            (None, None) => return Err(McError::InvalidConfig("either weights or weight_grid is required".into())),
        };
        let mut points = Vec::with_capacity(sizes.len() * weights.len());
        for [g, h] in sizes {
            for &w in &weights {
                let cfg = MonteCarloConfig {
                    g,
                    h,
                    d: self.d,
                    tau: self.tau,
                    weights: w,
                    reps: self.reps,
                    seed: self.seed,
                    methods: self.methods.clone(),
                    null_value: self.null_value,
                };
                cfg.validate()?;
                points.push(cfg);
            }
        }
        Ok(points)
    }
}

/// Runs every design point in grid order. A point with too many failed
/// replications still contributes its report; the error is returned only
/// for invalid configurations or other hard failures.
pub fn run_grid(config: &SimulateConfig) -> Result<Vec<RejectionReport>, McError> {
    config
        .design_points()?
        .iter()
        .map(|p| match rejection_experiment(p) {
            Ok(r) => Ok(r),
            Err(McError::ExcessiveFailures { report, .. }) => Ok(*report),
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRow {
    design: usize,
    #[serde(rename = "G")]
    g: usize,
    #[serde(rename = "H")]
    h: usize,
    d: usize,
    tau: f64,
    #[serde(rename = "wUx")]
    u_x: f64,
    #[serde(rename = "wVx")]
    v_x: f64,
    #[serde(rename = "wWx")]
    w_x: f64,
    #[serde(rename = "wUe")]
    u_e: f64,
    #[serde(rename = "wVe")]
    v_e: f64,
    #[serde(rename = "wWe")]
    w_e: f64,
    method: CrveKind,
    reps: usize,
    valid_reps: usize,
    failures: usize,
    rejections: usize,
    frequency: f64,
    mc_se: f64,
}

/// One row per `(design point, method)`.
pub fn write_report_csv<W: Write>(reports: &[RejectionReport], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (design, r) in reports.iter().enumerate() {
        let c = &r.config;
        for m in &r.methods {
            w.serialize(CsvRow {
                design,
                g: c.g,
                h: c.h,
                d: c.d,
                tau: c.tau,
                u_x: c.weights.u_x,
                v_x: c.weights.v_x,
                w_x: c.weights.w_x,
                u_e: c.weights.u_e,
                v_e: c.weights.v_e,
                w_e: c.weights.w_e,
                method: m.method,
                reps: c.reps,
                valid_reps: r.valid_reps,
                failures: r.failures,
                rejections: m.rejections,
                frequency: m.frequency,
                mc_se: m.mc_se,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON array of the reports.
pub fn write_report_json<W: Write>(reports: &[RejectionReport], out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, reports)
}

/// Runs the grid and returns the CSV bytes.
pub fn simulate_csv(config: &SimulateConfig) -> Result<Vec<u8>, McError> {
    let reports = run_grid(config)?;
    let mut buf = Vec::new();
    write_report_csv(&reports, &mut buf).map_err(|e| McError::InvalidConfig(e.to_string()))?;
    Ok(buf)
}
