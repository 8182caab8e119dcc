//! Scalar median regression whose estimator has a product-normal limit.
//!
//! `X_gh = U_g V_h`, `e_gh = U_g^e V_h^e |W_gh^e|` with Rademacher `U^e`,
//! a sign `V^e` that is +1 with probability `½ + c/(2√H)` and uniform `W^e`.
//! The score factors into a row sum times a column sum, so
//! `√(GH)(β̂ − 1)` converges to a multiple of `Z_U (Z_V + c)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::McError;
use crate::qr::{fit_qr_dense, QrOptions};
use crate::rng::stream_rng;
use crate::stats::{iqr, kurtosis, ks_one_sample, ks_two_sample, mean, normal_cdf, std_dev};

/// Size of the reference draw used to calibrate the scale `κ`.
pub const KAPPA_CALIBRATION_DRAWS: usize = 200_000;

const MIN_REPS: usize = 500;
/// Replication slot of the reference draws.
const REFERENCE_REP: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    /// Pearson kurtosis (3 for a Gaussian, 9 for a product of normals).
    pub kurtosis_empirical: f64,
    pub excess_kurtosis: f64,
    /// KS distance to the normal with the sample mean and standard deviation.
    pub ks_vs_fitted_normal: f64,
    /// Two-sample KS distance between the empirical and reference samples.
    pub ks_vs_reference: f64,
    pub kappa: f64,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NongaussianDemo {
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub c: f64,
    pub reps: usize,
    pub seed: u64,
    /// `√(GH)(β̂ − 1)` for each successful replication.
    pub empirical: Vec<f64>,
    /// `κ Z_U (Z_V + c)`, one draw per replication.
    pub reference: Vec<f64>,
    pub failures: usize,
    pub summary: DemoSummary,
}

fn rademacher<R: Rng>(rng: &mut R, p_plus: f64) -> f64 {
    if rng.random::<f64>() < p_plus {
        1.0
    } else {
        -1.0
    }
}

/// One replication; `None` if the fit fails.
fn replicate(g: usize, h: usize, c: f64, seed: u64, rep: u64) -> Option<f64> {
    let mut rx = stream_rng(seed, rep, 1);
    let u: Vec<f64> = (0..g).map(|_| rx.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..h).map(|_| 1.0 + rx.sample::<f64, _>(StandardNormal)).collect();
    let mut re = stream_rng(seed, rep, 0);
    let ue: Vec<f64> = (0..g).map(|_| rademacher(&mut re, 0.5)).collect();
    let p_plus = 0.5 + c / (2.0 * (h as f64).sqrt());
    let ve: Vec<f64> = (0..h).map(|_| rademacher(&mut re, p_plus)).collect();
    let unif = Uniform::new(-1.0_f64, 1.0).expect("valid range");

    let n = g * h;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for gi in 0..g {
        for hi in 0..h {
            let xi = u[gi] * v[hi];
            let e = ue[gi] * ve[hi] * unif.sample(&mut re).abs();
            x.push(xi);
            y.push(xi + e);
        }
    }
    let fit = fit_qr_dense(&y, &x, 1, 0.5, &QrOptions::default()).ok()?;
    Some((n as f64).sqrt() * (fit.beta_hat[0] - 1.0))
}

fn product_normals(seed: u64, stream: u32, count: usize, c: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, REFERENCE_REP, stream);
    (0..count)
        .map(|_| {
            let zu: f64 = rng.sample(StandardNormal);
            let zv: f64 = rng.sample(StandardNormal);
            zu * (zv + c)
        })
        .collect()
}

/// Runs `reps` replications of the scalar median regression design and
/// compares `√(GH)(β̂ − 1)` with its product-normal limit.
pub fn nongaussian_demo(g: usize, h: usize, c: f64, reps: usize, seed: u64) -> Result<NongaussianDemo, McError> {
    if reps < MIN_REPS {
        return Err(McError::InvalidConfig(format!("reps must be at least {MIN_REPS}")));
    }
    if g < 2 || h < 2 {
        return Err(McError::InvalidConfig("G and H must be at least 2".into()));
    }
    if !(c.is_finite() && c >= 0.0) {
        return Err(McError::InvalidConfig("c must be finite and nonnegative".into()));
    }
    if c > (h as f64).sqrt() {
        return Err(McError::InvalidConfig("c must not exceed sqrt(H)".into()));
    }
    let draws: Vec<Option<f64>> = (0..reps as u64).into_par_iter().map(|r| replicate(g, h, c, seed, r)).collect();
    let empirical: Vec<f64> = draws.iter().flatten().copied().collect();
    let failures = reps - empirical.len();
    if empirical.len() < MIN_REPS.min(reps) || failures * 100 > reps {
        return Err(McError::DemoFailures { failures, reps });
    }

    let calibration = product_normals(seed, 0, KAPPA_CALIBRATION_DRAWS, c);
    let kappa = iqr(&empirical) / iqr(&calibration);
    let reference: Vec<f64> = product_normals(seed, 1, reps, c).into_iter().map(|v| kappa * v).collect();

    let (m, s) = (mean(&empirical), std_dev(&empirical));
    let k = kurtosis(&empirical);
    let summary = DemoSummary {
        kurtosis_empirical: k,
        excess_kurtosis: k - 3.0,
        ks_vs_fitted_normal: ks_one_sample(&empirical, |v| normal_cdf((v - m) / s)),
        ks_vs_reference: ks_two_sample(&empirical, &reference),
        kappa,
        mean: m,
        std_dev: s,
    };
    Ok(NongaussianDemo { g, h, c, reps, seed, empirical, reference, failures, summary })
}
