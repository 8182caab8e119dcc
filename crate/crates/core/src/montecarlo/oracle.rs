//! Nested Monte Carlo estimates of the ANOVA components of the population
//! score `Ψ_gh = X_gh (τ − 1{e_gh ≤ q_τ})` at the true coefficients.
//!
//! Each outer draw fixes the conditioning latents and averages the score
//! over `inner` fresh draws of the remaining latents. Two independent inner
//! averages per outer draw give unbiased cross-covariances:
//!
//! - `σ_I²  = Cov(E[Ψ|U], E[Ψ|U])`, outer over `U`, inner over `(V, W)`;
//! - `σ_II² = Cov(E[Ψ|V], E[Ψ|V])`, outer over `V`, inner over `(U, W)`;
//! - `σ_I² + σ_II² + σ_III² = Var(E[Ψ|U, V])`, outer over `(U, V)`, inner
//!   over `W`;
//! - `σ_IV² = Var(Ψ) − Var(E[Ψ|U, V])`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{McError, MonteCarloConfig};
use crate::linalg::clip_negative_eigenvalues;
use crate::rng::stream_rng;
use crate::stats::{normal_pdf, normal_quantile};

/// Replication slot reserved for oracle draws.
const ORACLE_REP: u64 = u64::MAX - 1;
/// Outer draws per parallel chunk.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Outer (conditioning) draws per component; at least 10⁴.
    pub outer: usize,
    /// Inner draws averaged for each conditional mean.
    pub inner: usize,
}

impl OracleBudget {
    pub fn new(outer: usize) -> Self {
        OracleBudget { outer, inner: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceOracle {
    pub sigma_i2: DMatrix<f64>,
    pub sigma_ii2: DMatrix<f64>,
    pub sigma_iii2: DMatrix<f64>,
    pub sigma_iv2: DMatrix<f64>,
    /// `(1/(GH)) (H σ_I² + G σ_II² + σ_III² + σ_IV²)`
    pub omega_gh: DMatrix<f64>,
    /// `Var(Ψ)` from the single (unconditional) draws.
    pub score_variance: DMatrix<f64>,
    /// Entrywise Monte Carlo standard errors of the four components.
    pub se_i2: DMatrix<f64>,
    pub se_ii2: DMatrix<f64>,
    pub se_iii2: DMatrix<f64>,
    pub se_iv2: DMatrix<f64>,
    /// `min{G/σ_I², H/σ_II², GH}` on the leading diagonal entry.
    pub r_gh: f64,
}

/// Latents attached to a row, a column or a cell: one per slope regressor
/// plus one for the error.
struct Draws<'a> {
    rng: &'a mut ChaCha8Rng,
    k: usize,
}

impl Draws<'_> {
    fn next(&mut self) -> Vec<f64> {
        (0..self.k).map(|_| self.rng.sample(StandardNormal)).collect()
    }
}

struct ScoreModel {
    d: usize,
    tau: f64,
    q_tau: f64,
    w: super::Weights,
}

impl ScoreModel {
    /// `Ψ(U, V, W)` accumulated into `out`.
    fn add_score(&self, u: &[f64], v: &[f64], c: &[f64], out: &mut [f64]) {
        let s = self.d - 1;
        let w = &self.w;
        let e = w.u_e * u[s] + w.v_e * v[s] + w.w_e * c[s];
        let weight = if e <= self.q_tau { self.tau - 1.0 } else { self.tau };
        out[0] += weight;
        for j in 1..self.d {
            out[j] += weight * (w.u_x * u[j - 1] + w.v_x * v[j - 1] + w.w_x * c[j - 1]);
        }
    }
}

/// Streaming cross-covariance between paired vectors `a_i`, `b_i`, with
/// the second moments of the products kept for standard errors.
#[derive(Clone)]
struct CrossCov {
    d: usize,
    n: usize,
    sa: Vec<f64>,
    sb: Vec<f64>,
    sab: Vec<f64>,
    sab2: Vec<f64>,
}

impl CrossCov {
    fn new(d: usize) -> Self {
        CrossCov { d, n: 0, sa: vec![0.0; d], sb: vec![0.0; d], sab: vec![0.0; d * d], sab2: vec![0.0; d * d] }
    }

    fn push(&mut self, a: &[f64], b: &[f64]) {
        self.n += 1;
        for r in 0..self.d {
            self.sa[r] += a[r];
            self.sb[r] += b[r];
            for c in 0..self.d {
                // symmetrized product
                let p = 0.5 * (a[r] * b[c] + a[c] * b[r]);
                self.sab[r * self.d + c] += p;
                self.sab2[r * self.d + c] += p * p;
            }
        }
    }

    fn merge(mut self, other: &CrossCov) -> Self {
        self.n += other.n;
        for (x, y) in self.sa.iter_mut().zip(&other.sa) {
            *x += y;
        }
        for (x, y) in self.sb.iter_mut().zip(&other.sb) {
            *x += y;
        }
        for (x, y) in self.sab.iter_mut().zip(&other.sab) {
            *x += y;
        }
        for (x, y) in self.sab2.iter_mut().zip(&other.sab2) {
            *x += y;
        }
        self
    }

    /// Sample cross-covariance and its entrywise standard error.
    fn finish(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n as f64;
        let d = self.d;
        let cov = DMatrix::from_fn(d, d, |r, c| {
            let ma = 0.5 * (self.sa[r] * self.sb[c] + self.sa[c] * self.sb[r]) / (n * n);
            (self.sab[r * d + c] / n - ma) * n / (n - 1.0)
        });
        let se = DMatrix::from_fn(d, d, |r, c| {
            let m = self.sab[r * d + c] / n;
            ((self.sab2[r * d + c] / n - m * m).max(0.0) / n).sqrt()
        });
        (cov, se)
    }
}

#[derive(Clone)]
struct Accumulators {
    row: CrossCov,
    col: CrossCov,
    cell: CrossCov,
    single: CrossCov,
}

impl Accumulators {
    fn new(d: usize) -> Self {
        Accumulators { row: CrossCov::new(d), col: CrossCov::new(d), cell: CrossCov::new(d), single: CrossCov::new(d) }
    }

    fn merge(self, o: &Accumulators) -> Self {
        Accumulators {
            row: self.row.merge(&o.row),
            col: self.col.merge(&o.col),
            cell: self.cell.merge(&o.cell),
            single: self.single.merge(&o.single),
        }
    }
}

fn run_chunk(model: &ScoreModel, seed: u64, chunk: usize, count: usize, inner: usize) -> Accumulators {
    let d = model.d;
    let k = d; // slopes + error
    let mut rng = stream_rng(seed, ORACLE_REP, chunk as u32);
    let mut acc = Accumulators::new(d);
    let scale = 1.0 / inner as f64;
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for _ in 0..count {
        let mut draws = Draws { rng: &mut rng, k };

        // row conditioning
        let u = draws.next();
        a.iter_mut().for_each(|v| *v = 0.0);
        b.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..inner {
            let (v, c) = (draws.next(), draws.next());
            model.add_score(&u, &v, &c, &mut a);
            let (v, c) = (draws.next(), draws.next());
            model.add_score(&u, &v, &c, &mut b);
        }
        a.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= scale);
        acc.row.push(&a, &b);

        // column conditioning
        let v = draws.next();
        a.iter_mut().for_each(|x| *x = 0.0);
        b.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..inner {
            let (u, c) = (draws.next(), draws.next());
            model.add_score(&u, &v, &c, &mut a);
            let (u, c) = (draws.next(), draws.next());
            model.add_score(&u, &v, &c, &mut b);
        }
        a.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= scale);
        acc.col.push(&a, &b);

        // cell conditioning, plus one unconditional score
        let (u, v) = (draws.next(), draws.next());
        a.iter_mut().for_each(|x| *x = 0.0);
        b.iter_mut().for_each(|x| *x = 0.0);
        let mut single = vec![0.0; d];
        for i in 0..inner {
            let c = draws.next();
            if i == 0 {
                model.add_score(&u, &v, &c, &mut single);
            }
            model.add_score(&u, &v, &c, &mut a);
            let c = draws.next();
            model.add_score(&u, &v, &c, &mut b);
        }
        a.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= scale);
        acc.cell.push(&a, &b);
        acc.single.push(&single, &single);
    }
    acc
}

/// Estimates `σ_I², …, σ_IV²` and `Ω_GH` for the two-way design at
/// quantile `tau` by nested Monte Carlo.
pub fn oracle_variance_components(
    config: &MonteCarloConfig,
    tau: f64,
    budget: OracleBudget,
) -> Result<VarianceOracle, McError> {
    MonteCarloConfig { tau, ..config.clone() }.validate()?;
    if budget.outer < 10_000 {
        return Err(McError::InvalidConfig("oracle needs at least 10^4 outer draws".into()));
    }
    if budget.inner < 1 {
        return Err(McError::InvalidConfig("oracle needs at least one inner draw".into()));
    }
    let sd = config.weights.error_sd();
    if sd <= 0.0 {
        return Err(McError::InvalidConfig("error variance must be positive".into()));
    }
    let model = ScoreModel { d: config.d, tau, q_tau: sd * normal_quantile(tau), w: config.weights };
    let chunks = budget.outer.div_ceil(CHUNK);
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(budget.outer - c * CHUNK);
            run_chunk(&model, config.seed, c, count, budget.inner)
        })
        .collect::<Vec<_>>()
        .iter()
        .fold(Accumulators::new(config.d), |a, b| a.merge(b));

    let (row, se_i2) = acc.row.finish();
    let (col, se_ii2) = acc.col.finish();
    let (cell, se_cell) = acc.cell.finish();
    let (var, se_var) = acc.single.finish();
    let hypot = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.zip_map(b, |x, y| (x * x + y * y).sqrt());
    let se_iii2 = hypot(&hypot(&se_cell, &se_i2), &se_ii2);
    let se_iv2 = hypot(&se_var, &se_cell);

    let (sigma_i2, _) = clip_negative_eigenvalues(&row);
    let (sigma_ii2, _) = clip_negative_eigenvalues(&col);
    let (sigma_iii2, _) = clip_negative_eigenvalues(&(&cell - &row - &col));
    let (sigma_iv2, _) = clip_negative_eigenvalues(&(&var - &cell));

    let (g, h) = (config.g as f64, config.h as f64);
    let omega_gh = (&sigma_i2 * h + &sigma_ii2 * g + &sigma_iii2 + &sigma_iv2) / (g * h);
    let rate = |count: f64, s: f64| if s > 0.0 { count / s } else { f64::INFINITY };
    let r_gh = rate(g, sigma_i2[(0, 0)]).min(rate(h, sigma_ii2[(0, 0)])).min(g * h);
    Ok(VarianceOracle {
        sigma_i2,
        sigma_ii2,
        sigma_iii2,
        sigma_iv2,
        omega_gh,
        score_variance: var,
        se_i2,
        se_ii2,
        se_iii2,
        se_iv2,
        r_gh,
    })
}

/// Population Jacobian `D(τ) = f_e(q_τ) E[X Xᵀ]` of the additive-normal
/// design: `e ~ N(0, σ_e²)` is independent of `X`, the slopes have mean 0
/// and variance `wUx² + wVx² + wWx²` and are mutually independent.
pub fn true_jacobian(config: &MonteCarloConfig, tau: f64) -> DMatrix<f64> {
    let sd = config.weights.error_sd();
    let density = normal_pdf(normal_quantile(tau)) / sd;
    let mut m = DMatrix::identity(config.d, config.d) * config.weights.regressor_var();
    m[(0, 0)] = 1.0;
    m * density
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::Weights;

    #[test]
    fn budget_is_checked() {
        let cfg = MonteCarloConfig::two_way_default(1, 1);
        assert!(oracle_variance_components(&cfg, 0.5, OracleBudget::new(100)).is_err());
    }

    #[test]
    fn iid_design_has_only_idiosyncratic_variance() {
        let cfg = MonteCarloConfig { d: 2, weights: Weights::independent(), ..MonteCarloConfig::two_way_default(1, 3) };
        let o = oracle_variance_components(&cfg, 0.5, OracleBudget { outer: 10_000, inner: 8 }).unwrap();
        for m in [&o.sigma_i2, &o.sigma_ii2, &o.sigma_iii2] {
            assert!(m.iter().all(|v| v.abs() < 0.01), "{m}");
        }
        // τ(1 − τ) E[X²] = 0.25 for the slope
        assert!((o.sigma_iv2[(1, 1)] - 0.25).abs() < 4.0 * o.se_iv2[(1, 1)] + 1e-3, "{}", o.sigma_iv2);
        assert_eq!(o.r_gh, 2500.0);
    }

    #[test]
    fn true_jacobian_of_unit_design() {
        let cfg = MonteCarloConfig { d: 3, ..MonteCarloConfig::two_way_default(1, 0) };
        let d = true_jacobian(&cfg, 0.5);
        let f0 = normal_pdf(0.0) / 3f64.sqrt();
        assert!((d[(0, 0)] - f0).abs() < 1e-15);
        assert!((d[(2, 2)] - 3.0 * f0).abs() < 1e-15);
        assert_eq!(d[(0, 1)], 0.0);
    }
}
