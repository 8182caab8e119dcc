//! Linear quantile regression: the check loss, a primal-dual interior-point
//! solver and the estimated quantile scores.
//!
//! The fit minimizes `Σ ρ_τ(y − xᵀβ)` through its exact linear-programming
//! form. The solver works on the bounded dual
//!
//! ```text
//! max  yᵀa   s.t.  Xᵀa = (1 − τ) Xᵀ1,  0 ≤ a ≤ 1
//! ```
//!
//! with Mehrotra predictor-corrector steps (the Frisch–Newton scheme), and
//! recovers `β` as the multiplier of the equality constraints. Every iterate
//! keeps `a` strictly inside the box, so `yᵀa − (1 − τ)Σy` is a certified
//! lower bound and the reported duality gap is `objective(β) − bound`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{add_outer_lower, fill_upper, numeric_rank};
use crate::panel::{CellIndex, PanelArray};

#[derive(Debug, Error)]
pub enum QrError {
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidTau(f64),
    #[error("design matrix has numeric rank {rank} < d = {d}")]
    RankDeficient { rank: usize, d: usize },
    #[error("interior point did not converge in {} iterations (gap {:.3e})", .fit.solver.iterations, .fit.solver.duality_gap)]
    MaxIterExceeded { fit: Box<QuantileFit> },
    #[error("coefficient vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Newton system could not be factorized")]
    NumericalBreakdown,
}

pub(crate) fn check_tau(tau: f64) -> Result<(), QrError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(QrError::InvalidTau(tau))
    }
}

/// Check loss `ρ_τ(u) = u (τ − 1{u ≤ 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64, QrError> {
    check_tau(tau)?;
    Ok(rho(u, tau))
}

#[inline]
fn rho(u: f64, tau: f64) -> f64 {
    if u <= 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Sum of check losses of `y − Xβ` for a row-major `n × d` design.
pub fn objective(y: &[f64], x: &[f64], beta: &[f64], tau: f64) -> f64 {
    let d = beta.len();
    y.iter()
        .zip(x.chunks_exact(d))
        .map(|(yi, xi)| rho(yi - dot(xi, beta), tau))
        .sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QrOptions {
    /// Convergence threshold on the duality gap, relative to `1 + |objective|`.
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions { gap_tol: 1e-8, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Certified gap `objective − dual bound` at the returned iterate.
    pub duality_gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub tau: f64,
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub solver: SolverStats,
}

/// Fits the τ-th linear quantile regression of `y` on the panel design.
///
/// On non-convergence the best iterate found is returned inside
/// [`QrError::MaxIterExceeded`] with `converged = false`.
pub fn fit_qr(panel: &PanelArray, tau: f64, opts: &QrOptions) -> Result<QuantileFit, QrError> {
    fit_qr_dense(panel.y(), panel.x(), panel.d(), tau, opts)
}

/// [`fit_qr`] on a raw row-major design.
pub fn fit_qr_dense(
    y: &[f64],
    x: &[f64],
    d: usize,
    tau: f64,
    opts: &QrOptions,
) -> Result<QuantileFit, QrError> {
    check_tau(tau)?;
    let n = y.len();
    if x.len() != n * d {
        return Err(QrError::DimensionMismatch { expected: n * d, got: x.len() });
    }
    let rank = numeric_rank(x, n, d);
    if rank < d {
        return Err(QrError::RankDeficient { rank, d });
    }
    let (beta, stats, basis) = FrischNewton::new(y, x, d, tau).solve(opts)?;
    let mut residuals: Vec<f64> = y
        .iter()
        .zip(x.chunks_exact(d))
        .map(|(yi, xi)| yi - dot(xi, &beta))
        .collect();
    // interpolated cells are exact zeros, not rounding noise of either sign
    for i in basis {
        residuals[i] = 0.0;
    }
    let objective = residuals.iter().map(|&u| rho(u, tau)).sum();
    let fit = QuantileFit { tau, beta_hat: beta, residuals, objective, solver: stats };
    if fit.solver.converged {
        Ok(fit)
    } else {
        Err(QrError::MaxIterExceeded { fit: Box::new(fit) })
    }
}

/// Fraction of the distance to the boundary taken by each step.
const STEP_DAMPING: f64 = 0.99995;

struct FrischNewton<'a> {
    y: &'a [f64],
    x: &'a [f64],
    n: usize,
    d: usize,
    tau: f64,
    b: Vec<f64>,
    y_sum: f64,
}

struct Direction {
    da: Vec<f64>,
    dbeta: Vec<f64>,
    dz: Vec<f64>,
    dw: Vec<f64>,
}

impl<'a> FrischNewton<'a> {
    fn new(y: &'a [f64], x: &'a [f64], d: usize, tau: f64) -> Self {
        let n = y.len();
        let mut b = vec![0.0; d];
        for xi in x.chunks_exact(d) {
            for (bj, xj) in b.iter_mut().zip(xi) {
                *bj += (1.0 - tau) * xj;
            }
        }
        FrischNewton { y, x, n, d, tau, b, y_sum: y.iter().sum() }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn dual_bound(&self, a: &[f64]) -> f64 {
        dot(self.y, a) - (1.0 - self.tau) * self.y_sum
    }

    fn least_squares_start(&self) -> Result<Vec<f64>, QrError> {
        let d = self.d;
        let mut acc = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        for i in 0..self.n {
            let xi = self.row(i);
            add_outer_lower(&mut acc, xi, 1.0);
            for (r, xj) in rhs.iter_mut().zip(xi) {
                *r += xj * self.y[i];
            }
        }
        solve_spd(fill_upper(&acc, d), DVector::from_vec(rhs))
    }

    /// Solves the reduced Newton system for given right-hand sides.
    ///
    /// Residual blocks: `r_b = b − Xᵀa`, `r_c = y − Xβ − w + z`,
    /// `r_az` for `a∘z`, `r_sw` for `s∘w` (with `s = 1 − a`).
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        a: &[f64],
        w: &[f64],
        z: &[f64],
        r_b: &[f64],
        r_c: &[f64],
        r_az: &[f64],
        r_sw: &[f64],
    ) -> Result<Direction, QrError> {
        let (n, d) = (self.n, self.d);
        let mut acc = vec![0.0; d * d];
        let mut rhs = vec![0.0; d];
        let mut q = vec![0.0; n];
        let mut rt = vec![0.0; n];
        for i in 0..n {
            let s = 1.0 - a[i];
            q[i] = w[i] / s + z[i] / a[i];
            rt[i] = r_c[i] - r_sw[i] / s + r_az[i] / a[i];
            let xi = self.row(i);
            add_outer_lower(&mut acc, xi, 1.0 / q[i]);
            let c = rt[i] / q[i];
            for (r, xj) in rhs.iter_mut().zip(xi) {
                *r += c * xj;
            }
        }
        for (r, rb) in rhs.iter_mut().zip(r_b) {
            *r -= rb;
        }
        let dbeta = solve_spd(fill_upper(&acc, d), DVector::from_vec(rhs))?;
        let mut da = vec![0.0; n];
        let mut dz = vec![0.0; n];
        let mut dw = vec![0.0; n];
        for i in 0..n {
            let s = 1.0 - a[i];
            da[i] = (rt[i] - dot(self.row(i), &dbeta)) / q[i];
            dz[i] = (r_az[i] - z[i] * da[i]) / a[i];
            dw[i] = (r_sw[i] + w[i] * da[i]) / s;
        }
        Ok(Direction { da, dbeta, dz, dw })
    }

    fn solve(&self, opts: &QrOptions) -> Result<(Vec<f64>, SolverStats, Vec<usize>), QrError> {
        let (n, d, tau) = (self.n, self.d, self.tau);
        let mut beta = self.least_squares_start()?;
        let mut a = vec![1.0 - tau; n];
        let resid: Vec<f64> = (0..n).map(|i| self.y[i] - dot(self.row(i), &beta)).collect();
        let mean_abs = resid.iter().map(|r| r.abs()).sum::<f64>() / n as f64;
        let y_scale = self.y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let shift = 0.1 * mean_abs + 1e-6 * (1.0 + y_scale);
        let mut w: Vec<f64> = resid.iter().map(|r| r.max(0.0) + shift).collect();
        let mut z: Vec<f64> = resid.iter().map(|r| (-r).max(0.0) + shift).collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut iterations = 0;
        let mut r_b = vec![0.0; d];
        let mut r_c = vec![0.0; n];
        let mut r_az = vec![0.0; n];
        let mut r_sw = vec![0.0; n];

        loop {
            let obj = objective(self.y, self.x, &beta, tau);
            let gap = (obj - self.dual_bound(&a)).max(0.0);
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, beta.clone()));
            }
            if gap <= opts.gap_tol * (1.0 + obj.abs()) {
                let (beta, gap, basis) = match self.vertex_polish(&beta, obj) {
                    Some((vb, vobj, rows)) => {
                        let vgap = (vobj - self.dual_bound(&a)).max(0.0);
                        if vgap <= opts.gap_tol * (1.0 + vobj.abs()) {
                            (vb, vgap, rows)
                        } else {
                            (beta, gap, Vec::new())
                        }
                    }
                    None => (beta, gap, Vec::new()),
                };
                return Ok((beta, SolverStats { iterations, duality_gap: gap, converged: true }, basis));
            }
            if iterations >= opts.max_iter {
                let (gap, beta) = best.expect("at least one iterate");
                return Ok((beta, SolverStats { iterations, duality_gap: gap, converged: false }, Vec::new()));
            }
            iterations += 1;

            r_b.copy_from_slice(&self.b);
            for i in 0..n {
                let xi = self.row(i);
                for (rb, xj) in r_b.iter_mut().zip(xi) {
                    *rb -= xj * a[i];
                }
                r_c[i] = self.y[i] - dot(xi, &beta) - w[i] + z[i];
            }
            let comp: f64 = (0..n).map(|i| a[i] * z[i] + (1.0 - a[i]) * w[i]).sum();
            let mu = comp / (2 * n) as f64;

            // predictor
            for i in 0..n {
                r_az[i] = -a[i] * z[i];
                r_sw[i] = -(1.0 - a[i]) * w[i];
            }
            let aff = self.direction(&a, &w, &z, &r_b, &r_c, &r_az, &r_sw)?;
            let (ap, ad) = self.step_lengths(&a, &w, &z, &aff, 1.0);
            let comp_aff: f64 = (0..n)
                .map(|i| {
                    let an = a[i] + ap * aff.da[i];
                    (an) * (z[i] + ad * aff.dz[i]) + (1.0 - an) * (w[i] + ad * aff.dw[i])
                })
                .sum();
            let sigma = (comp_aff / comp).clamp(0.0, 1.0).powi(3);

            // corrector
            for i in 0..n {
                let ds = -aff.da[i];
                r_az[i] = sigma * mu - a[i] * z[i] - aff.da[i] * aff.dz[i];
                r_sw[i] = sigma * mu - (1.0 - a[i]) * w[i] - ds * aff.dw[i];
            }
            let dir = self.direction(&a, &w, &z, &r_b, &r_c, &r_az, &r_sw)?;
            let (ap, ad) = self.step_lengths(&a, &w, &z, &dir, STEP_DAMPING);
            for i in 0..n {
                a[i] += ap * dir.da[i];
                z[i] += ad * dir.dz[i];
                w[i] += ad * dir.dw[i];
            }
            for (bj, dj) in beta.iter_mut().zip(&dir.dbeta) {
                *bj += ad * dj;
            }
        }
    }

    /// Moves a converged interior iterate to the nearby basic solution that
    /// interpolates the `d` linearly independent cells with the smallest
    /// residuals. Kept only if it does not raise the objective, so the
    /// returned fit is an exact vertex whenever the interior point has
    /// identified the optimal basis.
    fn vertex_polish(&self, beta: &[f64], obj: f64) -> Option<(Vec<f64>, f64, Vec<usize>)> {
        let d = self.d;
        let mut order: Vec<(f64, usize)> =
            (0..self.n).map(|i| ((self.y[i] - dot(self.row(i), beta)).abs(), i)).collect();
        order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut rows = Vec::with_capacity(d);
        for &(_, i) in &order {
            let xi = self.row(i);
            let mut v = xi.to_vec();
            for q in &basis {
                let c = dot(&v, q);
                v.iter_mut().zip(q).for_each(|(vj, qj)| *vj -= c * qj);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 * dot(xi, xi).sqrt() {
                v.iter_mut().for_each(|vj| *vj /= norm);
                basis.push(v);
                rows.push(i);
                if rows.len() == d {
                    break;
                }
            }
        }
        if rows.len() < d {
            return None;
        }
        let xb = DMatrix::from_fn(d, d, |r, c| self.row(rows[r])[c]);
        let yb = DVector::from_fn(d, |r, _| self.y[rows[r]]);
        let vb: Vec<f64> = xb.lu().solve(&yb)?.iter().copied().collect();
        if vb.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let vobj = objective(self.y, self.x, &vb, self.tau);
        (vobj <= obj + 1e-12 * (1.0 + obj.abs())).then_some((vb, vobj, rows))
    }

    /// Largest primal / dual steps (capped at 1) keeping `0 < a < 1` and
    /// `w, z > 0`, scaled by `damping`.
    fn step_lengths(&self, a: &[f64], w: &[f64], z: &[f64], dir: &Direction, damping: f64) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for i in 0..self.n {
            let da = dir.da[i];
            if da < 0.0 {
                ap = ap.min(-a[i] / da);
            } else if da > 0.0 {
                ap = ap.min((1.0 - a[i]) / da);
            }
            if dir.dz[i] < 0.0 {
                ad = ad.min(-z[i] / dir.dz[i]);
            }
            if dir.dw[i] < 0.0 {
                ad = ad.min(-w[i] / dir.dw[i]);
            }
        }
        ((damping * ap).min(1.0), (damping * ad).min(1.0))
    }
}

fn solve_spd(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<Vec<f64>, QrError> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch.solve(&rhs).iter().copied().collect());
    }
    m.lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .map(|v| v.iter().copied().collect())
        .ok_or(QrError::NumericalBreakdown)
}

/// Per-cell estimated quantile scores `ψ̂_gh = x_gh (τ − 1{y_gh ≤ x_ghᵀβ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    g_count: usize,
    h_count: usize,
    d: usize,
    cells: Vec<CellIndex>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    /// Builds a score matrix from explicit cells and row-major scores.
    pub fn from_parts(
        g_count: usize,
        h_count: usize,
        d: usize,
        cells: Vec<CellIndex>,
        scores: Vec<f64>,
    ) -> Result<Self, QrError> {
        if scores.len() != cells.len() * d {
            return Err(QrError::DimensionMismatch { expected: cells.len() * d, got: scores.len() });
        }
        Ok(ScoreMatrix { g_count, h_count, d, cells, scores })
    }

    /// Complete grid with scores given row-major over cells (`g` outer).
    pub fn from_grid(g_count: usize, h_count: usize, d: usize, scores: Vec<f64>) -> Result<Self, QrError> {
        let cells = (0..g_count)
            .flat_map(|g| (0..h_count).map(move |h| CellIndex { g, h }))
            .collect();
        Self::from_parts(g_count, h_count, d, cells, scores)
    }

    pub fn g_count(&self) -> usize {
        self.g_count
    }

    pub fn h_count(&self) -> usize {
        self.h_count
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cells(&self) -> &[CellIndex] {
        &self.cells
    }

    pub fn score(&self, i: usize) -> &[f64] {
        &self.scores[i * self.d..(i + 1) * self.d]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Sample mean of the scores.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for s in self.scores.chunks_exact(self.d) {
            for (mj, sj) in m.iter_mut().zip(s) {
                *mj += sj;
            }
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Evaluates the quantile scores at `beta`. The indicator uses an exact
/// `≤` on the computed residual.
pub fn score_matrix(panel: &PanelArray, beta: &[f64], tau: f64) -> Result<ScoreMatrix, QrError> {
    let d = panel.d();
    if beta.len() != d {
        return Err(QrError::DimensionMismatch { expected: d, got: beta.len() });
    }
    let residuals: Vec<f64> = (0..panel.n()).map(|i| panel.y()[i] - dot(panel.x_row(i), beta)).collect();
    score_matrix_from_residuals(panel, &residuals, tau)
}

/// [`score_matrix`] from precomputed residuals, e.g. [`QuantileFit::residuals`],
/// whose interpolated cells are exact zeros.
pub fn score_matrix_from_residuals(panel: &PanelArray, residuals: &[f64], tau: f64) -> Result<ScoreMatrix, QrError> {
    check_tau(tau)?;
    let d = panel.d();
    if residuals.len() != panel.n() {
        return Err(QrError::DimensionMismatch { expected: panel.n(), got: residuals.len() });
    }
    let mut scores = Vec::with_capacity(panel.n() * d);
    for (i, &u) in residuals.iter().enumerate() {
        let weight = if u <= 0.0 { tau - 1.0 } else { tau };
        scores.extend(panel.x_row(i).iter().map(|v| v * weight));
    }
    ScoreMatrix::from_parts(panel.g_count(), panel.h_count(), d, panel.cells().to_vec(), scores)
}
