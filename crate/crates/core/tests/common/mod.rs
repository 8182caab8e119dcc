//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use twqr::panel::PanelArray;

/// Optimal check-loss sum by exact descent over the vertices of the primal
/// problem (each vertex interpolates `d` cells).
///
/// From a vertex with basis `B`, the `2d` edges move one basic residual off
/// zero in either direction while the others stay at zero. The objective is
/// convex and piecewise linear along an edge, so the exact minimiser is a
/// breakpoint found by walking the sorted kinks. The vertex is optimal when
/// no edge has a negative slope. Ties (more than `d` zero residuals) have
/// probability zero for continuous data.
pub fn lp_oracle(y: &[f64], x: &[f64], d: usize, tau: f64) -> f64 {
    let n = y.len();
    let row = |i: usize| &x[i * d..(i + 1) * d];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    // start from the least-squares fit's best-fitting independent cells
    let xm = nalgebra::DMatrix::from_row_slice(n, d, x);
    let ls = (xm.transpose() * &xm).lu().solve(&(xm.transpose() * nalgebra::DVector::from_column_slice(y))).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let ri = (y[i] - dot(row(i), ls.as_slice())).abs();
        let rj = (y[j] - dot(row(j), ls.as_slice())).abs();
        ri.total_cmp(&rj)
    });
    let mut basis: Vec<usize> = Vec::with_capacity(d);
    for &i in &order {
        let mut trial = basis.clone();
        trial.push(i);
        let m = nalgebra::DMatrix::from_fn(trial.len(), d, |r, c| row(trial[r])[c]);
        if m.svd(false, false).singular_values.min() > 1e-9 {
            basis = trial;
            if basis.len() == d {
                break;
            }
        }
    }
    assert_eq!(basis.len(), d, "design must have full column rank");

    for _ in 0..100_000 {
        let xb = nalgebra::DMatrix::from_fn(d, d, |r, c| row(basis[r])[c]);
        let inv = xb.clone().try_inverse().expect("basis is nonsingular");
        let yb = nalgebra::DVector::from_fn(d, |r, _| y[basis[r]]);
        let beta = &inv * yb;
        let resid: Vec<f64> = (0..n).map(|i| y[i] - dot(row(i), beta.as_slice())).collect();
        let in_basis = |i: usize| basis.contains(&i);
        let psi = |r: f64| if r < 0.0 { tau - 1.0 } else { tau };

        let mut best: Option<(f64, usize, f64, Vec<f64>)> = None;
        for k in 0..d {
            for s in [1.0, -1.0] {
                let delta: Vec<f64> = (0..d).map(|c| s * inv[(c, k)]).collect();
                let a: Vec<f64> = (0..n).map(|i| dot(row(i), &delta)).collect();
                let own = if s > 0.0 { 1.0 - tau } else { tau };
                let slope = own - (0..n).filter(|&i| !in_basis(i)).map(|i| a[i] * psi(resid[i])).sum::<f64>();
                if slope < -1e-12 && best.as_ref().is_none_or(|b| slope < b.0) {
                    best = Some((slope, k, s, delta));
                }
            }
        }
        let Some((slope0, k, _, delta)) = best else {
            return resid.iter().map(|&r| r * psi(r)).sum();
        };
        let a: Vec<f64> = (0..n).map(|i| dot(row(i), &delta)).collect();
        let mut kinks: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !in_basis(i) && a[i] != 0.0)
            .map(|i| (resid[i] / a[i], i))
            .filter(|(t, _)| *t > 0.0)
            .collect();
        kinks.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut slope = slope0;
        let mut entering = None;
        for (_, i) in kinks {
            slope += a[i].abs();
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        basis[k] = entering.expect("objective is bounded below");
    }
    panic!("vertex descent did not terminate");
}

/// Exhaustive search over interpolating subsets for tiny problems.
pub fn vertex_enumeration(y: &[f64], x: &[f64], d: usize, tau: f64) -> f64 {
    let n = y.len();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let xb = nalgebra::DMatrix::from_fn(d, d, |r, c| x[idx[r] * d + c]);
        let yb = nalgebra::DVector::from_fn(d, |r, _| y[idx[r]]);
        if xb.determinant().abs() > 1e-12 {
            if let Some(beta) = xb.lu().solve(&yb) {
                best = best.min(twqr::qr::objective(y, x, beta.as_slice(), tau));
            }
        }
        // next combination
        let mut k = d;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if idx[k] < n - d + k {
                idx[k] += 1;
                for t in k + 1..d {
                    idx[t] = idx[t - 1] + 1;
                }
                break;
            }
        }
    }
}

/// A `G × H` panel with an intercept and `d − 1` regressors carrying row
/// and column effects, and a heavy-tailed error.
pub fn random_panel(rng: &mut ChaCha8Rng, g: usize, h: usize, d: usize) -> PanelArray {
    let row: Vec<f64> = (0..g).map(|_| rng.sample(StandardNormal)).collect();
    let col: Vec<f64> = (0..h).map(|_| rng.sample(StandardNormal)).collect();
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut x = Vec::with_capacity(g * h * d);
    let mut y = Vec::with_capacity(g * h);
    for gi in 0..g {
        for hi in 0..h {
            let mut xb = 0.0;
            for j in 0..d {
                let v = if j == 0 { 1.0 } else { row[gi] + col[hi] + rng.sample::<f64, _>(StandardNormal) };
                x.push(v);
                xb += v * beta[j];
            }
            let t: f64 = rng.sample::<f64, _>(StandardNormal) / rng.random_range(0.2_f64..1.0);
            y.push(xb + row[gi] + t);
        }
    }
    PanelArray::from_grid(g, h, d, y, x).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random score matrix on a `g × h` grid; roughly a fifth of the cells are
/// dropped when `missing` is set.
pub fn random_scores(rng: &mut ChaCha8Rng, g: usize, h: usize, d: usize, missing: bool) -> twqr::qr::ScoreMatrix {
    let mut cells = Vec::new();
    let mut scores = Vec::new();
    let row: Vec<f64> = (0..g).map(|_| rng.sample(StandardNormal)).collect();
    for gi in 0..g {
        for hi in 0..h {
            if missing && rng.random::<f64>() < 0.2 && !(gi == 0 && hi == 0) {
                continue;
            }
            cells.push(twqr::panel::CellIndex { g: gi, h: hi });
            for _ in 0..d {
                scores.push(row[gi] + rng.sample::<f64, _>(StandardNormal));
            }
        }
    }
    twqr::qr::ScoreMatrix::from_parts(g, h, d, cells, scores).unwrap()
}
