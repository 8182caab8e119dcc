use rand::Rng;
use rand_distr::StandardNormal;

use super::MonteCarloConfig;
use crate::panel::PanelArray;
use crate::rng::{regressor_stream, stream_rng, ERROR_STREAM};

/// Row, column and cell latents of one additive component, drawn in that
/// order from a single stream.
pub(super) struct Latents {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
    pub cell: Vec<f64>,
}

pub(super) fn draw_latents<R: Rng>(rng: &mut R, g: usize, h: usize) -> Latents {
    let mut normals = |k: usize| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
    let row = normals(g);
    let col = normals(h);
    let cell = normals(g * h);
    Latents { row, col, cell }
}

/// Draws replication `rep` of the two-way design. The first regressor is
/// the constant 1 and every coefficient equals 1.
///
/// The configuration must already be valid (see
/// [`MonteCarloConfig::validate`]).
pub fn generate_dgp(config: &MonteCarloConfig, rep: u64) -> PanelArray {
    let (g, h, d) = (config.g, config.h, config.d);
    let w = &config.weights;
    let n = g * h;
    let mut x = vec![0.0; n * d];
    let mut y = vec![1.0; n];
    for i in 0..n {
        x[i * d] = 1.0;
    }
    for j in 1..d {
        let mut rng = stream_rng(config.seed, rep, regressor_stream(j));
        let lat = draw_latents(&mut rng, g, h);
        for gi in 0..g {
            for hi in 0..h {
                let i = gi * h + hi;
                let v = w.u_x * lat.row[gi] + w.v_x * lat.col[hi] + w.w_x * lat.cell[i];
                x[i * d + j] = v;
                y[i] += v;
            }
        }
    }
    let mut rng = stream_rng(config.seed, rep, ERROR_STREAM);
    let lat = draw_latents(&mut rng, g, h);
    for gi in 0..g {
        for hi in 0..h {
            let i = gi * h + hi;
            y[i] += w.u_e * lat.row[gi] + w.v_e * lat.col[hi] + w.w_e * lat.cell[i];
        }
    }
    PanelArray::from_grid(g, h, d, y, x).expect("generated grid is well formed")
}
