//! Random path ensembles for sweeps and scenario runs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::path_space::{Grid, Path};
use crate::rng;

/// Random-walk segment with a random end time on the grid; `scale` sets the
/// value magnitude.
pub fn random_segment(r: &mut ChaCha8Rng, grid: Grid, dim: usize, scale: f64) -> Path {
    let end = r.random_range(0..=grid.n_steps());
    random_segment_with_end(r, grid, dim, scale, end)
}

/// Random-walk segment ending at a fixed grid index.
pub fn random_segment_with_end(
    r: &mut ChaCha8Rng,
    grid: Grid,
    dim: usize,
    scale: f64,
    end: usize,
) -> Path {
    let mut values = Vec::with_capacity((end + 1) * dim);
    let mut x: Vec<f64> = (0..dim)
        .map(|_| scale * r.random_range(-1.0..1.0))
        .collect();
    values.extend_from_slice(&x);
    for _ in 0..end {
        for v in x.iter_mut() {
            *v += 0.4 * scale * rng::standard_normal(r);
        }
        values.extend_from_slice(&x);
    }
    Path::new(grid, dim, values).expect("finite values")
}

/// Brownian sample over the whole grid, started at `start`.
pub fn brownian_path(r: &mut ChaCha8Rng, grid: Grid, start: &[f64]) -> Path {
    let dim = start.len();
    let sqdt = grid.step().sqrt();
    let mut values = Vec::with_capacity((grid.n_steps() + 1) * dim);
    let mut x = start.to_vec();
    values.extend_from_slice(&x);
    for _ in 0..grid.n_steps() {
        for v in x.iter_mut() {
            *v += sqdt * rng::standard_normal(r);
        }
        values.extend_from_slice(&x);
    }
    Path::new(grid, dim, values).expect("finite values")
}

/// A sweep ensemble mixing generic random segments with the edge shapes the
/// bound checks care about: zero paths, constants, segments whose maximum
/// sits at the terminal point, and tiny scales that would underflow naive
/// evaluation.
pub fn sweep_ensemble(seed: u64, grid: Grid, dim: usize, count: usize) -> Vec<Path> {
    let mut r = rng::global_stream(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let p = match i % 8 {
            0 => Path::constant(grid, &vec![0.0; dim], r.random_range(0..=grid.n_steps()))
                .expect("zero path"),
            1 => {
                let x: Vec<f64> = (0..dim).map(|_| r.random_range(-2.0..2.0)).collect();
                Path::constant(grid, &x, r.random_range(0..=grid.n_steps())).expect("constant")
            }
            2 => random_segment(&mut r, grid, dim, 1e-70),
            3 => {
                // Terminal point attains the maximum.
                let base = random_segment(&mut r, grid, dim, 1.0);
                let sup = base.sup_norm();
                let mut delta = vec![0.0; dim];
                delta[0] = sup + r.random_range(0.1..1.0);
                base.bump_terminal(&delta).expect("finite bump")
            }
            4 => random_segment(&mut r, grid, dim, 100.0),
            _ => random_segment(&mut r, grid, dim, 1.0),
        };
        out.push(p);
    }
    out
}
