//! Shared helpers for the unit tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::path_space::{Grid, Path};
use crate::rng;

/// Random-walk path segment with a random end time on the given grid.
pub fn random_path(r: &mut ChaCha8Rng, grid: Grid, dim: usize, scale: f64) -> Path {
    let end = r.random_range(0..=grid.n_steps());
    random_path_with_end(r, grid, dim, scale, end)
}

pub fn random_path_with_end(
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
    Path::new(grid, dim, values).unwrap()
}

/// Brownian sample over the whole grid, started at `start`.
pub fn brownian_path(r: &mut ChaCha8Rng, grid: Grid, dim: usize, start: &[f64]) -> Path {
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
    Path::new(grid, dim, values).unwrap()
}
