//! Forward simulation of the controlled path-dependent SDE.
//!
//! Euler–Maruyama only: the coefficients are path functionals that are
//! merely Lipschitz in the sup norm, so higher-order schemes buy nothing.
//! Noise increments are drawn once per (sample, step) from per-sample
//! streams and recorded, so coupled runs with a shared seed see identical
//! noise (common random numbers) and results do not depend on worker count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_space::{Grid, Path};
use crate::rng;

type DriftFn = dyn Fn(&Path, f64, f64) -> DVector<f64> + Send + Sync;
type DiffusionFn = dyn Fn(&Path, f64, f64) -> DMatrix<f64> + Send + Sync;

/// Drift and diffusion of the controlled state equation. Both maps must be
/// non-anticipative: they may only read the path segment they are given.
pub struct SdeCoefficients {
    dim: usize,
    noise_dim: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DiffusionFn>,
    lipschitz_hint: f64,
}

impl SdeCoefficients {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: impl Fn(&Path, f64, f64) -> DVector<f64> + Send + Sync + 'static,
        diffusion: impl Fn(&Path, f64, f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            lipschitz_hint: 1.0,
        }
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = l;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn lipschitz_hint(&self) -> f64 {
        self.lipschitz_hint
    }

    pub fn drift(&self, p: &Path, u: f64, v: f64) -> DVector<f64> {
        (self.drift)(p, u, v)
    }

    pub fn diffusion(&self, p: &Path, u: f64, v: f64) -> DMatrix<f64> {
        (self.diffusion)(p, u, v)
    }
}

/// Finite set of admissible control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid(Vec<f64>);

impl ControlGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Precondition("control grid must be nonempty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(
                "control grid values must be finite".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn singleton(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0.contains(&v)
    }
}

/// Per-step control values over a simulation window, validated against the
/// declaring grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence(Vec<f64>);

impl ControlSequence {
    pub fn from_values(values: Vec<f64>, grid: &ControlGrid) -> Result<Self> {
        for &v in &values {
            if !grid.contains(v) {
                return Err(Error::ControlNotInGrid { value: v });
            }
        }
        Ok(Self(values))
    }

    pub fn constant(value: f64, steps: usize) -> Self {
        Self(vec![value; steps])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn value(&self, step: usize) -> f64 {
        self.0[step]
    }
}

/// A Monte Carlo ensemble of sample paths together with the noise
/// increments that generated it.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: Grid,
    pub dim: usize,
    pub noise_dim: usize,
    /// Grid index at which simulation started (the paths agree with the
    /// initial segment up to here).
    pub start_index: usize,
    /// Grid index at which the sample paths end (the horizon unless the
    /// bundle was simulated over a sub-window).
    pub end_index: usize,
    pub seed: u64,
    pub paths: Vec<Path>,
    /// Per sample: `steps * noise_dim` standard normals, step-major.
    pub(crate) noise: Vec<Vec<f64>>,
}

impl PathBundle {
    pub fn n_samples(&self) -> usize {
        self.paths.len()
    }

    pub fn steps(&self) -> usize {
        self.end_index - self.start_index
    }

    /// Normals driving step `k` (absolute grid index) of sample `s`.
    pub fn noise_at(&self, s: usize, k: usize) -> &[f64] {
        let local = k - self.start_index;
        &self.noise[s][local * self.noise_dim..(local + 1) * self.noise_dim]
    }

    /// Binary dump: `dim, steps, count, seed` header plus window metadata,
    /// then row-major values (sample-major, grid-point-major,
    /// component-minor), little endian.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n_steps() as u32).to_le_bytes())?;
        w.write_all(&(self.n_samples() as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.grid.t0().to_le_bytes())?;
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        w.write_all(&(self.start_index as u32).to_le_bytes())?;
        w.write_all(&(self.end_index as u32).to_le_bytes())?;
        w.write_all(&(self.noise_dim as u32).to_le_bytes())?;
        for p in &self.paths {
            for x in p.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(mut r: R) -> Result<Self> {
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let dim = read_u32(&mut r)? as usize;
        let steps = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let t0 = f64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let t_end = f64::from_le_bytes(u64buf);
        let start_index = read_u32(&mut r)? as usize;
        let end_index = read_u32(&mut r)? as usize;
        let noise_dim = read_u32(&mut r)? as usize;
        let grid = Grid::new(t0, t_end, steps)?;
        let mut paths = Vec::with_capacity(count);
        let per_path = (end_index + 1) * dim;
        for _ in 0..count {
            let mut values = Vec::with_capacity(per_path);
            for _ in 0..per_path {
                r.read_exact(&mut u64buf)?;
                values.push(f64::from_le_bytes(u64buf));
            }
            paths.push(Path::new(grid, dim, values)?);
        }
        Ok(Self {
            grid,
            dim,
            noise_dim,
            start_index,
            end_index,
            seed,
            paths,
            noise: vec![Vec::new(); count],
        })
    }

    /// Small-bundle CSV: columns `sample,time,x1..xd`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["sample".to_string(), "time".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for (s, p) in self.paths.iter().enumerate() {
            for i in 0..=p.end_index() {
                let mut rec = vec![format!("{s}"), format!("{}", self.grid.time(i))];
                rec.extend(p.value(i).iter().map(|v| format!("{v}")));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Euler–Maruyama simulation of the controlled state equation from the
/// initial segment through the horizon.
pub fn simulate(
    coeffs: &SdeCoefficients,
    initial: &Path,
    u: &ControlSequence,
    v: &ControlSequence,
    n_samples: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_until(
        coeffs,
        initial,
        u,
        v,
        n_samples,
        seed,
        initial.grid().n_steps(),
    )
}

/// Simulation stopped at grid index `end_index` (used by the backward
/// semigroup, which only needs the window `[t, t + delta]`).
pub fn simulate_until(
    coeffs: &SdeCoefficients,
    initial: &Path,
    u: &ControlSequence,
    v: &ControlSequence,
    n_samples: usize,
    seed: u64,
    end_index: usize,
) -> Result<PathBundle> {
    if initial.dim() != coeffs.dim() {
        return Err(Error::DimensionMismatch {
            expected: coeffs.dim(),
            got: initial.dim(),
        });
    }
    if initial.at_horizon() {
        return Err(Error::Precondition(
            "initial segment already spans the horizon".into(),
        ));
    }
    let start = initial.end_index();
    if end_index <= start || end_index > initial.grid().n_steps() {
        return Err(Error::Precondition(format!(
            "simulation window ({start}, {end_index}] is empty or beyond the horizon"
        )));
    }
    let steps = end_index - start;
    for (name, seq) in [("u", u), ("v", v)] {
        if seq.len() != steps {
            return Err(Error::LengthMismatch {
                what: if name == "u" {
                    "u controls"
                } else {
                    "v controls"
                },
                expected: steps,
                got: seq.len(),
            });
        }
    }
    let results: Vec<Result<(Path, Vec<f64>)>> = (0..n_samples)
        .into_par_iter()
        .map(|s| simulate_one(coeffs, initial, u, v, seed, s as u64, end_index))
        .collect();
    let mut paths = Vec::with_capacity(n_samples);
    let mut noise = Vec::with_capacity(n_samples);
    for r in results {
        let (p, xi) = r?;
        paths.push(p);
        noise.push(xi);
    }
    Ok(PathBundle {
        grid: *initial.grid(),
        dim: coeffs.dim(),
        noise_dim: coeffs.noise_dim(),
        start_index: start,
        end_index,
        seed,
        paths,
        noise,
    })
}

fn simulate_one(
    coeffs: &SdeCoefficients,
    initial: &Path,
    u: &ControlSequence,
    v: &ControlSequence,
    seed: u64,
    sample: u64,
    end_index: usize,
) -> Result<(Path, Vec<f64>)> {
    let mut stream = rng::sample_stream(seed, sample);
    let d = coeffs.dim();
    let n = coeffs.noise_dim();
    let dl = initial.grid().step();
    let sq = dl.sqrt();
    let start = initial.end_index();
    let steps = end_index - start;
    let mut path = initial.clone();
    let mut xis = Vec::with_capacity(steps * n);
    let mut next = vec![0.0f64; d];
    for local in 0..steps {
        let k = start + local;
        let xi_off = xis.len();
        for _ in 0..n {
            xis.push(rng::standard_normal(&mut stream));
        }
        let uk = u.value(local);
        let vk = v.value(local);
        let b = coeffs.drift(&path, uk, vk);
        if b.len() != d || b.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "drift",
                step: k,
            });
        }
        let sigma = coeffs.diffusion(&path, uk, vk);
        if sigma.nrows() != d || sigma.ncols() != n || sigma.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "diffusion",
                step: k,
            });
        }
        let x = path.terminal();
        for i in 0..d {
            let mut acc = x[i] + b[i] * dl;
            for j in 0..n {
                acc += sigma[(i, j)] * sq * xis[xi_off + j];
            }
            next[i] = acc;
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "state",
                step: k + 1,
            });
        }
        path.push_point(&next);
    }
    Ok((path, xis))
}

/// One scale of the coupled stability probe.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub scale: f64,
    /// `E sup |X - X'|^p / scale^p` under common noise.
    pub ratio: f64,
}

/// Empirical versions of the moment estimates for the state equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: u32,
    pub n_samples: usize,
    /// `E ||X_T||_0^p`.
    pub terminal_moment: f64,
    /// Fitted constant `E ||X_T||_0^p / (1 + ||gamma||_0^p)`.
    pub growth_constant: f64,
    /// `(r - t, E ||X_r - gamma_t||_0^p)` along a dyadic schedule.
    pub increment_points: Vec<(f64, f64)>,
    /// Log-log slope of the increment moments.
    pub increment_slope: f64,
    pub slope_target: f64,
    pub slope_within: bool,
    pub stability: Vec<StabilityPoint>,
    /// Max/min of the stability ratios across scales.
    pub stability_spread: f64,
}

/// Probe the moment estimates at frozen controls `u = v = 0`.
pub fn moment_check(
    coeffs: &SdeCoefficients,
    initial: &Path,
    p: u32,
    n_samples: usize,
    seed: u64,
) -> Result<MomentReport> {
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::Precondition(
            "moment order must be a positive even integer".into(),
        ));
    }
    let steps = initial.grid().n_steps() - initial.end_index();
    let u = ControlSequence::constant(0.0, steps);
    let v = ControlSequence::constant(0.0, steps);
    let bundle = simulate(coeffs, initial, &u, &v, n_samples, seed)?;
    let start = initial.end_index();
    let n_steps = initial.grid().n_steps();
    let pe = p as i32;

    let terminal_moment = mean(bundle.paths.iter().map(|x| x.sup_norm().powi(pe)));
    let growth_constant = terminal_moment / (1.0 + initial.sup_norm().powi(pe));

    // Dyadic schedule of intermediate times r.
    let mut indices: Vec<usize> = (0..6)
        .map(|j| start + ((n_steps - start) as f64 * 0.5f64.powi(j)).round() as usize)
        .filter(|&i| i > start)
        .collect();
    indices.sort_unstable();
    indices.dedup();
    let base = initial.terminal();
    let increment_points: Vec<(f64, f64)> = indices
        .iter()
        .map(|&idx| {
            let gap = initial.grid().time(idx) - initial.end_time();
            let moment = mean(bundle.paths.iter().map(|x| {
                let mut sup = 0.0f64;
                for i in (start + 1)..=idx {
                    let v = x.value(i);
                    let dist = v
                        .iter()
                        .zip(base)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    if dist > sup {
                        sup = dist;
                    }
                }
                sup.powi(pe)
            }));
            (gap, moment)
        })
        .collect();
    let increment_slope = loglog_slope(&increment_points);
    let slope_target = p as f64 / 2.0;
    let slope_within =
        increment_slope >= 0.8 * slope_target && increment_slope <= 1.2 * slope_target;

    // Coupled stability across shrinking perturbations of the initial
    // segment (same seed, hence identical noise).
    let mut stability = Vec::new();
    for &scale in &[0.1, 0.01, 0.001] {
        let mut delta = vec![0.0; initial.dim()];
        delta[0] = scale;
        let shifted = initial.bump_terminal(&delta)?;
        let coupled = simulate(coeffs, &shifted, &u, &v, n_samples, seed)?;
        let moment = mean(bundle.paths.iter().zip(&coupled.paths).map(|(a, b)| {
            let mut sup = 0.0f64;
            for i in start..=n_steps {
                let dist = a
                    .value(i)
                    .iter()
                    .zip(b.value(i))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                if dist > sup {
                    sup = dist;
                }
            }
            sup.powi(pe)
        }));
        stability.push(StabilityPoint {
            scale,
            ratio: moment / scale.powi(pe),
        });
    }
    let ratios: Vec<f64> = stability.iter().map(|s| s.ratio).collect();
    let stability_spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min);

    Ok(MomentReport {
        p,
        n_samples,
        terminal_moment,
        growth_constant,
        increment_points,
        increment_slope,
        slope_target,
        slope_within,
        stability,
        stability_spread,
    })
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in it {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
