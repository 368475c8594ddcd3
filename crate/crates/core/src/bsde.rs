//! Least-squares Monte Carlo solver for the backward equation and the
//! backward semigroup it generates.
//!
//! Backward recursion on a simulated bundle: the terminal layer is the
//! payoff; at each earlier step the martingale-increment regression
//! estimates `Z` (documented O(step) bias, no finite differencing of `Y`),
//! and `Y` regresses `Y_{next} + q * step` with one Picard refinement of the
//! implicit `q(Y)` dependence. The scheme is explicit in `Y`, so the driver
//! Lipschitz hint times the step must stay below one half.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_until, ControlSequence, PathBundle, SdeCoefficients};
use crate::error::{Error, Result};
use crate::path_space::Path;
use crate::regression::{fit_least_squares, FeatureState, RegressionBasis};

type DriverFn = dyn Fn(&Path, f64, &[f64], f64, f64) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&Path) -> f64 + Send + Sync;

/// Driver `q(path, y, z, u, v)` and terminal payoff of the backward
/// equation, with the declared Lipschitz hint used by the step-size check.
pub struct BsdeDriver {
    q: Box<DriverFn>,
    phi: Box<TerminalFn>,
    lipschitz_hint: f64,
}

impl BsdeDriver {
    pub fn new(
        q: impl Fn(&Path, f64, &[f64], f64, f64) -> f64 + Send + Sync + 'static,
        phi: impl Fn(&Path) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            q: Box::new(q),
            phi: Box::new(phi),
            lipschitz_hint: 1.0,
        }
    }

    pub fn with_lipschitz_hint(mut self, l: f64) -> Self {
        self.lipschitz_hint = l;
        self
    }

    pub fn lipschitz_hint(&self) -> f64 {
        self.lipschitz_hint
    }

    pub fn q(&self, p: &Path, y: f64, z: &[f64], u: f64, v: f64) -> f64 {
        (self.q)(p, y, z, u, v)
    }

    pub fn phi(&self, p: &Path) -> f64 {
        (self.phi)(p)
    }
}

/// Regression surfaces and the initial-value estimate of one backward solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BsdeSolution {
    pub y0: f64,
    pub stderr: f64,
    pub start_index: usize,
    pub end_index: usize,
    /// Per step (ascending grid index, `start..end`): Y-surface coefficients.
    pub y_surfaces: Vec<DVector<f64>>,
    /// Per step, per noise component: Z-surface coefficients.
    pub z_surfaces: Vec<Vec<DVector<f64>>>,
    pub basis: RegressionBasis,
    /// Set when any regression dropped near-null directions.
    pub reduced_basis: bool,
}

/// Backward solve over the bundle's window with the driver's own terminal
/// payoff. The bundle must have been simulated under the same control
/// sequences (documented caller contract; the bundle does not retain its
/// controls).
pub fn solve(
    driver: &BsdeDriver,
    bundle: &PathBundle,
    u: &ControlSequence,
    v: &ControlSequence,
    basis: &RegressionBasis,
) -> Result<BsdeSolution> {
    solve_with_terminal(driver, bundle, u, v, basis, &|p| driver.phi(p))
}

/// Backward solve with an arbitrary terminal layer on the bundle's window.
pub fn solve_with_terminal(
    driver: &BsdeDriver,
    bundle: &PathBundle,
    u: &ControlSequence,
    v: &ControlSequence,
    basis: &RegressionBasis,
    terminal: &(dyn Fn(&Path) -> f64 + Sync),
) -> Result<BsdeSolution> {
    let start = bundle.start_index;
    let end = bundle.end_index;
    let steps = end - start;
    let n_samples = bundle.n_samples();
    if n_samples == 0 || steps == 0 {
        return Err(Error::Precondition("empty bundle".into()));
    }
    for (what, seq) in [("u controls", u), ("v controls", v)] {
        if seq.len() != steps {
            return Err(Error::LengthMismatch {
                what,
                expected: steps,
                got: seq.len(),
            });
        }
    }
    let dl = bundle.grid.step();
    if driver.lipschitz_hint() * dl >= 0.5 {
        return Err(Error::StepTooLarge {
            l: driver.lipschitz_hint(),
            dt: dl,
        });
    }
    let k_features = basis.feature_count(bundle.dim);
    if k_features * 10 > n_samples {
        return Err(Error::Regression(format!(
            "{k_features} features need at least {} samples, got {n_samples}",
            k_features * 10
        )));
    }

    // Feature rows at every regression time, forward pass.
    let mut rows: Vec<Vec<DVector<f64>>> = Vec::with_capacity(steps);
    let mut states: Vec<FeatureState> = bundle
        .paths
        .iter()
        .map(|p| {
            let mut st = FeatureState::new(bundle.dim);
            for i in 0..start {
                st.push(p.value(i));
            }
            st
        })
        .collect();
    for k in start..end {
        let row_k: Vec<DVector<f64>> = bundle
            .paths
            .iter()
            .zip(&states)
            .map(|(p, st)| basis.features(st, p.value(k)))
            .collect();
        rows.push(row_k);
        for (p, st) in bundle.paths.iter().zip(states.iter_mut()) {
            st.push(p.value(k));
        }
    }

    // Terminal layer.
    let mut phi: Vec<f64> = Vec::with_capacity(n_samples);
    for p in &bundle.paths {
        let val = terminal(&p.prefix(end));
        if val.is_nan() {
            return Err(Error::NonFinite {
                what: "terminal payoff",
                step: end,
            });
        }
        phi.push(val);
    }

    // Full-sample estimate with surfaces, then disjoint batch re-runs for
    // the error bar (independent replicates see the regression-chain noise
    // that the smoothed full-sample targets hide).
    let all: Vec<usize> = (0..n_samples).collect();
    let (y0, surfaces) = bsde_pass(driver, bundle, u, v, basis, &rows, &phi, &all, true)?;
    let (y_surfaces, z_surfaces, reduced) = surfaces.expect("surfaces requested");
    let n_batches = (n_samples / (10 * k_features)).clamp(1, 8);
    let stderr = if n_batches >= 2 {
        let mut batch_values = Vec::with_capacity(n_batches);
        for b in 0..n_batches {
            let ids: Vec<usize> = (b..n_samples).step_by(n_batches).collect();
            let (yb, _) = bsde_pass(driver, bundle, u, v, basis, &rows, &phi, &ids, false)?;
            batch_values.push(yb);
        }
        let mean = batch_values.iter().sum::<f64>() / n_batches as f64;
        let var = batch_values
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (n_batches - 1) as f64;
        (var / n_batches as f64).sqrt()
    } else {
        0.0
    };

    Ok(BsdeSolution {
        y0,
        stderr,
        start_index: start,
        end_index: end,
        y_surfaces,
        z_surfaces,
        basis: basis.clone(),
        reduced_basis: reduced,
    })
}

type SurfaceSet = (Vec<DVector<f64>>, Vec<Vec<DVector<f64>>>, bool);

/// One backward recursion restricted to the sample subset `ids`.
#[allow(clippy::too_many_arguments)]
fn bsde_pass(
    driver: &BsdeDriver,
    bundle: &PathBundle,
    u: &ControlSequence,
    v: &ControlSequence,
    basis: &RegressionBasis,
    rows: &[Vec<DVector<f64>>],
    phi: &[f64],
    ids: &[usize],
    want_surfaces: bool,
) -> Result<(f64, Option<SurfaceSet>)> {
    let start = bundle.start_index;
    let end = bundle.end_index;
    let steps = end - start;
    let dl = bundle.grid.step();
    let sqdl = dl.sqrt();
    let m = ids.len();

    let mut y: Vec<f64> = ids.iter().map(|&s| phi[s]).collect();
    let mut y_surfaces = vec![DVector::zeros(0); steps];
    let mut z_surfaces = vec![Vec::new(); steps];
    let mut reduced = false;
    let mut y0 = f64::NAN;

    for k in (start..end).rev() {
        let local = k - start;
        let rows_k: Vec<&DVector<f64>> = ids.iter().map(|&s| &rows[local][s]).collect();
        let uk = u.value(local);
        let vk = v.value(local);

        // Z via the martingale-increment regression.
        let mut z_fits = Vec::with_capacity(bundle.noise_dim);
        for j in 0..bundle.noise_dim {
            let targets: Vec<f64> = ids
                .iter()
                .zip(&y)
                .map(|(&s, &ys)| ys * bundle.noise_at(s, k)[j] / sqdl)
                .collect();
            let fit = fit_least_squares(&rows_k, &targets, basis.ridge)?;
            reduced |= fit.reduced;
            z_fits.push(fit);
        }
        let z_pred: Vec<Vec<f64>> = rows_k
            .iter()
            .map(|row| z_fits.iter().map(|f| f.predict(row)).collect())
            .collect();

        // Explicit step with one Picard refinement of q's Y argument.
        let mut targets: Vec<f64> = Vec::with_capacity(m);
        for (i, &s) in ids.iter().enumerate() {
            let q0 = driver.q(&bundle.paths[s].prefix(k), y[i], &z_pred[i], uk, vk);
            if q0.is_nan() {
                return Err(Error::NonFinite {
                    what: "driver",
                    step: k,
                });
            }
            targets.push(y[i] + q0 * dl);
        }
        let fit0 = fit_least_squares(&rows_k, &targets, basis.ridge)?;
        reduced |= fit0.reduced;
        for (i, &s) in ids.iter().enumerate() {
            let y_hat = fit0.predict(rows_k[i]);
            let q1 = driver.q(&bundle.paths[s].prefix(k), y_hat, &z_pred[i], uk, vk);
            if q1.is_nan() {
                return Err(Error::NonFinite {
                    what: "driver",
                    step: k,
                });
            }
            targets[i] = y[i] + q1 * dl;
        }
        let fit1 = fit_least_squares(&rows_k, &targets, basis.ridge)?;
        reduced |= fit1.reduced;

        if k == start {
            y0 = targets.iter().sum::<f64>() / m as f64;
        }
        for (i, row) in rows_k.iter().enumerate() {
            y[i] = fit1.predict(row);
        }
        if want_surfaces {
            y_surfaces[local] = fit1.coeffs;
            z_surfaces[local] = z_fits.into_iter().map(|f| f.coeffs).collect();
        }
    }

    Ok((
        y0,
        if want_surfaces {
            Some((y_surfaces, z_surfaces, reduced))
        } else {
            None
        },
    ))
}

/// Backward semigroup over `[t, t + delta]`: simulate the state to
/// `t + delta` and solve the backward equation on that window with terminal
/// data `eta` applied to the simulated segment.
#[allow(clippy::too_many_arguments)]
pub fn backward_semigroup(
    driver: &BsdeDriver,
    coeffs: &SdeCoefficients,
    initial: &Path,
    u: &ControlSequence,
    v: &ControlSequence,
    delta: f64,
    eta: &(dyn Fn(&Path) -> f64 + Sync),
    basis: &RegressionBasis,
    n_samples: usize,
    seed: u64,
) -> Result<BsdeSolution> {
    let grid = *initial.grid();
    let end = grid.index_of(initial.end_time() + delta)?;
    if end > grid.n_steps() {
        return Err(Error::Precondition("delta reaches past the horizon".into()));
    }
    let bundle = simulate_until(coeffs, initial, u, v, n_samples, seed, end)?;
    solve_with_terminal(driver, &bundle, u, v, basis, eta)
}
