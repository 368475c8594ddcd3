//! Hamiltonians, Isaacs checking and DPP-based game values.
//!
//! Strategies are discretized step-locally: at each time step the responding
//! player observes the opponent's current grid action before choosing, the
//! coarsest faithful discretization of nonanticipativity. The lower value
//! applies `sup_u inf_v` of the one-step backward semigroup at every step,
//! the upper value `inf_v sup_u`. Ties always break toward the lowest grid
//! index, so selections are reproducible.
//!
//! Two evaluation engines share the one-step operator:
//!
//! - noiseless dynamics (`noise_dim == 0`) run an exact finite-tree dynamic
//!   program (branching `|U||V|` per step, guarded by a node budget), which
//!   reproduces exhaustive enumeration bit for bit;
//! - noisy dynamics run a regression Monte Carlo backward induction on an
//!   exploration bundle (uniform random grid controls), with per-pair
//!   one-step-ahead conditional expectations fitted before the minimax is
//!   taken.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::BsdeDriver;
use crate::dynamics::{ControlGrid, PathBundle, SdeCoefficients};
use crate::error::{Error, Result};
use crate::path_space::{Grid, Path};
use crate::regression::{fit_least_squares, FeatureState, RegressionBasis};
use crate::rng;

/// Full description of one zero-sum game: state dynamics, cost driver,
/// terminal payoff and the two finite control grids.
pub struct GameSpec {
    pub coeffs: SdeCoefficients,
    pub driver: BsdeDriver,
    pub u_grid: ControlGrid,
    pub v_grid: ControlGrid,
    pub grid: Grid,
}

impl GameSpec {
    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    pub fn horizon(&self) -> f64 {
        self.grid.t_end()
    }
}

/// `H(p, r, grad, hess, u, v) = (grad, b) + 1/2 tr(hess sigma sigma^T)
/// + q(p, r, sigma^T grad, u, v)`.
pub fn hamiltonian(
    spec: &GameSpec,
    p: &Path,
    r: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    u: f64,
    v: f64,
) -> f64 {
    let b = spec.coeffs.drift(p, u, v);
    let sigma = spec.coeffs.diffusion(p, u, v);
    let d = spec.dim();
    let n = sigma.ncols();
    let mut acc = grad.dot(&b);
    // 1/2 tr(hess sigma sigma^T)
    let mut quad = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut ss = 0.0;
            for l in 0..n {
                ss += sigma[(i, l)] * sigma[(j, l)];
            }
            quad += hess[(i, j)] * ss;
        }
    }
    acc += 0.5 * quad;
    // z = sigma^T grad
    let mut z = vec![0.0; n];
    for (l, zl) in z.iter_mut().enumerate() {
        for i in 0..d {
            *zl += sigma[(i, l)] * grad[i];
        }
    }
    acc + spec.driver.q(p, r, &z, u, v)
}

/// `H^- = sup_u inf_v H`, exact enumeration over the grids.
pub fn hamiltonian_minus(
    spec: &GameSpec,
    p: &Path,
    r: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &u in spec.u_grid.values() {
        let mut inner = f64::INFINITY;
        for &v in spec.v_grid.values() {
            let h = hamiltonian(spec, p, r, grad, hess, u, v);
            if h < inner {
                inner = h;
            }
        }
        if inner > best {
            best = inner;
        }
    }
    best
}

/// `H^+ = inf_v sup_u H`, exact enumeration over the grids.
pub fn hamiltonian_plus(
    spec: &GameSpec,
    p: &Path,
    r: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> f64 {
    let mut best = f64::INFINITY;
    for &v in spec.v_grid.values() {
        let mut inner = f64::NEG_INFINITY;
        for &u in spec.u_grid.values() {
            let h = hamiltonian(spec, p, r, grad, hess, u, v);
            if h > inner {
                inner = h;
            }
        }
        if inner < best {
            best = inner;
        }
    }
    best
}

/// The minimizing response `v` for each `u` (discrete measurable selection).
/// Deterministic under the lowest-index tie break.
pub fn response_selection(
    spec: &GameSpec,
    p: &Path,
    r: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> Vec<usize> {
    spec.u_grid
        .values()
        .iter()
        .map(|&u| {
            let mut best = 0usize;
            let mut best_val = f64::INFINITY;
            for (vi, &v) in spec.v_grid.values().iter().enumerate() {
                let h = hamiltonian(spec, p, r, grad, hess, u, v);
                if h < best_val {
                    best_val = h;
                    best = vi;
                }
            }
            best
        })
        .collect()
}

/// One sampled argument tuple for the Hamiltonian gap sweep.
pub struct HamiltonianPoint {
    pub path: Path,
    pub r: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsaacsReport {
    pub n_points: usize,
    /// `max (H^+ - H^-)` over the samples; nonnegative by weak duality.
    pub max_gap: f64,
    pub tolerance: f64,
    pub holds: bool,
}

/// Numeric Isaacs check: the condition "holds numerically" iff the largest
/// sampled gap stays below the tolerance.
pub fn isaacs_check(spec: &GameSpec, points: &[HamiltonianPoint], tolerance: f64) -> IsaacsReport {
    let mut max_gap = 0.0f64;
    for pt in points {
        let lo = hamiltonian_minus(spec, &pt.path, pt.r, &pt.grad, &pt.hess);
        let hi = hamiltonian_plus(spec, &pt.path, pt.r, &pt.grad, &pt.hess);
        let gap = hi - lo;
        if gap > max_gap {
            max_gap = gap;
        }
    }
    IsaacsReport {
        n_points: points.len(),
        max_gap,
        tolerance,
        holds: max_gap <= tolerance,
    }
}

/// Which optimization order the value uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    /// `sup_u inf_v` per step.
    Lower,
    /// `inf_v sup_u` per step.
    Upper,
}

/// Per-step regression surfaces approximating the value functional.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueField {
    pub kind: ValueKind,
    pub start_index: usize,
    pub basis: RegressionBasis,
    pub dim: usize,
    /// Surfaces at every grid step `start..=n`, terminal included.
    pub surfaces: Vec<DVector<f64>>,
    pub stderr: f64,
}

impl ValueField {
    /// Evaluate the fitted surface at the step of `p`'s end time.
    pub fn eval(&self, p: &Path) -> Result<f64> {
        let local = p
            .end_index()
            .checked_sub(self.start_index)
            .ok_or_else(|| Error::Precondition("path ends before the field's window".into()))?;
        let coeffs = self
            .surfaces
            .get(local)
            .ok_or_else(|| Error::Precondition("path ends after the field's window".into()))?;
        Ok(coeffs.dot(&self.basis.features_of_path(p)))
    }
}

#[derive(Debug, Clone)]
pub struct GameValue {
    pub value: f64,
    pub stderr: f64,
    pub field: ValueField,
    /// Whether any regression dropped near-null directions.
    pub reduced_basis: bool,
}

/// Tuning knobs for the value computation.
pub struct ValueOptions {
    pub basis: RegressionBasis,
    /// Node budget for the exact tree used when the dynamics are noiseless.
    pub tree_budget: usize,
    /// Euler substeps for the scalar `q` integration inside one DPP step.
    pub q_sub_steps: usize,
}

impl Default for ValueOptions {
    fn default() -> Self {
        Self {
            basis: RegressionBasis::default_path_basis(),
            tree_budget: 1 << 18,
            q_sub_steps: 1,
        }
    }
}

/// DPP-based value of the game started from `initial`.
pub fn value(
    spec: &GameSpec,
    initial: &Path,
    kind: ValueKind,
    n_samples: usize,
    seed: u64,
    opts: &ValueOptions,
) -> Result<GameValue> {
    if initial.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: initial.dim(),
        });
    }
    if spec.u_grid.is_empty() || spec.v_grid.is_empty() {
        return Err(Error::Precondition("control grids must be nonempty".into()));
    }
    if spec.coeffs.noise_dim() == 0 {
        exact_tree_value(spec, initial, kind, spec.grid.n_steps(), None, opts)
    } else {
        regression_value(
            spec,
            initial,
            kind,
            spec.grid.n_steps(),
            None,
            n_samples,
            seed,
            opts,
        )
    }
}

// --- exact engine for noiseless dynamics ----------------------------------

#[allow(clippy::too_many_arguments)]
fn exact_tree_value(
    spec: &GameSpec,
    initial: &Path,
    kind: ValueKind,
    end_index: usize,
    terminal: Option<&(dyn Fn(&Path) -> f64 + Sync)>,
    opts: &ValueOptions,
) -> Result<GameValue> {
    let start = initial.end_index();
    let steps = end_index - start;
    let pairs = spec.u_grid.len() * spec.v_grid.len();
    let mut nodes = 1usize;
    for _ in 0..steps {
        nodes = nodes.saturating_mul(pairs);
        if nodes > opts.tree_budget {
            return Err(Error::TreeTooLarge {
                nodes,
                budget: opts.tree_budget,
            });
        }
    }
    // Per-depth clouds of (features, value) for the reported surfaces.
    let mut clouds: Vec<(Vec<DVector<f64>>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); steps + 1];
    let root = recurse_tree(
        spec,
        initial.clone(),
        kind,
        end_index,
        terminal,
        opts,
        &mut clouds,
    )?;
    let mut surfaces = Vec::with_capacity(steps + 1);
    for (rows, targets) in &clouds {
        surfaces.push(fit_least_squares(rows, targets, opts.basis.ridge)?.coeffs);
    }
    Ok(GameValue {
        value: root,
        stderr: 0.0,
        field: ValueField {
            kind,
            start_index: start,
            basis: opts.basis.clone(),
            dim: spec.dim(),
            surfaces,
            stderr: 0.0,
        },
        reduced_basis: true, // tiny node clouds always reduce
    })
}

fn recurse_tree(
    spec: &GameSpec,
    path: Path,
    kind: ValueKind,
    end_index: usize,
    terminal: Option<&(dyn Fn(&Path) -> f64 + Sync)>,
    opts: &ValueOptions,
    clouds: &mut [(Vec<DVector<f64>>, Vec<f64>)],
) -> Result<f64> {
    let k = path.end_index();
    if k == end_index {
        let val = match terminal {
            Some(eta) => eta(&path),
            None => spec.driver.phi(&path),
        };
        if val.is_nan() {
            return Err(Error::NonFinite {
                what: "terminal payoff",
                step: k,
            });
        }
        let local = clouds.len() - 1;
        clouds[local].0.push(opts.basis.features_of_path(&path));
        clouds[local].1.push(val);
        return Ok(val);
    }
    let dl = spec.grid.step();
    let nu = spec.u_grid.len();
    let nv = spec.v_grid.len();
    let mut table = vec![0.0f64; nu * nv];
    for (ui, &u) in spec.u_grid.values().iter().enumerate() {
        for (vi, &v) in spec.v_grid.values().iter().enumerate() {
            let b = spec.coeffs.drift(&path, u, v);
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: "drift",
                    step: k,
                });
            }
            let mut next = path.terminal().to_vec();
            for (i, n) in next.iter_mut().enumerate() {
                *n += b[i] * dl;
            }
            let mut child = path.clone();
            child.push_point(&next);
            let cont = recurse_tree(spec, child, kind, end_index, terminal, opts, clouds)?;
            let y = integrate_q(spec, &path, cont, &[], u, v, dl, opts.q_sub_steps)?;
            table[ui * nv + vi] = y;
        }
    }
    let val = minimax(&table, nu, nv, kind);
    let local = clouds.len() - 1 - (end_index - k);
    clouds[local].0.push(opts.basis.features_of_path(&path));
    clouds[local].1.push(val);
    Ok(val)
}

/// Explicit Euler integration of `dy = q(X, y, z, u, v) ds` over one DPP
/// step, optionally refined into substeps.
#[allow(clippy::too_many_arguments)]
fn integrate_q(
    spec: &GameSpec,
    prefix: &Path,
    y_end: f64,
    z: &[f64],
    u: f64,
    v: f64,
    dl: f64,
    sub_steps: usize,
) -> Result<f64> {
    let n = sub_steps.max(1);
    let h = dl / n as f64;
    let mut y = y_end;
    for _ in 0..n {
        let q = spec.driver.q(prefix, y, z, u, v);
        if q.is_nan() {
            return Err(Error::NonFinite {
                what: "driver",
                step: prefix.end_index(),
            });
        }
        y += q * h;
    }
    Ok(y)
}

fn minimax(table: &[f64], nu: usize, nv: usize, kind: ValueKind) -> f64 {
    match kind {
        ValueKind::Lower => {
            let mut outer = f64::NEG_INFINITY;
            for ui in 0..nu {
                let mut inner = f64::INFINITY;
                for vi in 0..nv {
                    let x = table[ui * nv + vi];
                    if x < inner {
                        inner = x;
                    }
                }
                if inner > outer {
                    outer = inner;
                }
            }
            outer
        }
        ValueKind::Upper => {
            let mut outer = f64::INFINITY;
            for vi in 0..nv {
                let mut inner = f64::NEG_INFINITY;
                for ui in 0..nu {
                    let x = table[ui * nv + vi];
                    if x > inner {
                        inner = x;
                    }
                }
                if inner < outer {
                    outer = inner;
                }
            }
            outer
        }
    }
}

// --- regression Monte Carlo engine ----------------------------------------

/// Simulate the exploration bundle: controls drawn uniformly from the grids
/// at every step so the regression sees a diverse cloud of states (draw
/// order per step: u, v, then the noise block).
fn explore(
    spec: &GameSpec,
    initial: &Path,
    n_samples: usize,
    seed: u64,
    end_index: usize,
) -> Result<PathBundle> {
    let start = initial.end_index();
    let steps = end_index - start;
    let results: Vec<Result<(Path, Vec<f64>)>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            use rand::Rng;
            let mut stream = rng::sample_stream(seed, s as u64);
            let d = spec.dim();
            let n = spec.coeffs.noise_dim();
            let dl = spec.grid.step();
            let sq = dl.sqrt();
            let mut path = initial.clone();
            let mut xis = Vec::with_capacity(steps * n);
            let mut next = vec![0.0f64; d];
            for local in 0..steps {
                let k = start + local;
                let ui = stream.random_range(0..spec.u_grid.len());
                let vi = stream.random_range(0..spec.v_grid.len());
                let xi_off = xis.len();
                for _ in 0..n {
                    xis.push(rng::standard_normal(&mut stream));
                }
                let u = spec.u_grid.values()[ui];
                let v = spec.v_grid.values()[vi];
                let b = spec.coeffs.drift(&path, u, v);
                if b.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "drift",
                        step: k,
                    });
                }
                let sigma = spec.coeffs.diffusion(&path, u, v);
                if sigma.iter().any(|x| !x.is_finite()) {
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
        })
        .collect();
    let mut paths = Vec::with_capacity(n_samples);
    let mut noise = Vec::with_capacity(n_samples);
    for r in results {
        let (p, xi) = r?;
        paths.push(p);
        noise.push(xi);
    }
    Ok(PathBundle {
        grid: spec.grid,
        dim: spec.dim(),
        noise_dim: spec.coeffs.noise_dim(),
        start_index: start,
        end_index,
        seed,
        paths,
        noise,
    })
}

#[allow(clippy::too_many_arguments)]
fn regression_value(
    spec: &GameSpec,
    initial: &Path,
    kind: ValueKind,
    end_index: usize,
    terminal: Option<&(dyn Fn(&Path) -> f64 + Sync)>,
    n_samples: usize,
    seed: u64,
    opts: &ValueOptions,
) -> Result<GameValue> {
    let start = initial.end_index();
    let steps = end_index - start;
    if steps == 0 {
        return Err(Error::Precondition("empty game window".into()));
    }
    let basis = &opts.basis;
    let k_features = basis.feature_count(spec.dim());
    if k_features * 10 > n_samples {
        return Err(Error::Regression(format!(
            "{k_features} features need at least {} samples, got {n_samples}",
            k_features * 10
        )));
    }
    let dl = spec.grid.step();
    if spec.driver.lipschitz_hint() * dl >= 0.5 {
        return Err(Error::StepTooLarge {
            l: spec.driver.lipschitz_hint(),
            dt: dl,
        });
    }
    let bundle = explore(spec, initial, n_samples, seed, end_index)?;

    // History summaries at every step: states[local][s] covers values
    // 0..start+local-1 (exclusive of the point at that step).
    let d = spec.dim();
    let mut state_max = vec![vec![0.0f64; n_samples]; steps + 1];
    let mut state_sum = vec![vec![0.0f64; n_samples * d]; steps + 1];
    {
        let mut st: Vec<FeatureState> = bundle
            .paths
            .iter()
            .map(|p| {
                let mut s = FeatureState::new(d);
                for i in 0..start {
                    s.push(p.value(i));
                }
                s
            })
            .collect();
        for local in 0..=steps {
            for (s, fs) in st.iter().enumerate() {
                state_max[local][s] = fs.max_norm;
                state_sum[local][s * d..(s + 1) * d].copy_from_slice(&fs.sum);
            }
            if local < steps {
                for (p, fs) in bundle.paths.iter().zip(st.iter_mut()) {
                    fs.push(p.value(start + local));
                }
            }
        }
    }

    // Terminal layer.
    let mut v_terminal: Vec<f64> = Vec::with_capacity(n_samples);
    for p in &bundle.paths {
        let val = match terminal {
            Some(eta) => eta(&p.prefix(end_index)),
            None => spec.driver.phi(&p.prefix(end_index)),
        };
        if val.is_nan() {
            return Err(Error::NonFinite {
                what: "terminal payoff",
                step: end_index,
            });
        }
        v_terminal.push(val);
    }

    let ctx = BackwardCtx {
        spec,
        kind,
        opts,
        bundle: &bundle,
        state_max: &state_max,
        state_sum: &state_sum,
        v_terminal: &v_terminal,
        start,
        end_index,
    };

    // Full-sample point estimate with surfaces, then disjoint batch re-runs
    // for the error bar: the final targets are regression-smoothed, so only
    // independent replicates see the surface-chain noise.
    let all: Vec<usize> = (0..n_samples).collect();
    let (value_estimate, surfaces, reduced) = ctx.backward_pass(&all, true)?;
    let surfaces = surfaces.expect("surfaces requested");
    let n_batches = (n_samples / (10 * k_features)).clamp(1, 8);
    let stderr = if n_batches >= 2 {
        let mut batch_values = Vec::with_capacity(n_batches);
        for b in 0..n_batches {
            let ids: Vec<usize> = (b..n_samples).step_by(n_batches).collect();
            let (vb, _, _) = ctx.backward_pass(&ids, false)?;
            batch_values.push(vb);
        }
        let mean = batch_values.iter().sum::<f64>() / n_batches as f64;
        let var = batch_values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n_batches - 1) as f64;
        (var / n_batches as f64).sqrt()
    } else {
        0.0
    };

    Ok(GameValue {
        value: value_estimate,
        stderr,
        field: ValueField {
            kind,
            start_index: start,
            basis: basis.clone(),
            dim: spec.dim(),
            surfaces,
            stderr,
        },
        reduced_basis: reduced,
    })
}

/// Start-step estimate, optional surfaces, reduced-basis flag.
type PassOutput = (f64, Option<Vec<DVector<f64>>>, bool);

/// Shared state of one backward induction over an exploration bundle.
struct BackwardCtx<'a> {
    spec: &'a GameSpec,
    kind: ValueKind,
    opts: &'a ValueOptions,
    bundle: &'a PathBundle,
    state_max: &'a [Vec<f64>],
    state_sum: &'a [Vec<f64>],
    v_terminal: &'a [f64],
    start: usize,
    end_index: usize,
}

impl BackwardCtx<'_> {
    fn feature_at(&self, local: usize, s: usize, terminal_point: &[f64]) -> DVector<f64> {
        let d = self.spec.dim();
        let fs = FeatureState {
            max_norm: self.state_max[local][s],
            sum: self.state_sum[local][s * d..(s + 1) * d].to_vec(),
            count: self.start + local,
        };
        self.opts.basis.features(&fs, terminal_point)
    }

    /// Backward induction restricted to `ids`; returns the start-step value
    /// estimate and, when requested, the fitted surfaces at every step.
    fn backward_pass(&self, ids: &[usize], want_surfaces: bool) -> Result<PassOutput> {
        let spec = self.spec;
        let basis = &self.opts.basis;
        let bundle = self.bundle;
        let d = spec.dim();
        let steps = self.end_index - self.start;
        let dl = spec.grid.step();
        let sq = dl.sqrt();
        let nu = spec.u_grid.len();
        let nv = spec.v_grid.len();
        let noise_dim = spec.coeffs.noise_dim();
        let m = ids.len();

        let v_term: Vec<f64> = ids.iter().map(|&s| self.v_terminal[s]).collect();
        let mut surfaces = vec![DVector::<f64>::zeros(0); steps + 1];
        let rows_terminal: Vec<DVector<f64>> = ids
            .iter()
            .map(|&s| self.feature_at(steps, s, bundle.paths[s].value(self.end_index)))
            .collect();
        let terminal_fit = fit_least_squares(&rows_terminal, &v_term, basis.ridge)?;
        let mut reduced = terminal_fit.reduced;
        surfaces[steps] = terminal_fit.coeffs;
        let mut value_estimate = f64::NAN;

        for k in (self.start..self.end_index).rev() {
            let local = k - self.start;
            let rows_k: Vec<DVector<f64>> = ids
                .iter()
                .map(|&s| self.feature_at(local, s, bundle.paths[s].value(k)))
                .collect();

            // Per-pair fitted one-step-ahead expectations and Z surfaces;
            // the minimax acts on fitted (noise-averaged) quantities.
            let next_surface = &surfaces[local + 1];
            let pair_results: Vec<Result<(Vec<f64>, bool)>> = (0..nu * nv)
                .into_par_iter()
                .map(|pair| {
                    let u = spec.u_grid.values()[pair / nv];
                    let v = spec.v_grid.values()[pair % nv];
                    let mut cand_vals = Vec::with_capacity(m);
                    let mut z_targets = vec![Vec::with_capacity(m); noise_dim];
                    for &s in ids {
                        let prefix = bundle.paths[s].prefix(k);
                        let b = spec.coeffs.drift(&prefix, u, v);
                        if b.iter().any(|x| !x.is_finite()) {
                            return Err(Error::NonFinite {
                                what: "drift",
                                step: k,
                            });
                        }
                        let sigma = spec.coeffs.diffusion(&prefix, u, v);
                        if sigma.iter().any(|x| !x.is_finite()) {
                            return Err(Error::NonFinite {
                                what: "diffusion",
                                step: k,
                            });
                        }
                        let xi = bundle.noise_at(s, k);
                        let x = prefix.terminal();
                        let mut cand = vec![0.0f64; d];
                        for i in 0..d {
                            let mut acc = x[i] + b[i] * dl;
                            for j in 0..noise_dim {
                                acc += sigma[(i, j)] * sq * xi[j];
                            }
                            cand[i] = acc;
                        }
                        let feats = self.feature_at(local + 1, s, &cand);
                        let cont = next_surface.dot(&feats);
                        for (j, t) in z_targets.iter_mut().enumerate() {
                            t.push(cont * xi[j] / sq);
                        }
                        cand_vals.push(cont);
                    }
                    let fit_e = fit_least_squares(&rows_k, &cand_vals, basis.ridge)?;
                    let mut pair_reduced = fit_e.reduced;
                    let mut z_coeffs = Vec::with_capacity(noise_dim);
                    for t in &z_targets {
                        let f = fit_least_squares(&rows_k, t, basis.ridge)?;
                        pair_reduced |= f.reduced;
                        z_coeffs.push(f);
                    }
                    let mut vals = Vec::with_capacity(m);
                    for (row, &s) in rows_k.iter().zip(ids) {
                        let ye = fit_e.predict(row);
                        let z: Vec<f64> = z_coeffs.iter().map(|f| f.predict(row)).collect();
                        let prefix = bundle.paths[s].prefix(k);
                        let y =
                            integrate_q(spec, &prefix, ye, &z, u, v, dl, self.opts.q_sub_steps)?;
                        vals.push(y);
                    }
                    Ok((vals, pair_reduced))
                })
                .collect();
            let mut tables: Vec<Vec<f64>> = Vec::with_capacity(nu * nv);
            for r in pair_results {
                let (vals, pair_reduced) = r?;
                reduced |= pair_reduced;
                tables.push(vals);
            }

            // Step-local minimax per sample.
            let targets: Vec<f64> = (0..m)
                .map(|i| {
                    let table: Vec<f64> = (0..nu * nv).map(|pair| tables[pair][i]).collect();
                    minimax(&table, nu, nv, self.kind)
                })
                .collect();

            if k == self.start {
                value_estimate = targets.iter().sum::<f64>() / m as f64;
            }
            // The recursion flows through the fitted surfaces: the next
            // step's continuation evaluates this fit at candidate states.
            let fit_v = fit_least_squares(&rows_k, &targets, basis.ridge)?;
            reduced |= fit_v.reduced;
            surfaces[local] = fit_v.coeffs;
        }
        Ok((
            value_estimate,
            if want_surfaces { Some(surfaces) } else { None },
            reduced,
        ))
    }
}

// --- DPP self-consistency and regularity ----------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DppReport {
    pub delta: f64,
    pub full_value: f64,
    pub recomposed_value: f64,
    pub discrepancy: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

/// Compare the direct value against the one-step DPP recomposition: a short
/// game over `[t, t + delta]` whose terminal data is the previously computed
/// value field at `t + delta`.
pub fn dpp_consistency(
    spec: &GameSpec,
    initial: &Path,
    delta: f64,
    kind: ValueKind,
    n_samples: usize,
    seed: u64,
    opts: &ValueOptions,
) -> Result<DppReport> {
    let full = value(spec, initial, kind, n_samples, seed, opts)?;
    let mid = spec.grid.index_of(initial.end_time() + delta)?;
    if mid <= initial.end_index() || mid > spec.grid.n_steps() {
        return Err(Error::Precondition(
            "delta must land inside the game window".into(),
        ));
    }
    let window = if spec.coeffs.noise_dim() == 0 {
        // Exact continuation: recompose through fresh exact sub-trees.
        let eta = |leaf: &Path| -> f64 {
            exact_tree_value(spec, leaf, kind, spec.grid.n_steps(), None, opts)
                .map(|g| g.value)
                .unwrap_or(f64::NAN)
        };
        exact_tree_value(spec, initial, kind, mid, Some(&eta), opts)?
    } else {
        let field = full.field.clone();
        let eta = move |p: &Path| -> f64 { field.eval(p).unwrap_or(f64::NAN) };
        regression_value(
            spec,
            initial,
            kind,
            mid,
            Some(&eta),
            n_samples,
            rng::derive_seed(seed, 0xD1D),
            opts,
        )?
    };
    let discrepancy = (full.value - window.value).abs();
    let combined = full.stderr + window.stderr;
    Ok(DppReport {
        delta,
        full_value: full.value,
        recomposed_value: window.value,
        discrepancy,
        combined_stderr: combined,
        pass: discrepancy <= 3.0 * combined + 1e-9,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularityReport {
    /// `(scale, |V(p) - V(p_bumped)| / scale)` across perturbation scales.
    pub lipschitz: Vec<(f64, f64)>,
    /// Max/min of the Lipschitz ratios.
    pub lipschitz_spread: f64,
    /// `(time gap, |V(flat to s) - V(flat to T)|)` pairs.
    pub holder_points: Vec<(f64, f64)>,
    pub holder_exponent: f64,
    /// `(scaling, |V| / (1 + sup norm))` for the linear-growth fit.
    pub growth: Vec<(f64, f64)>,
    pub growth_spread: f64,
}

/// Empirical Lipschitz/Hoelder regularity of the value functional around a
/// base segment. Time-shift pairs compare flat extensions against the flat
/// extension to the horizon, whose value is the terminal payoff itself.
pub fn regularity_probe(
    spec: &GameSpec,
    base: &Path,
    kind: ValueKind,
    n_samples: usize,
    seed: u64,
    opts: &ValueOptions,
) -> Result<RegularityReport> {
    let val_at = |p: &Path, label: u64| -> Result<f64> {
        if p.at_horizon() {
            Ok(spec.driver.phi(p))
        } else {
            Ok(value(
                spec,
                p,
                kind,
                n_samples,
                rng::derive_seed(seed, label),
                opts,
            )?
            .value)
        }
    };
    let base_value = val_at(base, 0)?;

    // Path perturbations at shrinking scales, common seed (coupled noise).
    let mut lipschitz = Vec::new();
    for (i, &scale) in [0.1, 0.01, 0.001].iter().enumerate() {
        let mut delta = vec![0.0; base.dim()];
        delta[0] = scale;
        let bumped = base.bump_terminal(&delta)?;
        let v = val_at(&bumped, 0)?; // same seed label: coupled
        let _ = i;
        lipschitz.push((scale, (v - base_value).abs() / scale));
    }
    let ratios: Vec<f64> = lipschitz.iter().map(|x| x.1).collect();
    let lipschitz_spread = ratios.iter().cloned().fold(f64::MIN, f64::max)
        / ratios.iter().cloned().fold(f64::MAX, f64::min).max(1e-300);

    // Time shifts: flat extensions compared against the horizon extension.
    let n = spec.grid.n_steps();
    let start = base.end_index();
    let horizon_path = base.flat_extend_to_index(n)?;
    let horizon_value = spec.driver.phi(&horizon_path);
    let mut holder_points = Vec::new();
    for j in 1..=4 {
        let idx = n - (n - start) / (1 << j);
        if idx <= start || idx >= n {
            continue;
        }
        let shifted = base.flat_extend_to_index(idx)?;
        let gap = spec.grid.t_end() - shifted.end_time();
        let v = val_at(&shifted, 100 + j as u64)?;
        holder_points.push((gap, (v - horizon_value).abs()));
    }
    let holder_exponent = crate::dynamics::loglog_slope(&holder_points);

    // Linear growth across scalings of the base segment.
    let mut growth = Vec::new();
    for (j, &lambda) in [0.5, 1.0, 2.0, 4.0].iter().enumerate() {
        let scaled = Path::new(
            *base.grid(),
            base.dim(),
            base.data().iter().map(|x| lambda * x).collect(),
        )?;
        let v = val_at(&scaled, 200 + j as u64)?;
        growth.push((lambda, v.abs() / (1.0 + scaled.sup_norm())));
    }
    let gs: Vec<f64> = growth.iter().map(|x| x.1).collect();
    let growth_spread = gs.iter().cloned().fold(f64::MIN, f64::max)
        / gs.iter().cloned().fold(f64::MAX, f64::min).max(1e-300);

    Ok(RegularityReport {
        lipschitz,
        lipschitz_spread,
        holder_points,
        holder_exponent,
        growth,
        growth_spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::BsdeDriver;
    use crate::catalog;
    use crate::test_support::random_path;

    fn grid01(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn lq_spec() -> GameSpec {
        catalog::lq_isaacs_separable(grid01(16))
    }

    #[test]
    fn hamiltonian_pure_diffusion_is_half_trace() {
        let spec =
            catalog::driftless_brownian(grid01(8), 2, catalog::DriftlessPayoff::Linear { a: 1.0 });
        let p = Path::constant(grid01(8), &[0.3, -0.1], 3).unwrap();
        let grad = DVector::from_vec(vec![1.0, 2.0]);
        let hess = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, -2.0]);
        let h = hamiltonian(&spec, &p, 0.0, &grad, &hess, 0.0, 0.0);
        assert!((h - 0.5 * (4.0 - 2.0)).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_pure_drift_is_inner_product() {
        let coeffs = SdeCoefficients::new(
            2,
            1,
            |_, u, _| DVector::from_vec(vec![u, 2.0]),
            |_, _, _| DMatrix::zeros(2, 1),
        );
        let driver = BsdeDriver::new(|_, _, _, _, _| 0.0, |_| 0.0);
        let spec = GameSpec {
            coeffs,
            driver,
            u_grid: ControlGrid::singleton(3.0),
            v_grid: ControlGrid::singleton(0.0),
            grid: grid01(8),
        };
        let p = Path::constant(grid01(8), &[0.0, 0.0], 0).unwrap();
        let grad = DVector::from_vec(vec![0.5, -1.0]);
        let hess = DMatrix::zeros(2, 2);
        let h = hamiltonian(&spec, &p, 0.0, &grad, &hess, 3.0, 0.0);
        assert_eq!(h, 0.5 * 3.0 - 1.0 * 2.0);
    }

    #[test]
    fn hamiltonian_matches_independent_evaluator_on_random_lq_data() {
        // Second implementation written from the definition, kept deliberately
        // different in evaluation order.
        let spec = lq_spec();
        let mut r = crate::rng::global_stream(33);
        use rand::Rng;
        for _ in 0..100 {
            let p = random_path(&mut r, grid01(16), 1, 1.0);
            let rr: f64 = r.random_range(-2.0..2.0);
            let grad = DVector::from_vec(vec![r.random_range(-2.0..2.0)]);
            let hess = DMatrix::from_element(1, 1, r.random_range(-2.0..2.0));
            for &u in spec.u_grid.values() {
                for &v in spec.v_grid.values() {
                    let got = hamiltonian(&spec, &p, rr, &grad, &hess, u, v);
                    let x = p.terminal()[0];
                    let b = -0.5 * x + u + v;
                    let sig = 0.5;
                    let z = sig * grad[0];
                    let expect = grad[0] * b
                        + 0.5 * hess[(0, 0)] * sig * sig
                        + (0.25 * u * u - 0.25 * v * v + 0.1 * rr);
                    let _ = z;
                    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn control_free_hamiltonian_collapses_minus_and_plus() {
        let spec =
            catalog::driftless_brownian(grid01(8), 1, catalog::DriftlessPayoff::Linear { a: 1.0 });
        let p = Path::constant(grid01(8), &[0.2], 2).unwrap();
        let grad = DVector::from_vec(vec![0.7]);
        let hess = DMatrix::from_element(1, 1, -1.3);
        let h = hamiltonian(&spec, &p, 0.4, &grad, &hess, 0.0, 0.0);
        assert_eq!(hamiltonian_minus(&spec, &p, 0.4, &grad, &hess), h);
        assert_eq!(hamiltonian_plus(&spec, &p, 0.4, &grad, &hess), h);
    }

    #[test]
    fn weak_duality_and_bilinear_gap() {
        let spec = catalog::bilinear_non_isaacs(grid01(8));
        let mut r = crate::rng::global_stream(7);
        use rand::Rng;
        let mut saw_gap = false;
        for _ in 0..50 {
            let p = random_path(&mut r, grid01(8), 1, 1.0);
            let rr: f64 = r.random_range(-1.0..1.0);
            let grad = DVector::from_vec(vec![r.random_range(-1.0..1.0)]);
            let hess = DMatrix::from_element(1, 1, r.random_range(-1.0..1.0));
            let lo = hamiltonian_minus(&spec, &p, rr, &grad, &hess);
            let hi = hamiltonian_plus(&spec, &p, rr, &grad, &hess);
            assert!(lo <= hi);
            if hi - lo > 1.0 {
                saw_gap = true;
            }
        }
        // u*v on {-1,1}^2: inf_v sup_u = +1, sup_u inf_v = -1, gap 2 always.
        assert!(saw_gap);
    }

    #[test]
    fn separable_hamiltonian_has_no_gap() {
        let spec = lq_spec();
        let mut r = crate::rng::global_stream(8);
        use rand::Rng;
        for _ in 0..50 {
            let p = random_path(&mut r, grid01(16), 1, 1.0);
            let rr: f64 = r.random_range(-1.0..1.0);
            let grad = DVector::from_vec(vec![r.random_range(-1.0..1.0)]);
            let hess = DMatrix::from_element(1, 1, r.random_range(-1.0..1.0));
            let lo = hamiltonian_minus(&spec, &p, rr, &grad, &hess);
            let hi = hamiltonian_plus(&spec, &p, rr, &grad, &hess);
            // Brute force over the grid as the oracle.
            let mut best = f64::NEG_INFINITY;
            for &u in spec.u_grid.values() {
                let mut inner = f64::INFINITY;
                for &v in spec.v_grid.values() {
                    inner = inner.min(hamiltonian(&spec, &p, rr, &grad, &hess, u, v));
                }
                best = best.max(inner);
            }
            assert_eq!(lo, best);
            assert!((hi - lo).abs() < 1e-12);
        }
    }

    #[test]
    fn isaacs_check_reports_gap_and_holds_flags() {
        let mk_points = |spec: &GameSpec| {
            let mut r = crate::rng::global_stream(9);
            use rand::Rng;
            (0..20)
                .map(|_| HamiltonianPoint {
                    path: random_path(&mut r, spec.grid, 1, 1.0),
                    r: r.random_range(-1.0..1.0),
                    grad: DVector::from_vec(vec![r.random_range(-1.0..1.0)]),
                    hess: DMatrix::from_element(1, 1, r.random_range(-1.0..1.0)),
                })
                .collect::<Vec<_>>()
        };
        let sep = lq_spec();
        let rep = isaacs_check(&sep, &mk_points(&sep), 1e-9);
        assert!(rep.holds, "{rep:?}");
        let singleton =
            catalog::driftless_brownian(grid01(8), 1, catalog::DriftlessPayoff::Linear { a: 1.0 });
        let rep0 = isaacs_check(&singleton, &mk_points(&singleton), 0.0);
        assert_eq!(rep0.max_gap, 0.0);
        assert!(rep0.holds);
        let bil = catalog::bilinear_non_isaacs(grid01(8));
        let repb = isaacs_check(&bil, &mk_points(&bil), 1e-6);
        assert!(!repb.holds);
        assert!((repb.max_gap - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_in_hessian_direction() {
        // Adding c*I to hess never decreases H when sigma sigma^T is psd.
        let spec = lq_spec();
        let mut r = crate::rng::global_stream(10);
        use rand::Rng;
        for _ in 0..50 {
            let p = random_path(&mut r, grid01(16), 1, 1.0);
            let rr: f64 = r.random_range(-1.0..1.0);
            let grad = DVector::from_vec(vec![r.random_range(-1.0..1.0)]);
            let hess = DMatrix::from_element(1, 1, r.random_range(-1.0..1.0));
            let bumped = &hess + DMatrix::identity(1, 1) * 0.7;
            for &u in spec.u_grid.values() {
                for &v in spec.v_grid.values() {
                    assert!(
                        hamiltonian(&spec, &p, rr, &grad, &bumped, u, v)
                            >= hamiltonian(&spec, &p, rr, &grad, &hess, u, v)
                    );
                }
            }
            assert!(
                hamiltonian_minus(&spec, &p, rr, &grad, &bumped)
                    >= hamiltonian_minus(&spec, &p, rr, &grad, &hess)
            );
            assert!(
                hamiltonian_plus(&spec, &p, rr, &grad, &bumped)
                    >= hamiltonian_plus(&spec, &p, rr, &grad, &hess)
            );
        }
    }

    #[test]
    fn response_selection_is_deterministic() {
        let spec = catalog::bilinear_non_isaacs(grid01(8));
        let p = Path::constant(grid01(8), &[0.1], 2).unwrap();
        let grad = DVector::from_vec(vec![0.3]);
        let hess = DMatrix::from_element(1, 1, 0.2);
        let a = response_selection(&spec, &p, 0.0, &grad, &hess);
        let b = response_selection(&spec, &p, 0.0, &grad, &hess);
        assert_eq!(a, b);
        assert_eq!(a.len(), spec.u_grid.len());
        for (ui, &vi) in a.iter().enumerate() {
            let u = spec.u_grid.values()[ui];
            let chosen = hamiltonian(&spec, &p, 0.0, &grad, &hess, u, spec.v_grid.values()[vi]);
            for &v in spec.v_grid.values() {
                assert!(chosen <= hamiltonian(&spec, &p, 0.0, &grad, &hess, u, v));
            }
        }
    }

    #[test]
    fn minimax_breaks_ties_toward_lowest_index() {
        // Table with a tie: both rows give inner min 1.0; the first row wins.
        let table = vec![1.0, 5.0, 5.0, 1.0];
        assert_eq!(minimax(&table, 2, 2, ValueKind::Lower), 1.0);
        assert_eq!(minimax(&table, 2, 2, ValueKind::Upper), 5.0);
    }
}
