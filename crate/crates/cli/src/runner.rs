//! Scenario execution: run the requested check, write `results.json`, CSV
//! tables and a run manifest, and report pass/fail.
//!
//! `results.json` is fully deterministic for a fixed scenario and seed;
//! wall time and the timestamp live in `manifest.json` only.

use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use ppde_core::bsde::{solve, BsdeDriver};
use ppde_core::catalog::{self, DriftlessPayoff};
use ppde_core::dynamics::{moment_check, simulate, ControlSequence, SdeCoefficients};
use ppde_core::error::{Error, Result};
use ppde_core::functional_calculus::{
    ito_residual, upsilon_handle, FunctionalHandle, StepIntegrands,
};
use ppde_core::game::{
    dpp_consistency, isaacs_check, value, GameSpec, HamiltonianPoint, ValueKind, ValueOptions,
};
use ppde_core::gauge::{self, GaugeOrder};
use ppde_core::path_space::{Grid, Path};
use ppde_core::regression::RegressionBasis;
use ppde_core::rng;
use ppde_core::sampling;
use ppde_core::variational::{self, FiniteDomain};
use ppde_core::viscosity::{
    classical_residual, comparison_harness, consistency_check, stability_sweep, GeneratorHandle,
    GeneratorSample, Role, StabilityMember,
};

use crate::scenario::{
    BsdeSolveParams, CommandSpec, ComparisonParams, DppCheckParams, EbpParams, GameValueParams,
    GaugeVerifyParams, IsaacsParams, ItoCheckParams, ResidualParams, Scenario, SdeMomentsParams,
    StabilityParams, SCHEMA_VERSION,
};

/// One verified claim: the measured value, its tolerance and sample count.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    fn le(name: &str, value: f64, tolerance: f64, samples: u64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            samples,
            pass: value <= tolerance,
            detail,
        }
    }

    fn ge(name: &str, value: f64, threshold: f64, samples: u64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance: threshold,
            samples,
            pass: value >= threshold,
            detail,
        }
    }

    fn flag(name: &str, ok: bool, samples: u64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            samples,
            pass: ok,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Results {
    pub schema_version: u32,
    pub name: String,
    pub command: String,
    pub seed: u64,
    pub checks: Vec<CheckRow>,
    pub pass: bool,
    pub artifacts: Vec<String>,
}

pub struct RunOutcome {
    pub results: Results,
    pub out_dir: PathBuf,
}

/// Execute a scenario and write its artifacts under `out_dir`.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: &FsPath,
    seed_override: Option<u64>,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let seed = seed_override.unwrap_or(scenario.seed);
    fs::create_dir_all(out_dir)?;
    let mut artifacts: Vec<String> = Vec::new();
    let checks = match &scenario.command {
        CommandSpec::GaugeVerify(p) => run_gauge_verify(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::ItoCheck(p) => run_ito_check(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::Ebp(p) => run_ebp(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::SdeMoments(p) => run_sde_moments(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::BsdeSolve(p) => run_bsde_solve(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::GameValue(p) => run_game_value(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::Isaacs(p) => run_isaacs(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::DppCheck(p) => run_dpp_check(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::Residual(p) => run_residual(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::Comparison(p) => run_comparison(p, seed, out_dir, &mut artifacts)?,
        CommandSpec::Stability(p) => run_stability(p, seed, out_dir, &mut artifacts)?,
    };
    let results = Results {
        schema_version: SCHEMA_VERSION,
        name: scenario.name.clone(),
        command: scenario.command.kind().to_string(),
        seed,
        pass: checks.iter().all(|c| c.pass),
        checks,
        artifacts,
    };
    let json = serde_json::to_string_pretty(&results)? + "\n";
    fs::write(out_dir.join("results.json"), json)?;

    #[derive(Serialize)]
    struct Manifest {
        version: &'static str,
        seed: u64,
        scenario: String,
        wall_time_s: f64,
        timestamp_unix: u64,
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed,
        scenario: scenario.name.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
        timestamp_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(RunOutcome {
        results,
        out_dir: out_dir.to_path_buf(),
    })
}

fn write_csv(
    out_dir: &FsPath,
    name: &str,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_path(out_dir.join(name))?;
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    artifacts.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(
    out_dir: &FsPath,
    name: &str,
    value: &T,
    artifacts: &mut Vec<String>,
) -> Result<()> {
    fs::write(
        out_dir.join(name),
        serde_json::to_string_pretty(value)? + "\n",
    )?;
    artifacts.push(name.to_string());
    Ok(())
}

// --- gauge-verify ----------------------------------------------------------

fn run_gauge_verify(
    p: &GaugeVerifyParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let grid = Grid::new(0.0, 1.0, p.path_steps)?;
    let mut checks = Vec::new();
    let mut combined = gauge::GaugeSweepReport::default();
    for &dim in &p.dims {
        for &order in &p.orders {
            let m = GaugeOrder::new(order)?;
            let label = rng::derive_seed(seed, (dim as u64) << 8 | order as u64);
            let paths = sampling::sweep_ensemble(label, grid, dim, 2 * p.paths_per_case);
            let mut iter = paths.into_iter();
            let pairs = std::iter::from_fn(move || {
                let a = iter.next()?;
                let b = iter.next()?;
                Some((a, b))
            });
            let report = gauge::gauge_bounds_sweep(pairs, m)?;
            let violations = report.total_violations();
            checks.push(CheckRow::le(
                &format!("gauge_bounds_d{dim}_m{order}"),
                violations as f64,
                p.max_violations as f64,
                p.paths_per_case as u64,
                format!("violations across {} bound families", report.0.len()),
            ));
            for (name, stat) in report.0 {
                combined.0.entry(name).or_default().merge(&stat);
            }
        }
    }
    write_json(out_dir, "gauge_report.json", &combined, artifacts)?;
    write_csv(
        out_dir,
        "gauge_bounds.csv",
        &["bound", "samples", "violations", "max_slack"],
        combined.0.iter().map(|(name, s)| {
            vec![
                name.clone(),
                s.samples.to_string(),
                s.violations.to_string(),
                format!("{}", s.max_slack),
            ]
        }),
        artifacts,
    )?;
    Ok(checks)
}

// --- ito-check --------------------------------------------------------------

fn run_ito_check(
    p: &ItoCheckParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    if !p.fine_steps.is_multiple_of(p.coarse_steps) {
        return Err(Error::Precondition(
            "fine step count must refine the coarse one".into(),
        ));
    }
    let factor = p.fine_steps / p.coarse_steps;
    let fine_grid = Grid::new(0.0, 1.0, p.fine_steps)?;
    let coarse_grid = Grid::new(0.0, 1.0, p.coarse_steps)?;
    let coeffs = SdeCoefficients::new(
        1,
        1,
        |_, _, _| DVector::zeros(1),
        |_, _, _| DMatrix::identity(1, 1),
    );
    let initial = Path::constant(fine_grid, &[0.0], 0)?;
    let u = ControlSequence::constant(0.0, p.fine_steps);
    let bundle = simulate(&coeffs, &initial, &u, &u.clone(), p.samples, seed)?;

    let functionals: Vec<(&str, FunctionalHandle)> = vec![
        (
            "terminal_linear",
            FunctionalHandle::new(|q: &Path| q.terminal()[0])
                .with_dt(|_| 0.0)
                .with_dx(|q| DVector::from_element(q.dim(), 1.0))
                .with_dxx(|q| DMatrix::zeros(q.dim(), q.dim())),
        ),
        (
            "terminal_quadratic",
            FunctionalHandle::new(|q: &Path| q.terminal()[0] * q.terminal()[0])
                .with_dt(|_| 0.0)
                .with_dx(|q| DVector::from_element(1, 2.0 * q.terminal()[0]))
                .with_dxx(|_| DMatrix::from_element(1, 1, 2.0)),
        ),
        ("upsilon", upsilon_handle(GaugeOrder::default())),
    ];

    let subsample = |path: &Path| -> Path {
        let d = path.dim();
        let mut values = Vec::with_capacity((p.coarse_steps + 1) * d);
        for i in 0..=p.coarse_steps {
            values.extend_from_slice(path.value(i * factor));
        }
        Path::new(coarse_grid, d, values).expect("subsample")
    };

    let table_fine = (
        vec![DVector::zeros(1); p.fine_steps],
        vec![DMatrix::identity(1, 1); p.fine_steps],
    );
    let table_coarse = (
        vec![DVector::zeros(1); p.coarse_steps],
        vec![DMatrix::identity(1, 1); p.coarse_steps],
    );

    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (name, f) in &functionals {
        use rayon::prelude::*;
        let sums: Vec<(f64, f64)> = bundle
            .paths
            .par_iter()
            .map(|x| {
                let rf = ito_residual(
                    f,
                    x,
                    &StepIntegrands {
                        drift: &table_fine.0,
                        diffusion: &table_fine.1,
                    },
                    0,
                )
                .expect("residual");
                let rc = ito_residual(
                    f,
                    &subsample(x),
                    &StepIntegrands {
                        drift: &table_coarse.0,
                        diffusion: &table_coarse.1,
                    },
                    0,
                )
                .expect("residual");
                (rc * rc, rf * rf)
            })
            .collect();
        let (c_sq, f_sq) = sums
            .iter()
            .fold((0.0, 0.0), |acc, s| (acc.0 + s.0, acc.1 + s.1));
        let rms_coarse = (c_sq / p.samples as f64).sqrt();
        let rms_fine = (f_sq / p.samples as f64).sqrt();
        rows.push(vec![
            name.to_string(),
            format!("{rms_coarse}"),
            format!("{rms_fine}"),
        ]);
        if *name == "terminal_linear" {
            checks.push(CheckRow::le(
                "linear_residual_exact",
                rms_coarse.max(rms_fine),
                p.linear_abs_tol,
                p.samples as u64,
                "telescoping residual of the identity functional".into(),
            ));
        } else {
            checks.push(CheckRow::ge(
                &format!("{name}_refinement_ratio"),
                rms_coarse / rms_fine,
                p.min_ratio,
                p.samples as u64,
                format!(
                    "rms {rms_coarse} at {} steps vs {rms_fine} at {} steps",
                    p.coarse_steps, p.fine_steps
                ),
            ));
        }
    }
    write_csv(
        out_dir,
        "ito_rms.csv",
        &["functional", "rms_coarse", "rms_fine"],
        rows.into_iter(),
        artifacts,
    )?;
    Ok(checks)
}

// --- ebp ---------------------------------------------------------------------

fn run_ebp(
    p: &EbpParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    use rand::Rng;
    let grid = Grid::new(0.0, 1.0, p.path_steps)?;
    let lambda = variational::default_gauge();
    let mut certified = 0usize;
    let mut mutations_detected = 0usize;
    let mut mutations_run = 0usize;
    let mut first_cert: Option<variational::EbpResult> = None;
    for i in 0..p.domains {
        let label = rng::derive_seed(seed, 0xEB0 + i as u64);
        let mut r = rng::global_stream(label);
        let points: Vec<Path> = (0..p.domain_size)
            .map(|_| sampling::random_segment(&mut r, grid, 1, 1.0))
            .collect();
        let domain = FiniteDomain::new(points)?;
        let c0: f64 = r.random_range(-1.0..1.0);
        let c1: f64 = r.random_range(-1.0..1.0);
        let f = FunctionalHandle::new(move |q: &Path| {
            c0 * q.terminal()[0] + c1 * (4.0 * q.end_time()).sin() * q.sup_norm()
        });
        let values: Vec<f64> = domain.points().iter().map(|q| f.eval(q)).collect();
        let sup = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = values
            .iter()
            .position(|&v| v >= sup - p.epsilon)
            .expect("epsilon-maximizer exists");
        let cert = variational::ebp_maximize(&f, &lambda, start, p.epsilon, p.delta0, &domain)?;
        let report = variational::verify_ebp(&cert, &f, &lambda, &domain);
        if report.all_hold() && report.canonical_weights {
            certified += 1;
        }
        if p.mutation_tests {
            mutations_run += 1;
            let mut corrupted = cert.clone();
            let other = (cert.anchor_index + 1) % domain.len();
            corrupted.anchor = domain.points()[other].clone();
            corrupted.anchor_index = other;
            let bad = variational::verify_ebp(&corrupted, &f, &lambda, &domain);
            if !bad.all_hold() {
                mutations_detected += 1;
            }
        }
        if first_cert.is_none() {
            first_cert = Some(cert);
        }
    }
    if let Some(cert) = &first_cert {
        write_json(out_dir, "ebp_certificate.json", cert, artifacts)?;
    }
    let mut checks = vec![CheckRow::ge(
        "certificates_verified",
        certified as f64,
        p.domains as f64,
        p.domains as u64,
        format!(
            "{certified}/{} domains of {} paths",
            p.domains, p.domain_size
        ),
    )];
    if p.mutation_tests {
        checks.push(CheckRow::ge(
            "mutations_detected",
            mutations_detected as f64,
            mutations_run as f64,
            mutations_run as u64,
            "every corrupted certificate must fail verification".into(),
        ));
    }
    Ok(checks)
}

// --- sde-moments --------------------------------------------------------------

fn run_sde_moments(
    p: &SdeMomentsParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    if p.entry != "driftless-brownian" {
        return Err(Error::Precondition(format!(
            "sde-moments supports the driftless-brownian entry, got '{}'",
            p.entry
        )));
    }
    catalog::entry(&p.entry)?;
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let dim = p.dim;
    let coeffs = SdeCoefficients::new(
        dim,
        dim,
        move |_, _, _| DVector::zeros(dim),
        move |_, _, _| DMatrix::identity(dim, dim),
    );
    let initial = Path::constant(grid, &vec![0.0; dim], 0)?;
    let mut checks = Vec::new();

    // Brownian variance identity at the horizon.
    let u = ControlSequence::constant(0.0, p.steps);
    let bundle = simulate(&coeffs, &initial, &u, &u.clone(), p.samples, seed)?;
    let sq: Vec<f64> = bundle
        .paths
        .iter()
        .map(|x| x.terminal().iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mean = sq.iter().sum::<f64>() / p.samples as f64;
    let var = sq.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (p.samples - 1) as f64;
    let se = (var / p.samples as f64).sqrt();
    checks.push(CheckRow::le(
        "terminal_variance_identity",
        (mean - dim as f64).abs(),
        p.se_factor * se,
        p.samples as u64,
        format!("E|X(T) - x|^2 = {mean} vs d(T - t) = {dim}"),
    ));
    let mut bin = fs::File::create(out_dir.join("bundle.bin"))?;
    bundle.write_binary(&mut bin)?;
    artifacts.push("bundle.bin".into());
    if p.samples * p.steps <= 65536 {
        let mut csvf = fs::File::create(out_dir.join("bundle.csv"))?;
        bundle.write_csv(&mut csvf)?;
        artifacts.push("bundle.csv".into());
    }

    let mut rows = Vec::new();
    for &order in &p.moment_orders {
        let rep = moment_check(
            &coeffs,
            &initial,
            order,
            p.samples,
            rng::derive_seed(seed, order as u64),
        )?;
        checks.push(CheckRow::le(
            &format!("increment_slope_p{order}"),
            (rep.increment_slope - rep.slope_target).abs(),
            p.slope_band * rep.slope_target,
            p.samples as u64,
            format!(
                "fitted slope {} vs target {}",
                rep.increment_slope, rep.slope_target
            ),
        ));
        checks.push(CheckRow::le(
            &format!("stability_spread_p{order}"),
            rep.stability_spread,
            p.stability_spread,
            p.samples as u64,
            "coupled Lipschitz ratio spread across perturbation scales".into(),
        ));
        for (gap, moment) in &rep.increment_points {
            rows.push(vec![
                order.to_string(),
                format!("{gap}"),
                format!("{moment}"),
            ]);
        }
        write_json(out_dir, &format!("moments_p{order}.json"), &rep, artifacts)?;
    }
    write_csv(
        out_dir,
        "increments.csv",
        &["order", "gap", "moment"],
        rows.into_iter(),
        artifacts,
    )?;
    Ok(checks)
}

// --- bsde-solve -----------------------------------------------------------------

fn run_bsde_solve(
    p: &BsdeSolveParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let basis = RegressionBasis::default_path_basis();
    let mut checks = Vec::new();
    let mut rows = Vec::new();

    let run_case =
        |steps: usize, q_kind: u8, seed_label: u64| -> Result<ppde_core::bsde::BsdeSolution> {
            let grid = Grid::new(0.0, 1.0, steps)?;
            let coeffs = SdeCoefficients::new(
                1,
                1,
                |_, _, _| DVector::zeros(1),
                |_, _, _| DMatrix::identity(1, 1),
            );
            let initial = Path::constant(grid, &[0.0], 0)?;
            let u = ControlSequence::constant(0.0, steps);
            let bundle = simulate(
                &coeffs,
                &initial,
                &u,
                &u.clone(),
                p.samples,
                rng::derive_seed(seed, seed_label),
            )?;
            let payoff = p.payoff;
            let c = p.driver_constant;
            let r = p.driver_linear_rate;
            let driver = match q_kind {
                0 => BsdeDriver::new(move |_, _, _, _, _| 0.0, move |_| payoff)
                    .with_lipschitz_hint(0.0),
                1 => BsdeDriver::new(move |_, _, _, _, _| c, move |_| payoff)
                    .with_lipschitz_hint(0.0),
                _ => BsdeDriver::new(move |_, y, _, _, _| r * y, move |_| payoff)
                    .with_lipschitz_hint(r.abs()),
            };
            solve(&driver, &bundle, &u, &u.clone(), &basis)
        };

    // q = 0, phi = K: exact.
    let sol = run_case(p.steps, 0, 1)?;
    checks.push(CheckRow::le(
        "zero_driver_exact",
        (sol.y0 - p.payoff).abs(),
        p.exact_abs_tol,
        p.samples as u64,
        format!("y0 = {} vs K = {}", sol.y0, p.payoff),
    ));
    rows.push(vec![
        "zero_driver".into(),
        format!("{}", sol.y0),
        format!("{}", p.payoff),
    ]);
    write_json(out_dir, "bsde_solution.json", &sol, artifacts)?;

    // q = c: linear growth in the horizon.
    let sol = run_case(p.steps, 1, 2)?;
    let expect = p.payoff + p.driver_constant;
    checks.push(CheckRow::le(
        "constant_driver",
        (sol.y0 - expect).abs(),
        p.se_factor * sol.stderr + p.exact_abs_tol,
        p.samples as u64,
        format!("y0 = {} vs K + cT = {expect}", sol.y0),
    ));
    rows.push(vec![
        "constant_driver".into(),
        format!("{}", sol.y0),
        format!("{expect}"),
    ]);

    // q = r y: exponential, with the discretization bias shrinking in the
    // step.
    let expect = p.payoff * p.driver_linear_rate.exp();
    let coarse = run_case(p.steps / 4, 2, 3)?;
    let fine = run_case(p.steps, 2, 3)?;
    let bias_coarse = (coarse.y0 - expect).abs();
    let bias_fine = (fine.y0 - expect).abs();
    checks.push(CheckRow::le(
        "linear_driver_coarse",
        bias_coarse,
        p.se_factor * coarse.stderr + p.bias_budget_per_step * (1.0 / (p.steps / 4) as f64),
        p.samples as u64,
        format!("y0 = {} vs K exp(rT) = {expect}", coarse.y0),
    ));
    checks.push(CheckRow::le(
        "linear_driver_fine",
        bias_fine,
        p.se_factor * fine.stderr + p.bias_budget_per_step * (1.0 / p.steps as f64),
        p.samples as u64,
        format!("y0 = {} vs K exp(rT) = {expect}", fine.y0),
    ));
    checks.push(CheckRow::le(
        "linear_driver_bias_shrinks",
        bias_fine,
        bias_coarse + p.se_factor * (coarse.stderr + fine.stderr) + 1e-12,
        p.samples as u64,
        format!(
            "bias {bias_fine} at {} steps vs {bias_coarse} at {} steps",
            p.steps,
            p.steps / 4
        ),
    ));
    rows.push(vec![
        "linear_driver_coarse".into(),
        format!("{}", coarse.y0),
        format!("{expect}"),
    ]);
    rows.push(vec![
        "linear_driver_fine".into(),
        format!("{}", fine.y0),
        format!("{expect}"),
    ]);

    write_csv(
        out_dir,
        "bsde_cases.csv",
        &["case", "y0", "expected"],
        rows.into_iter(),
        artifacts,
    )?;
    Ok(checks)
}

// --- game-value -------------------------------------------------------------------

fn game_spec_for(entry: &str, grid: Grid) -> Result<GameSpec> {
    Ok(match entry {
        "driftless-brownian" => {
            catalog::driftless_brownian(grid, 1, DriftlessPayoff::Linear { a: 1.0 })
        }
        "deterministic-bang-bang" => catalog::deterministic_bang_bang(grid),
        "lq-isaacs-separable" => catalog::lq_isaacs_separable(grid),
        "bilinear-non-isaacs" => catalog::bilinear_non_isaacs(grid),
        other => {
            return Err(Error::Precondition(format!(
                "'{other}' is not a game entry"
            )))
        }
    })
}

fn run_game_value(
    p: &GameValueParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let spec = game_spec_for(&p.entry, grid)?;
    let initial = Path::constant(grid, &vec![p.initial_value; spec.dim()], 0)?;
    let opts = ValueOptions::default();
    let lower = value(&spec, &initial, ValueKind::Lower, p.samples, seed, &opts)?;
    let upper = value(&spec, &initial, ValueKind::Upper, p.samples, seed, &opts)?;
    let combined = p.se_factor * (lower.stderr + upper.stderr) + 1e-9;

    let mut checks = vec![CheckRow::le(
        "weak_ordering",
        lower.value - upper.value,
        combined,
        p.samples as u64,
        format!("lower {} vs upper {}", lower.value, upper.value),
    )];
    if p.expect_value_exists {
        checks.push(CheckRow::le(
            "value_exists",
            (lower.value - upper.value).abs(),
            combined,
            p.samples as u64,
            "Isaacs-type entry: lower and upper values coincide".into(),
        ));
    } else {
        checks.push(CheckRow::ge(
            "value_gap",
            upper.value - lower.value,
            combined,
            p.samples as u64,
            "non-Isaacs entry: the game has no value".into(),
        ));
    }
    if p.entry == "deterministic-bang-bang" {
        // Exhaustive enumeration oracle, exact.
        let dl = grid.step();
        let mut best = f64::NEG_INFINITY;
        for mask in 0u64..(1 << p.steps.min(20)) {
            let mut x = p.initial_value;
            for k in 0..p.steps {
                let uc = if mask >> k & 1 == 1 { 1.0 } else { -1.0 };
                x += uc * dl;
            }
            best = best.max(-x.abs());
        }
        checks.push(CheckRow::le(
            "enumeration_exact",
            (lower.value - best).abs(),
            0.0,
            1u64 << p.steps.min(20),
            format!("tree value {} vs enumeration {best}", lower.value),
        ));
    }
    write_json(out_dir, "value_field_lower.json", &lower.field, artifacts)?;
    write_json(out_dir, "value_field_upper.json", &upper.field, artifacts)?;
    write_csv(
        out_dir,
        "value_surfaces.csv",
        &["time", "coefficient_id", "value"],
        (0..lower.field.surfaces.len()).flat_map(|k| {
            let t = grid.time(lower.field.start_index + k);
            lower.field.surfaces[k]
                .iter()
                .enumerate()
                .map(move |(i, c)| vec![format!("{t}"), i.to_string(), format!("{c}")])
                .collect::<Vec<_>>()
        }),
        artifacts,
    )?;
    Ok(checks)
}

// --- isaacs -----------------------------------------------------------------------

fn run_isaacs(
    p: &IsaacsParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    use rand::Rng;
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let spec = game_spec_for(&p.entry, grid)?;
    let d = spec.dim();
    let mut r = rng::global_stream(rng::derive_seed(seed, 0x15A));
    let points: Vec<HamiltonianPoint> = (0..p.points)
        .map(|_| {
            let mut hess = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let v = r.random_range(-1.0..1.0);
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
            }
            HamiltonianPoint {
                path: sampling::random_segment(&mut r, grid, d, 1.0),
                r: r.random_range(-1.0..1.0),
                grad: DVector::from_iterator(d, (0..d).map(|_| r.random_range(-1.0..1.0))),
                hess,
            }
        })
        .collect();
    let report = isaacs_check(&spec, &points, p.tolerance);
    write_json(out_dir, "isaacs_report.json", &report, artifacts)?;
    Ok(vec![if p.expect_holds {
        CheckRow::le(
            "isaacs_gap",
            report.max_gap,
            p.tolerance,
            p.points as u64,
            "max H+ - H- over sampled points".into(),
        )
    } else {
        CheckRow::ge(
            "isaacs_gap_positive",
            report.max_gap,
            p.tolerance,
            p.points as u64,
            "entry is built to violate the Isaacs condition".into(),
        )
    }])
}

// --- dpp-check ----------------------------------------------------------------------

fn run_dpp_check(
    p: &DppCheckParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let spec = game_spec_for(&p.entry, grid)?;
    let initial = Path::constant(grid, &vec![p.initial_value; spec.dim()], 0)?;
    let opts = ValueOptions::default();
    let mut checks = Vec::new();
    let mut reports = Vec::new();
    for (i, &delta) in p.deltas.iter().enumerate() {
        let rep = dpp_consistency(
            &spec,
            &initial,
            delta,
            ValueKind::Lower,
            p.samples,
            rng::derive_seed(seed, i as u64),
            &opts,
        )?;
        checks.push(CheckRow::le(
            &format!("dpp_delta_{i}"),
            rep.discrepancy,
            p.se_factor * rep.combined_stderr + 1e-9,
            p.samples as u64,
            format!(
                "delta {delta}: full {} vs recomposed {}",
                rep.full_value, rep.recomposed_value
            ),
        ));
        reports.push(rep);
    }
    write_json(out_dir, "dpp_reports.json", &reports, artifacts)?;
    Ok(checks)
}

// --- residual ------------------------------------------------------------------------

fn residual_sample_paths(seed: u64, grid: Grid, dim: usize, count: usize) -> Vec<Path> {
    let mut r = rng::global_stream(seed);
    (0..count)
        .map(|_| {
            let end = rand::Rng::random_range(&mut r, 0..grid.n_steps());
            sampling::random_segment_with_end(&mut r, grid, dim, 1.0, end)
        })
        .collect()
}

fn run_residual(
    p: &ResidualParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let (generator, exact) = catalog::heat_type_exact(grid, p.dim);
    let samples = residual_sample_paths(rng::derive_seed(seed, 0x8E5), grid, p.dim, p.sample_paths);
    let mut worst = 0.0f64;
    for q in &samples {
        let r = classical_residual(&generator, &exact, q)?;
        worst = worst.max(r.abs());
    }
    let mut checks = vec![CheckRow::le(
        "exact_solution_residual",
        worst,
        p.abs_tol,
        p.sample_paths as u64,
        "heat-type closed-form solution".into(),
    )];

    let sub = catalog::heat_type_shifted(grid, p.dim, -p.shift);
    let rep = consistency_check(&generator, &sub, &samples, p.abs_tol)?;
    checks.push(CheckRow::flag(
        "negative_shift_is_subsolution",
        rep.classified == Some(Role::Subsolution) && rep.terminal_ok,
        p.sample_paths as u64,
        format!("classified {:?}", rep.classified),
    ));
    let sup = catalog::heat_type_shifted(grid, p.dim, p.shift);
    let rep = consistency_check(&generator, &sup, &samples, p.abs_tol)?;
    checks.push(CheckRow::flag(
        "positive_shift_is_supersolution",
        rep.classified == Some(Role::Supersolution) && rep.terminal_ok,
        p.sample_paths as u64,
        format!("classified {:?}", rep.classified),
    ));
    let rep = consistency_check(&generator, &exact, &samples, p.abs_tol)?;
    checks.push(CheckRow::flag(
        "exact_is_solution",
        rep.classified == Some(Role::Solution) && rep.terminal_ok,
        p.sample_paths as u64,
        format!("classified {:?}", rep.classified),
    ));
    write_json(out_dir, "residual_report.json", &rep, artifacts)?;
    Ok(checks)
}

// --- comparison ------------------------------------------------------------------------

fn run_comparison(
    p: &ComparisonParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let (_, exact) = catalog::heat_type_exact(grid, p.dim);
    let samples = residual_sample_paths(rng::derive_seed(seed, 0xC09), grid, p.dim, p.sample_paths);
    let band = p.band;
    let handle = &exact.handle;
    let w1 = |q: &Path| handle.eval(q) - band * (1.0 - q.end_time());
    let w2 = |q: &Path| handle.eval(q) + band * (1.0 - q.end_time());
    let violations = comparison_harness(&w1, &w2, &samples, p.tolerance)?;
    let mut checks = vec![CheckRow::le(
        "ordering_violations",
        violations.len() as f64,
        0.0,
        p.sample_paths as u64,
        "sub/supersolution band around the exact solution".into(),
    )];
    if !violations.is_empty() {
        // Keep the witnesses for inspection.
        let mut buf = Vec::new();
        violations[0].witness.to_csv(&mut buf)?;
        fs::write(out_dir.join("violation_witness.csv"), buf)?;
        artifacts.push("violation_witness.csv".into());
    }
    if p.mutation_tests {
        // Corrupt the interior only: the terminal ordering stays intact, so
        // the harness must list located witnesses rather than reject the
        // hypothesis.
        let w1_bad = |q: &Path| handle.eval(q) + 1.0 * (1.0 - q.end_time());
        let witnesses = comparison_harness(&w1_bad, &w2, &samples, p.tolerance)?;
        checks.push(CheckRow::flag(
            "planted_violation_detected",
            !witnesses.is_empty(),
            p.sample_paths as u64,
            format!("{} located witnesses", witnesses.len()),
        ));
    }
    write_json(out_dir, "comparison_report.json", &violations, artifacts)?;
    Ok(checks)
}

// --- stability ----------------------------------------------------------------------------

fn run_stability(
    p: &StabilityParams,
    seed: u64,
    out_dir: &FsPath,
    artifacts: &mut Vec<String>,
) -> Result<Vec<CheckRow>> {
    use rand::Rng;
    let grid = Grid::new(0.0, 1.0, p.steps)?;
    let (target_gen, target_cand) = catalog::heat_type_exact(grid, p.dim);
    let mut r = rng::global_stream(rng::derive_seed(seed, 0x57AB));
    let d = p.dim;
    let gen_samples: Vec<GeneratorSample> = (0..p.sample_paths)
        .map(|_| {
            let mut hess = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in i..d {
                    let v = r.random_range(-1.0..1.0);
                    hess[(i, j)] = v;
                    hess[(j, i)] = v;
                }
            }
            GeneratorSample {
                path: sampling::random_segment(&mut r, grid, d, 1.0),
                r: r.random_range(-1.0..1.0),
                grad: DVector::from_iterator(d, (0..d).map(|_| r.random_range(-1.0..1.0))),
                hess,
            }
        })
        .collect();
    let path_samples =
        residual_sample_paths(rng::derive_seed(seed, 0x57AC), grid, d, p.sample_paths);
    let family: Vec<StabilityMember> = p
        .eps_schedule
        .iter()
        .map(|&eps| {
            let offset = if p.expect_converges { eps } else { 1.0 };
            StabilityMember {
                eps,
                generator: GeneratorHandle::new(move |_, _, _, hess: &DMatrix<f64>| {
                    0.5 * hess.trace() + offset
                }),
                candidate: catalog::heat_type_shifted(grid, d, offset).handle,
            }
        })
        .collect();
    let report = stability_sweep(
        &family,
        &target_gen,
        &target_cand.handle,
        &gen_samples,
        &path_samples,
    );
    write_json(out_dir, "stability_report.json", &report, artifacts)?;
    Ok(vec![CheckRow::flag(
        "uniform_convergence",
        report.converges == p.expect_converges,
        p.sample_paths as u64,
        format!(
            "converges = {}, expected {}",
            report.converges, p.expect_converges
        ),
    )])
}
