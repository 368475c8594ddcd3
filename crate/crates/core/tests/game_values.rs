//! Value-iteration checks against independent oracles.

use ppde_core::catalog::{self, DriftlessPayoff};
use ppde_core::game::{dpp_consistency, regularity_probe, value, ValueKind, ValueOptions};
use ppde_core::path_space::{Grid, Path};

fn grid01(n: usize) -> Grid {
    Grid::new(0.0, 1.0, n).unwrap()
}

/// Exhaustive enumeration over every control sequence of the deterministic
/// bang-bang problem, using the same per-step update as the solver.
fn enumerate_bang_bang(x0: f64, n_steps: usize, dl: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1 << n_steps) {
        let mut x = x0;
        for k in 0..n_steps {
            let u = if mask >> k & 1 == 1 { 1.0 } else { -1.0 };
            x += u * dl;
        }
        let payoff = -x.abs();
        if payoff > best {
            best = payoff;
        }
    }
    best
}

#[test]
fn bang_bang_value_equals_exhaustive_enumeration() {
    let n_steps = 10;
    let grid = grid01(n_steps);
    let spec = catalog::deterministic_bang_bang(grid);
    let x0 = 0.37;
    let initial = Path::constant(grid, &[x0], 0).unwrap();
    let opts = ValueOptions::default();
    let got = value(&spec, &initial, ValueKind::Lower, 0, 0, &opts).unwrap();
    let oracle = enumerate_bang_bang(x0, n_steps, grid.step());
    assert_eq!(got.value, oracle, "exact tree must reproduce enumeration");
    assert_eq!(got.stderr, 0.0);
    // The spectator's order cannot matter.
    let upper = value(&spec, &initial, ValueKind::Upper, 0, 0, &opts).unwrap();
    assert_eq!(upper.value, oracle);
}

#[test]
fn bang_bang_from_nonzero_start_time_and_history() {
    let n_steps = 9;
    let grid = grid01(n_steps);
    let spec = catalog::deterministic_bang_bang(grid);
    // History already walked three steps; only the remaining six are chosen.
    let initial = Path::new(grid, 1, vec![0.5, 0.4, 0.3, 0.45]).unwrap();
    let opts = ValueOptions::default();
    let got = value(&spec, &initial, ValueKind::Lower, 0, 0, &opts).unwrap();
    let oracle = enumerate_bang_bang(0.45, 6, grid.step());
    assert_eq!(got.value, oracle);
}

#[test]
fn driftless_martingale_value_matches_initial_point() {
    let grid = grid01(16);
    let spec = catalog::driftless_brownian(grid, 1, DriftlessPayoff::Linear { a: 2.0 });
    let initial = Path::constant(grid, &[0.3], 0).unwrap();
    let got = value(
        &spec,
        &initial,
        ValueKind::Lower,
        2000,
        11,
        &ValueOptions::default(),
    )
    .unwrap();
    let expect = 2.0 * 0.3;
    assert!(
        (got.value - expect).abs() < 3.0 * got.stderr + 1e-9,
        "{} vs {expect} (se {})",
        got.value,
        got.stderr
    );
    // Terminal surface of the field reproduces phi on linear payoffs.
    let horizon = initial.flat_extend_to_index(16).unwrap();
    let f = got.field.eval(&horizon).unwrap();
    assert!((f - 2.0 * 0.3).abs() < 0.2, "terminal surface {f}");
}

#[test]
fn lq_isaacs_lower_equals_upper_within_noise() {
    let grid = grid01(20);
    let spec = catalog::lq_isaacs_separable(grid);
    let initial = Path::constant(grid, &[0.4], 0).unwrap();
    let opts = ValueOptions::default();
    let lower = value(&spec, &initial, ValueKind::Lower, 3000, 17, &opts).unwrap();
    let upper = value(&spec, &initial, ValueKind::Upper, 3000, 17, &opts).unwrap();
    let tol = 3.0 * (lower.stderr + upper.stderr) + 1e-9;
    assert!(
        (lower.value - upper.value).abs() < tol,
        "lower {} upper {} tol {tol}",
        lower.value,
        upper.value
    );
}

#[test]
fn bilinear_game_separates_lower_and_upper() {
    let grid = grid01(12);
    let spec = catalog::bilinear_non_isaacs(grid);
    let initial = Path::constant(grid, &[0.0], 0).unwrap();
    let opts = ValueOptions::default();
    let lower = value(&spec, &initial, ValueKind::Lower, 2000, 23, &opts).unwrap();
    let upper = value(&spec, &initial, ValueKind::Upper, 2000, 23, &opts).unwrap();
    // Per-step gap of the u*v driver on {-1,1}^2 integrates to about 2.
    assert!(lower.value <= upper.value + 3.0 * (lower.stderr + upper.stderr));
    assert!(
        upper.value - lower.value > 1.0,
        "gap {} unexpectedly small",
        upper.value - lower.value
    );
}

#[test]
fn dpp_recomposition_driftless_and_lq() {
    let grid = grid01(16);
    let initial = Path::constant(grid, &[0.2], 0).unwrap();
    for delta in [0.25, 0.5] {
        let spec = catalog::driftless_brownian(grid, 1, DriftlessPayoff::Linear { a: 1.0 });
        let rep = dpp_consistency(
            &spec,
            &initial,
            delta,
            ValueKind::Lower,
            2000,
            31,
            &ValueOptions::default(),
        )
        .unwrap();
        assert!(rep.pass, "driftless delta {delta}: {rep:?}");

        let lq = catalog::lq_isaacs_separable(grid);
        let rep = dpp_consistency(
            &lq,
            &initial,
            delta,
            ValueKind::Lower,
            2000,
            37,
            &ValueOptions::default(),
        )
        .unwrap();
        assert!(rep.pass, "lq delta {delta}: {rep:?}");
    }
}

#[test]
fn dpp_recomposition_exact_for_deterministic_problem() {
    let grid = grid01(10);
    let spec = catalog::deterministic_bang_bang(grid);
    let initial = Path::constant(grid, &[0.37], 0).unwrap();
    let rep = dpp_consistency(
        &spec,
        &initial,
        0.5,
        ValueKind::Lower,
        0,
        0,
        &ValueOptions::default(),
    )
    .unwrap();
    assert_eq!(rep.discrepancy, 0.0, "{rep:?}");
}

#[test]
fn regularity_probe_exponent_and_lipschitz() {
    let grid = grid01(16);
    let spec = catalog::driftless_brownian(grid, 1, DriftlessPayoff::AbsTerminal);
    // Hoelder probe at the kink of |.|: value = c sqrt(T - s).
    let at_zero = Path::constant(grid, &[0.0], 0).unwrap();
    let rep = regularity_probe(
        &spec,
        &at_zero,
        ValueKind::Lower,
        4000,
        41,
        &ValueOptions::default(),
    )
    .unwrap();
    assert!(
        rep.holder_exponent > 0.3 && rep.holder_exponent < 0.7,
        "exponent {}",
        rep.holder_exponent
    );

    // Lipschitz ratios away from the kink stay stable across scales.
    let at_one = Path::constant(grid, &[1.0], 0).unwrap();
    let rep = regularity_probe(
        &spec,
        &at_one,
        ValueKind::Lower,
        4000,
        43,
        &ValueOptions::default(),
    )
    .unwrap();
    assert!(
        rep.lipschitz_spread < 2.0,
        "spread {} ratios {:?}",
        rep.lipschitz_spread,
        rep.lipschitz
    );
    assert!(rep.growth_spread.is_finite());
}

#[test]
fn q_substeps_refine_the_one_step_integration() {
    // Noiseless, control-free, q = r y: the tree value is the explicit
    // Euler product; substeps drive it toward the exponential.
    use nalgebra::{DMatrix, DVector};
    use ppde_core::bsde::BsdeDriver;
    use ppde_core::dynamics::{ControlGrid, SdeCoefficients};
    use ppde_core::game::GameSpec;

    let grid = grid01(10);
    let mk_spec = || GameSpec {
        coeffs: SdeCoefficients::new(
            1,
            0,
            |_, _, _| DVector::zeros(1),
            |_, _, _| DMatrix::zeros(1, 0),
        )
        .with_lipschitz_hint(0.0),
        driver: BsdeDriver::new(|_, y, _, _, _| 0.5 * y, |_| 1.0).with_lipschitz_hint(0.5),
        u_grid: ControlGrid::singleton(0.0),
        v_grid: ControlGrid::singleton(0.0),
        grid,
    };
    let initial = Path::constant(grid, &[0.0], 0).unwrap();
    let exact = 0.5f64.exp();
    let coarse_opts = ValueOptions::default();
    let v1 = value(&mk_spec(), &initial, ValueKind::Lower, 0, 0, &coarse_opts).unwrap();
    let fine_opts = ValueOptions {
        q_sub_steps: 32,
        ..ValueOptions::default()
    };
    let v32 = value(&mk_spec(), &initial, ValueKind::Lower, 0, 0, &fine_opts).unwrap();
    assert!(
        (v32.value - exact).abs() < (v1.value - exact).abs(),
        "substeps must refine: {} vs {} (exact {exact})",
        v32.value,
        v1.value
    );
    assert!((v32.value - exact).abs() < 1e-3);
}

#[test]
fn dpp_recomposition_upper_kind() {
    let grid = grid01(16);
    let spec = catalog::lq_isaacs_separable(grid);
    let initial = Path::constant(grid, &[0.2], 0).unwrap();
    let rep = dpp_consistency(
        &spec,
        &initial,
        0.5,
        ValueKind::Upper,
        2000,
        53,
        &ValueOptions::default(),
    )
    .unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn value_rejects_mismatched_initial_dimension() {
    let grid = grid01(8);
    let spec = catalog::driftless_brownian(grid, 2, DriftlessPayoff::AbsTerminal);
    let initial = Path::constant(grid, &[0.0], 0).unwrap(); // d = 1 vs spec d = 2
    assert!(value(&spec, &initial, ValueKind::Lower, 200, 1, &ValueOptions::default()).is_err());
}

#[test]
fn dpp_rejects_off_grid_delta() {
    let grid = grid01(8);
    let spec = catalog::driftless_brownian(grid, 1, DriftlessPayoff::Linear { a: 1.0 });
    let initial = Path::constant(grid, &[0.0], 0).unwrap();
    let err = dpp_consistency(
        &spec,
        &initial,
        0.3333,
        ValueKind::Lower,
        200,
        1,
        &ValueOptions::default(),
    );
    assert!(err.is_err());
}

#[test]
fn tree_budget_guards_deterministic_blowup() {
    let grid = Grid::new(0.0, 1.0, 40).unwrap(); // 2^40 leaves
    let spec = catalog::deterministic_bang_bang(grid);
    let initial = Path::constant(grid, &[0.0], 0).unwrap();
    let err = value(&spec, &initial, ValueKind::Lower, 0, 0, &ValueOptions::default());
    assert!(matches!(
        err,
        Err(ppde_core::error::Error::TreeTooLarge { .. })
    ));
}

#[test]
fn game_engine_carries_z_through_the_driver() {
    // Singleton controls, q = theta z, phi = X(T): the value shifts the
    // martingale by theta (T - t), pinning the per-pair Z surfaces of the
    // backward induction.
    use nalgebra::{DMatrix, DVector};
    use ppde_core::bsde::BsdeDriver;
    use ppde_core::dynamics::{ControlGrid, SdeCoefficients};
    use ppde_core::game::GameSpec;

    let grid = grid01(16);
    let theta = 0.4;
    let x0 = 0.3;
    let spec = GameSpec {
        coeffs: SdeCoefficients::new(
            1,
            1,
            |_, _, _| DVector::zeros(1),
            |_, _, _| DMatrix::identity(1, 1),
        )
        .with_lipschitz_hint(0.0),
        driver: BsdeDriver::new(
            move |_, _, z: &[f64], _, _| theta * z[0],
            |p: &Path| p.terminal()[0],
        )
        .with_lipschitz_hint(theta),
        u_grid: ControlGrid::singleton(0.0),
        v_grid: ControlGrid::singleton(0.0),
        grid,
    };
    let initial = Path::constant(grid, &[x0], 0).unwrap();
    let got = value(&spec, &initial, ValueKind::Lower, 4000, 61, &ValueOptions::default()).unwrap();
    let expect = x0 + theta;
    let tol = 3.0 * got.stderr + 0.5 * theta / 16.0 + 0.02;
    assert!(
        (got.value - expect).abs() < tol,
        "{} vs {expect} (se {})",
        got.value,
        got.stderr
    );
}

#[test]
fn running_max_payoff_brackets() {
    // Genuinely path-dependent payoff sup_s |X(s)|: the value is squeezed
    // between the initial running max and 1 + E sup |W| (~1.9 over [0,1]).
    let grid = grid01(32);
    let spec = catalog::driftless_brownian(grid, 1, DriftlessPayoff::RunningMax);
    let initial = Path::constant(grid, &[1.0], 0).unwrap();
    let got = value(&spec, &initial, ValueKind::Lower, 4000, 71, &ValueOptions::default()).unwrap();
    let lower_bound = 1.0 - 3.0 * got.stderr - 0.02;
    let upper_bound = 1.0 + 1.2 + 3.0 * got.stderr + 0.1;
    assert!(
        got.value > lower_bound && got.value < upper_bound,
        "value {} outside [{lower_bound}, {upper_bound}]",
        got.value
    );
    // Monotone in the starting level.
    let higher = Path::constant(grid, &[2.0], 0).unwrap();
    let got2 = value(&spec, &higher, ValueKind::Lower, 4000, 71, &ValueOptions::default()).unwrap();
    assert!(got2.value > got.value);
}
