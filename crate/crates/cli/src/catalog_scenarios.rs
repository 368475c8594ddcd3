//! Ready-made scenario files for every catalog entry.

use crate::scenario::{
    BsdeSolveParams, CommandSpec, ComparisonParams, DppCheckParams, EbpParams, GameValueParams,
    GaugeVerifyParams, IsaacsParams, ItoCheckParams, ResidualParams, Scenario, SdeMomentsParams,
    StabilityParams, SCHEMA_VERSION,
};

fn scenario(name: &str, seed: u64, command: CommandSpec) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        seed,
        output: None,
        command,
    }
}

/// Default scenarios, one or more per catalog entry plus the module sweeps;
/// every entry round-trips through the TOML form.
pub fn all() -> Vec<(String, Scenario)> {
    vec![
        (
            "gauge_verify.toml".into(),
            scenario(
                "gauge bound sweep",
                101,
                CommandSpec::GaugeVerify(GaugeVerifyParams {
                    paths_per_case: 10_000,
                    path_steps: 32,
                    dims: vec![1, 2, 3],
                    orders: vec![2, 3, 4],
                    max_violations: 0,
                }),
            ),
        ),
        (
            "ito_check.toml".into(),
            scenario(
                "functional Ito refinement",
                102,
                CommandSpec::ItoCheck(ItoCheckParams {
                    samples: 10_000,
                    coarse_steps: 256,
                    fine_steps: 1024,
                    min_ratio: 1.5,
                    linear_abs_tol: 0.0,
                }),
            ),
        ),
        (
            "ebp_certify.toml".into(),
            scenario(
                "perturbed maximization certificates",
                103,
                CommandSpec::Ebp(EbpParams {
                    domains: 50,
                    domain_size: 500,
                    path_steps: 8,
                    epsilon: 0.1,
                    delta0: 1.0,
                    mutation_tests: true,
                }),
            ),
        ),
        (
            "driftless_moments.toml".into(),
            scenario(
                "driftless-brownian moment estimates",
                104,
                CommandSpec::SdeMoments(SdeMomentsParams {
                    entry: "driftless-brownian".into(),
                    dim: 1,
                    steps: 64,
                    samples: 10_000,
                    moment_orders: vec![2, 4],
                    slope_band: 0.2,
                    se_factor: 3.0,
                    stability_spread: 2.0,
                }),
            ),
        ),
        (
            "bsde_analytic.toml".into(),
            scenario(
                "analytic backward-equation cases",
                105,
                CommandSpec::BsdeSolve(BsdeSolveParams {
                    steps: 64,
                    samples: 4000,
                    payoff: 7.0,
                    driver_constant: 0.8,
                    driver_linear_rate: 0.5,
                    se_factor: 3.0,
                    exact_abs_tol: 1e-10,
                    bias_budget_per_step: 3.0,
                }),
            ),
        ),
        (
            "bang_bang_value.toml".into(),
            scenario(
                "deterministic-bang-bang value",
                106,
                CommandSpec::GameValue(GameValueParams {
                    entry: "deterministic-bang-bang".into(),
                    steps: 10,
                    samples: 0,
                    initial_value: 0.37,
                    se_factor: 3.0,
                    expect_value_exists: true,
                }),
            ),
        ),
        (
            "lq_value.toml".into(),
            scenario(
                "lq-isaacs-separable value",
                107,
                CommandSpec::GameValue(GameValueParams {
                    entry: "lq-isaacs-separable".into(),
                    steps: 20,
                    samples: 4000,
                    initial_value: 0.4,
                    se_factor: 3.0,
                    expect_value_exists: true,
                }),
            ),
        ),
        (
            "bilinear_gap.toml".into(),
            scenario(
                "bilinear-non-isaacs gap",
                108,
                CommandSpec::Isaacs(IsaacsParams {
                    entry: "bilinear-non-isaacs".into(),
                    points: 200,
                    steps: 16,
                    tolerance: 1e-9,
                    expect_holds: false,
                }),
            ),
        ),
        (
            "lq_isaacs_holds.toml".into(),
            scenario(
                "lq-isaacs-separable Hamiltonian gap",
                109,
                CommandSpec::Isaacs(IsaacsParams {
                    entry: "lq-isaacs-separable".into(),
                    points: 200,
                    steps: 16,
                    tolerance: 1e-9,
                    expect_holds: true,
                }),
            ),
        ),
        (
            "dpp_driftless.toml".into(),
            scenario(
                "driftless DPP recomposition",
                110,
                CommandSpec::DppCheck(DppCheckParams {
                    entry: "driftless-brownian".into(),
                    steps: 16,
                    samples: 2000,
                    deltas: vec![0.25, 0.5],
                    initial_value: 0.2,
                    se_factor: 3.0,
                }),
            ),
        ),
        (
            "dpp_lq.toml".into(),
            scenario(
                "lq DPP recomposition",
                114,
                CommandSpec::DppCheck(DppCheckParams {
                    entry: "lq-isaacs-separable".into(),
                    steps: 16,
                    samples: 2000,
                    deltas: vec![0.25, 0.5],
                    initial_value: 0.2,
                    se_factor: 3.0,
                }),
            ),
        ),
        (
            "heat_residual.toml".into(),
            scenario(
                "heat-type-exact residual and classification",
                111,
                CommandSpec::Residual(ResidualParams {
                    dim: 2,
                    steps: 16,
                    sample_paths: 100,
                    abs_tol: 1e-8,
                    shift: 0.25,
                }),
            ),
        ),
        (
            "heat_comparison.toml".into(),
            scenario(
                "comparison harness on the exact band",
                112,
                CommandSpec::Comparison(ComparisonParams {
                    dim: 1,
                    steps: 16,
                    sample_paths: 100,
                    band: 0.1,
                    tolerance: 1e-12,
                    mutation_tests: true,
                }),
            ),
        ),
        (
            "stability_sweep.toml".into(),
            scenario(
                "uniform-convergence stability sweep",
                113,
                CommandSpec::Stability(StabilityParams {
                    dim: 1,
                    steps: 16,
                    sample_paths: 50,
                    eps_schedule: vec![0.5, 0.25, 0.125, 0.0625],
                    expect_converges: true,
                }),
            ),
        ),
    ]
}
