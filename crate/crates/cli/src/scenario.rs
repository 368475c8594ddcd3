//! Scenario files: one TOML document per run.
//!
//! The format is versioned, the seed is mandatory, every tolerance is
//! explicit in the file (no hidden defaults in persisted runs), and unknown
//! keys are rejected at both the top level and inside `[params]`.

use serde::{Deserialize, Serialize};

use ppde_core::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// A parsed scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// Output directory; `--out` overrides.
    pub output: Option<String>,
    pub command: CommandSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    seed: u64,
    output: Option<String>,
    command: String,
    params: toml::Table,
}

/// Command payloads, one per scenario kind.
#[derive(Debug, Clone, Serialize)]
pub enum CommandSpec {
    GaugeVerify(GaugeVerifyParams),
    ItoCheck(ItoCheckParams),
    Ebp(EbpParams),
    SdeMoments(SdeMomentsParams),
    BsdeSolve(BsdeSolveParams),
    GameValue(GameValueParams),
    Isaacs(IsaacsParams),
    DppCheck(DppCheckParams),
    Residual(ResidualParams),
    Comparison(ComparisonParams),
    Stability(StabilityParams),
}

impl CommandSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            CommandSpec::GaugeVerify(_) => "gauge-verify",
            CommandSpec::ItoCheck(_) => "ito-check",
            CommandSpec::Ebp(_) => "ebp",
            CommandSpec::SdeMoments(_) => "sde-moments",
            CommandSpec::BsdeSolve(_) => "bsde-solve",
            CommandSpec::GameValue(_) => "game-value",
            CommandSpec::Isaacs(_) => "isaacs",
            CommandSpec::DppCheck(_) => "dpp-check",
            CommandSpec::Residual(_) => "residual",
            CommandSpec::Comparison(_) => "comparison",
            CommandSpec::Stability(_) => "stability",
        }
    }

    pub fn params_table(&self) -> toml::Table {
        let value = match self {
            CommandSpec::GaugeVerify(p) => toml::Value::try_from(p),
            CommandSpec::ItoCheck(p) => toml::Value::try_from(p),
            CommandSpec::Ebp(p) => toml::Value::try_from(p),
            CommandSpec::SdeMoments(p) => toml::Value::try_from(p),
            CommandSpec::BsdeSolve(p) => toml::Value::try_from(p),
            CommandSpec::GameValue(p) => toml::Value::try_from(p),
            CommandSpec::Isaacs(p) => toml::Value::try_from(p),
            CommandSpec::DppCheck(p) => toml::Value::try_from(p),
            CommandSpec::Residual(p) => toml::Value::try_from(p),
            CommandSpec::Comparison(p) => toml::Value::try_from(p),
            CommandSpec::Stability(p) => toml::Value::try_from(p),
        };
        match value.expect("params serialize") {
            toml::Value::Table(t) => t,
            _ => unreachable!("params are structs"),
        }
    }
}

/// Gauge-bound sweep over random paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeVerifyParams {
    pub paths_per_case: usize,
    pub path_steps: usize,
    pub dims: Vec<usize>,
    pub orders: Vec<u32>,
    /// Allowed violations (the proven bounds are exact: 0).
    pub max_violations: usize,
}

/// Functional Ito residual refinement study.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItoCheckParams {
    pub samples: usize,
    pub coarse_steps: usize,
    pub fine_steps: usize,
    /// Required RMS shrink factor coarse/fine.
    pub min_ratio: f64,
    /// Absolute bound on the terminal-linear residual (exact: 0).
    pub linear_abs_tol: f64,
}

/// Perturbed-maximization certification on random finite domains.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EbpParams {
    pub domains: usize,
    pub domain_size: usize,
    pub path_steps: usize,
    pub epsilon: f64,
    pub delta0: f64,
    /// Also run the corruption checks (must all be detected).
    pub mutation_tests: bool,
}

/// Moment estimates of the state equation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeMomentsParams {
    pub entry: String,
    pub dim: usize,
    pub steps: usize,
    pub samples: usize,
    pub moment_orders: Vec<u32>,
    /// Relative band around the target slope p/2.
    pub slope_band: f64,
    /// Standard-error multiple for the Brownian variance identity.
    pub se_factor: f64,
    /// Max/min spread allowed across stability scales.
    pub stability_spread: f64,
}

/// Analytic backward-equation cases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeSolveParams {
    pub steps: usize,
    pub samples: usize,
    pub payoff: f64,
    pub driver_constant: f64,
    pub driver_linear_rate: f64,
    pub se_factor: f64,
    /// Absolute tolerance for the exact constant-payoff case.
    pub exact_abs_tol: f64,
    /// Bias budget per unit step for the linear-driver case.
    pub bias_budget_per_step: f64,
}

/// DPP value computation on a catalog game.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameValueParams {
    pub entry: String,
    pub steps: usize,
    pub samples: usize,
    pub initial_value: f64,
    pub se_factor: f64,
    /// Require |lower - upper| within noise (separable games).
    pub expect_value_exists: bool,
}

/// Hamiltonian gap sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsaacsParams {
    pub entry: String,
    pub points: usize,
    pub steps: usize,
    pub tolerance: f64,
    /// Whether the condition is expected to hold.
    pub expect_holds: bool,
}

/// One-step DPP recomposition check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppCheckParams {
    pub entry: String,
    pub steps: usize,
    pub samples: usize,
    pub deltas: Vec<f64>,
    pub initial_value: f64,
    pub se_factor: f64,
}

/// Classical residual and role classification on the exact problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualParams {
    pub dim: usize,
    pub steps: usize,
    pub sample_paths: usize,
    pub abs_tol: f64,
    /// Shift used for the sub/supersolution classification checks.
    pub shift: f64,
}

/// Sub/supersolution ordering harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonParams {
    pub dim: usize,
    pub steps: usize,
    pub sample_paths: usize,
    pub band: f64,
    pub tolerance: f64,
    /// Also check that a planted violation is detected.
    pub mutation_tests: bool,
}

/// Uniform-convergence sweep for approximating families.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityParams {
    pub dim: usize,
    pub steps: usize,
    pub sample_paths: usize,
    pub eps_schedule: Vec<f64>,
    pub expect_converges: bool,
}

/// Parse a scenario document.
pub fn parse(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            raw.schema_version
        )));
    }
    let params = toml::Value::Table(raw.params);
    let command = match raw.command.as_str() {
        "gauge-verify" => CommandSpec::GaugeVerify(params.try_into().map_err(param_err)?),
        "ito-check" => CommandSpec::ItoCheck(params.try_into().map_err(param_err)?),
        "ebp" => CommandSpec::Ebp(params.try_into().map_err(param_err)?),
        "sde-moments" => CommandSpec::SdeMoments(params.try_into().map_err(param_err)?),
        "bsde-solve" => CommandSpec::BsdeSolve(params.try_into().map_err(param_err)?),
        "game-value" => CommandSpec::GameValue(params.try_into().map_err(param_err)?),
        "isaacs" => CommandSpec::Isaacs(params.try_into().map_err(param_err)?),
        "dpp-check" => CommandSpec::DppCheck(params.try_into().map_err(param_err)?),
        "residual" => CommandSpec::Residual(params.try_into().map_err(param_err)?),
        "comparison" => CommandSpec::Comparison(params.try_into().map_err(param_err)?),
        "stability" => CommandSpec::Stability(params.try_into().map_err(param_err)?),
        other => {
            return Err(Error::Parse(format!("unknown command '{other}'")));
        }
    };
    Ok(Scenario {
        schema_version: raw.schema_version,
        name: raw.name,
        seed: raw.seed,
        output: raw.output,
        command,
    })
}

fn param_err(e: toml::de::Error) -> Error {
    Error::Parse(format!("in [params]: {e}"))
}

/// Serialize a scenario back to TOML (used by the catalog emitter and the
/// round-trip tests).
pub fn to_toml(s: &Scenario) -> String {
    let mut doc = toml::Table::new();
    doc.insert("schema_version".into(), (s.schema_version as i64).into());
    doc.insert("name".into(), s.name.clone().into());
    doc.insert("seed".into(), (s.seed as i64).into());
    if let Some(out) = &s.output {
        doc.insert("output".into(), out.clone().into());
    }
    doc.insert("command".into(), s.command.kind().into());
    doc.insert(
        "params".into(),
        toml::Value::Table(s.command.params_table()),
    );
    toml::to_string(&doc).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
schema_version = 1
name = "gauge sweep"
command = "gauge-verify"
seed = 7

[params]
paths_per_case = 100
path_steps = 16
dims = [1, 2]
orders = [2, 3]
max_violations = 0
"#;

    #[test]
    fn parses_and_round_trips() {
        let s = parse(GOOD).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.command.kind(), "gauge-verify");
        let text = to_toml(&s);
        let again = parse(&text).unwrap();
        assert_eq!(to_toml(&again), text);
    }

    #[test]
    fn rejects_unknown_top_level_and_param_keys() {
        let bad = GOOD.replace("name =", "nmae =");
        assert!(parse(&bad).is_err());
        let bad = GOOD.replace("max_violations = 0", "max_violations = 0\nbogus = 1");
        let err = parse(&bad).unwrap_err().to_string();
        assert!(err.contains("params"), "{err}");
    }

    #[test]
    fn rejects_wrong_schema_and_missing_seed() {
        let bad = GOOD.replace("schema_version = 1", "schema_version = 2");
        assert!(parse(&bad).is_err());
        let bad = GOOD.replace("seed = 7\n", "");
        assert!(parse(&bad).is_err());
    }
}
