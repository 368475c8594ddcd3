//! Residual checkers and harnesses for the path-dependent equation
//! `dt V + F(p, V, dx V, dxx V) = 0` with terminal data `phi`.
//!
//! Sub/supersolution verification for genuinely non-smooth candidates is
//! undecidable numerically over the full test-function classes; the module
//! restricts itself to (a) smooth candidates, where classical and viscosity
//! notions coincide, and (b) the penalized probe, which builds the
//! gauge-penalized smooth test functionals that comparison arguments rely
//! on and certifies their maximality over a finite domain.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional_calculus::FunctionalHandle;
use crate::gauge::{self, GaugeOrder};
use crate::path_space::Path;
use crate::variational::{self, EbpReport, EbpResult, FiniteDomain};

type GeneratorFn = dyn Fn(&Path, f64, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync;

/// The nonlinearity `F(path, r, grad, hess)` with its declared structure
/// hints (checked empirically where possible, otherwise metadata).
pub struct GeneratorHandle {
    f: Box<GeneratorFn>,
    pub monotonicity_hint: f64,
    pub structure_hint: f64,
    pub modulus: String,
}

impl GeneratorHandle {
    pub fn new(
        f: impl Fn(&Path, f64, &DVector<f64>, &DMatrix<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Box::new(f),
            monotonicity_hint: 0.0,
            structure_hint: 0.0,
            modulus: String::new(),
        }
    }

    pub fn with_hints(mut self, nu: f64, m_f: f64, modulus: &str) -> Self {
        self.monotonicity_hint = nu;
        self.structure_hint = m_f;
        self.modulus = modulus.to_string();
        self
    }

    pub fn eval(&self, p: &Path, r: f64, grad: &DVector<f64>, hess: &DMatrix<f64>) -> f64 {
        (self.f)(p, r, grad, hess)
    }
}

/// Declared role of a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Solution,
    Subsolution,
    Supersolution,
}

/// A candidate solution: the functional (ideally with supplied derivatives),
/// its terminal data, and the role it claims.
pub struct CandidateSolution {
    pub handle: FunctionalHandle,
    pub terminal: Box<dyn Fn(&Path) -> f64 + Send + Sync>,
    pub role: Role,
}

impl CandidateSolution {
    pub fn new(
        handle: FunctionalHandle,
        terminal: impl Fn(&Path) -> f64 + Send + Sync + 'static,
        role: Role,
    ) -> Self {
        Self {
            handle,
            terminal: Box::new(terminal),
            role,
        }
    }
}

/// `dt V + F(p, V, dx V, dxx V)` at one segment, supplied derivatives when
/// present, numeric Dupire derivatives otherwise. Rejected at the horizon.
pub fn classical_residual(f: &GeneratorHandle, cand: &CandidateSolution, p: &Path) -> Result<f64> {
    if p.at_horizon() {
        return Err(Error::AtHorizon);
    }
    let dt = cand.handle.dt_at(p)?;
    let grad = cand.handle.dx_at(p)?;
    let hess = cand.handle.dxx_at(p)?;
    Ok(dt + f.eval(p, cand.handle.eval(p), &grad, &hess))
}

/// Sign classification of residuals across samples.
#[derive(Debug, Clone, Serialize)]
pub struct ConsistencyReport {
    pub classified: Option<Role>,
    pub min_residual: f64,
    pub max_residual: f64,
    pub terminal_ok: bool,
    /// Witness sample indices when residuals carry both signs.
    pub witnesses: Vec<usize>,
}

/// Classify a smooth candidate from residual signs: nonnegative everywhere
/// makes a subsolution, nonpositive a supersolution, both a solution. The
/// terminal inequality against `phi` is checked on the horizon extensions
/// of the samples.
pub fn consistency_check(
    f: &GeneratorHandle,
    cand: &CandidateSolution,
    samples: &[Path],
    tolerance: f64,
) -> Result<ConsistencyReport> {
    if !cand.handle.has_derivatives() {
        return Err(Error::Precondition(
            "consistency check needs supplied derivatives".into(),
        ));
    }
    let residuals: Vec<f64> = samples
        .iter()
        .map(|p| classical_residual(f, cand, p))
        .collect::<Result<_>>()?;
    let min_r = residuals.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_r = residuals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let is_sub = min_r >= -tolerance;
    let is_super = max_r <= tolerance;
    let mut terminal_ok = true;
    for p in samples {
        let horizon = p.flat_extend_to_index(p.grid().n_steps())?;
        let v = cand.handle.eval(&horizon);
        let phi = (cand.terminal)(&horizon);
        let ok = match (is_sub, is_super) {
            (true, true) => (v - phi).abs() <= tolerance.max(1e-9 * (1.0 + phi.abs())),
            (true, false) => v <= phi + tolerance,
            (false, true) => v >= phi - tolerance,
            (false, false) => true,
        };
        terminal_ok &= ok;
    }
    let mut witnesses = Vec::new();
    let classified = match (is_sub, is_super) {
        (true, true) => Some(Role::Solution),
        (true, false) => Some(Role::Subsolution),
        (false, true) => Some(Role::Supersolution),
        (false, false) => {
            if let Some(i) = residuals.iter().position(|&r| r > tolerance) {
                witnesses.push(i);
            }
            if let Some(i) = residuals.iter().position(|&r| r < -tolerance) {
                witnesses.push(i);
            }
            None
        }
    };
    Ok(ConsistencyReport {
        classified,
        min_residual: min_r,
        max_residual: max_r,
        terminal_ok,
        witnesses,
    })
}

/// A sampled point where the ordering `w1 <= w2` failed.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingViolation {
    pub index: usize,
    pub w1: f64,
    pub w2: f64,
    pub excess: f64,
    pub witness: Path,
}

/// Numerical comparison harness: given a declared subsolution `w1` and
/// supersolution `w2` with ordered terminal data, list every sampled point
/// where `w1 > w2 + tolerance` (expected empty when the hypotheses hold).
/// Unordered terminal data is a hypothesis failure, not a counterexample.
pub fn comparison_harness(
    w1: &dyn Fn(&Path) -> f64,
    w2: &dyn Fn(&Path) -> f64,
    samples: &[Path],
    tolerance: f64,
) -> Result<Vec<OrderingViolation>> {
    for p in samples {
        let horizon = p.flat_extend_to_index(p.grid().n_steps())?;
        let a = w1(&horizon);
        let b = w2(&horizon);
        if a > b + tolerance {
            return Err(Error::Precondition(format!(
                "terminal ordering violated: w1 = {a} > w2 = {b} at the horizon"
            )));
        }
    }
    let mut violations = Vec::new();
    for (i, p) in samples.iter().enumerate() {
        let a = w1(p);
        let b = w2(p);
        if a > b + tolerance {
            violations.push(OrderingViolation {
                index: i,
                w1: a,
                w2: b,
                excess: a - b,
                witness: p.clone(),
            });
        }
    }
    Ok(violations)
}

/// One member of an approximating family.
pub struct StabilityMember {
    pub eps: f64,
    pub generator: GeneratorHandle,
    pub candidate: FunctionalHandle,
}

/// Sampled argument tuples for the generator side of the sweep.
pub struct GeneratorSample {
    pub path: Path,
    pub r: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    pub eps: f64,
    pub generator_sup: f64,
    pub candidate_sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    /// Rows sorted by decreasing epsilon.
    pub rows: Vec<StabilityRow>,
    /// The sup-discrepancies shrink substantially along the schedule.
    pub converges: bool,
}

/// Sup-discrepancies of an approximating family against the target pair,
/// per epsilon, over the sampled tuples.
pub fn stability_sweep(
    family: &[StabilityMember],
    target_generator: &GeneratorHandle,
    target_candidate: &FunctionalHandle,
    generator_samples: &[GeneratorSample],
    path_samples: &[Path],
) -> StabilityReport {
    let mut rows: Vec<StabilityRow> = family
        .iter()
        .map(|m| {
            let generator_sup = generator_samples
                .iter()
                .map(|s| {
                    let a = m.generator.eval(&s.path, s.r, &s.grad, &s.hess);
                    let b = target_generator.eval(&s.path, s.r, &s.grad, &s.hess);
                    (a - b).abs()
                })
                .fold(0.0f64, f64::max);
            let candidate_sup = path_samples
                .iter()
                .map(|p| (m.candidate.eval(p) - target_candidate.eval(p)).abs())
                .fold(0.0f64, f64::max);
            StabilityRow {
                eps: m.eps,
                generator_sup,
                candidate_sup,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.eps.partial_cmp(&a.eps).unwrap());
    let converges = rows.len() >= 2 && {
        let first = &rows[0];
        let last = &rows[rows.len() - 1];
        last.generator_sup + last.candidate_sup
            < 0.5 * (first.generator_sup + first.candidate_sup) + 1e-12
    };
    StabilityReport { rows, converges }
}

/// The gauge-penalty part of a probe-built test functional:
/// `bar Upsilon_0(., anchor) + sum_i delta_i bar Upsilon_0(center_i, .)`.
/// Closed-form derivatives are valid at segments whose end time is
/// later-or-equal to every center's.
pub struct PenaltyFunctional {
    anchor: Path,
    centers: Vec<(Path, f64)>,
    order: GaugeOrder,
}

impl PenaltyFunctional {
    pub fn eval(&self, p: &Path) -> Result<f64> {
        let mut v = gauge::upsilon_bar0(p, &self.anchor, self.order)?;
        for (c, w) in &self.centers {
            v += w * gauge::upsilon_bar0(c, p, self.order)?;
        }
        Ok(v)
    }

    pub fn dt_at(&self, p: &Path) -> Result<f64> {
        self.check_times(p)?;
        let mut v = 2.0 * (p.end_time() - self.anchor.end_time());
        for (c, w) in &self.centers {
            v += w * 2.0 * (p.end_time() - c.end_time());
        }
        Ok(v)
    }

    pub fn dx_at(&self, p: &Path) -> Result<DVector<f64>> {
        self.check_times(p)?;
        let mut g = gauge::upsilon_grad(&p.aligned_difference(&self.anchor)?, self.order);
        for (c, w) in &self.centers {
            g += gauge::upsilon_grad(&p.aligned_difference(c)?, self.order) * *w;
        }
        Ok(g)
    }

    pub fn dxx_at(&self, p: &Path) -> Result<DMatrix<f64>> {
        self.check_times(p)?;
        let mut h = gauge::upsilon_hess(&p.aligned_difference(&self.anchor)?, self.order);
        for (c, w) in &self.centers {
            h += gauge::upsilon_hess(&p.aligned_difference(c)?, self.order) * *w;
        }
        Ok(h)
    }

    fn check_times(&self, p: &Path) -> Result<()> {
        let t = p.end_index();
        if t < self.anchor.end_index() || self.centers.iter().any(|(c, _)| c.end_index() > t) {
            return Err(Error::Precondition(
                "penalty derivatives need end time at or after every center".into(),
            ));
        }
        Ok(())
    }

    pub fn centers(&self) -> &[(Path, f64)] {
        &self.centers
    }

    pub fn anchor(&self) -> &Path {
        &self.anchor
    }
}

/// Result of the penalized test-functional probe.
pub struct ProbeResult {
    /// The certified maximizer of `w - base - penalties` over the domain.
    pub point: Path,
    /// Penalty part of the touching test functional; the full test
    /// functional is `base + penalty`.
    pub penalty: PenaltyFunctional,
    pub ebp: EbpResult,
    pub report: EbpReport,
    /// Penalty derivative magnitudes at the point obey the gauge bounds
    /// `6m (.)^{2m-1}` and `6m(6m-1) (.)^{2m-2}`.
    pub penalty_bounds_ok: bool,
}

/// Build a gauge-penalized smooth test functional touching `w - base` from
/// above at a certified maximizer over the finite domain: the executable
/// analog of membership in the upper test class. The start point is the
/// enumerated argmax of the penalized objective, so any positive epsilon
/// satisfies the almost-maximizer precondition.
pub fn penalized_test_probe(
    w: &FunctionalHandle,
    base: &FunctionalHandle,
    anchor: &Path,
    domain: &FiniteDomain,
    epsilon: f64,
) -> Result<ProbeResult> {
    let order = GaugeOrder::default();
    let objective = |p: &Path| -> f64 {
        w.eval(p) - base.eval(p) - gauge::upsilon_bar0(p, anchor, order).unwrap_or(f64::INFINITY)
    };
    let values: Vec<f64> = domain.points().iter().map(&objective).collect();
    let start = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Precondition("empty domain".into()))?;

    let lambda = variational::default_gauge();
    let ebp = variational::ebp_maximize_fn(&objective, &lambda, start, epsilon, 1.0, domain)?;
    let report = variational::verify_ebp_fn(&ebp, &objective, &lambda, domain);

    let centers: Vec<(Path, f64)> = ebp
        .perturbation_centers
        .iter()
        .map(|c| (c.path.clone(), c.weight))
        .collect();
    let penalty = PenaltyFunctional {
        anchor: anchor.clone(),
        centers,
        order,
    };

    // Gauge bounds on the individual penalty derivatives at the point.
    let mf = order.m() as f64;
    let two_m = 2 * order.m() as i32;
    let mut ok = true;
    let mut check_pair = |a: &Path, b: &Path| -> Result<()> {
        let diff = a.aligned_difference(b)?;
        let tn = diff.terminal().iter().map(|x| x * x).sum::<f64>().sqrt();
        ok &= gauge::upsilon_grad_norm(&diff, order) <= 6.0 * mf * tn.powi(two_m - 1) + 1e-12;
        ok &= gauge::upsilon_hess_norm(&diff, order)
            <= 6.0 * mf * (6.0 * mf - 1.0) * tn.powi(two_m - 2) + 1e-12;
        Ok(())
    };
    check_pair(&ebp.anchor, anchor)?;
    for (c, _) in penalty.centers() {
        check_pair(&ebp.anchor, c)?;
    }

    Ok(ProbeResult {
        point: ebp.anchor.clone(),
        penalty,
        ebp,
        report,
        penalty_bounds_ok: ok,
    })
}
