//! Smooth gauge functionals.
//!
//! `Upsilon^m` is a smooth substitute for `||.||_0^{2m}` with closed-form
//! pathwise derivatives:
//!
//! ```text
//! Upsilon^m(p) = (||p||^{2m} - |p(t)|^{2m})^3 / ||p||^{4m} + 3 |p(t)|^{2m}
//! ```
//!
//! (zero when `||p||_0 = 0`). Everything here is evaluated in the factored
//! form `s^{2m} * ((1 - rho)^3 + 3 rho)` with `s = ||p||_0` and
//! `rho = (|p(t)|/s)^{2m} in [0, 1]`, which stays finite at every scale and
//! keeps the proven bounds exact in floating point. The bivariate versions
//! compare two segments through their flat-extended difference plus the
//! squared time gap, which makes the pair a gauge-type function for the
//! `d_inf` metric.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_space::Path;

/// Order `m >= 2` of the gauge family; `m = 3` is the default used by the
/// comparison machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaugeOrder(u32);

impl GaugeOrder {
    pub fn new(m: u32) -> Result<Self> {
        if m < 2 {
            return Err(Error::Precondition(format!(
                "gauge order needs m >= 2, got {m}"
            )));
        }
        Ok(Self(m))
    }

    pub fn m(&self) -> u32 {
        self.0
    }

    fn mf(&self) -> f64 {
        self.0 as f64
    }

    fn two_m(&self) -> i32 {
        2 * self.0 as i32
    }
}

impl Default for GaugeOrder {
    fn default() -> Self {
        Self(3)
    }
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale-invariant pieces shared by the value and its derivatives.
struct Parts {
    sup: f64,
    term_norm: f64,
    /// `(|p(t)| / ||p||)^{2m}`, in `[0, 1]`.
    rho: f64,
    /// `1 - (1 - rho)^2 = rho (2 - rho)`, in `[0, 1]`.
    bracket: f64,
}

fn parts(p: &Path, m: GaugeOrder) -> Option<Parts> {
    let sup = p.sup_norm();
    if sup == 0.0 {
        return None;
    }
    let term_norm = euclid(p.terminal());
    let rho = (term_norm / sup).powi(m.two_m());
    Some(Parts {
        sup,
        term_norm,
        rho,
        bracket: rho * (2.0 - rho),
    })
}

/// `Upsilon^m` of a path segment.
pub fn upsilon(p: &Path, m: GaugeOrder) -> f64 {
    match parts(p, m) {
        None => 0.0,
        Some(q) => q.sup.powi(m.two_m()) * (1.0 + q.rho * q.rho * (3.0 - q.rho)),
    }
}

/// Closed-form vertical gradient of `Upsilon^m`.
pub fn upsilon_grad(p: &Path, m: GaugeOrder) -> DVector<f64> {
    let d = p.dim();
    match parts(p, m) {
        None => DVector::zeros(d),
        Some(q) => {
            if q.term_norm == 0.0 {
                return DVector::zeros(d);
            }
            let factor = 6.0 * m.mf() * q.bracket * q.term_norm.powi(m.two_m() - 2);
            DVector::from_iterator(d, p.terminal().iter().map(|x| factor * x))
        }
    }
}

/// Magnitude of the gradient, evaluated as `6m * bracket * |p(t)|^{2m-1}`.
/// Agrees with the Euclidean norm of [`upsilon_grad`] to rounding and never
/// exceeds the proven bound `6m |p(t)|^{2m-1}` in floating point.
pub fn upsilon_grad_norm(p: &Path, m: GaugeOrder) -> f64 {
    match parts(p, m) {
        None => 0.0,
        Some(q) => 6.0 * m.mf() * q.term_norm.powi(m.two_m() - 1) * q.bracket,
    }
}

/// Closed-form vertical Hessian of `Upsilon^m` (exactly symmetric).
pub fn upsilon_hess(p: &Path, m: GaugeOrder) -> DMatrix<f64> {
    let d = p.dim();
    let (alpha, beta, unit) = match hess_parts(p, m) {
        None => return DMatrix::zeros(d, d),
        Some(v) => v,
    };
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut v = alpha * unit[i] * unit[j];
            if i == j {
                v += beta;
            }
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Operator norm of the Hessian: `alpha + beta` for the rank-one-plus-identity
/// form with nonnegative coefficients.
pub fn upsilon_hess_norm(p: &Path, m: GaugeOrder) -> f64 {
    match hess_parts(p, m) {
        None => 0.0,
        Some((alpha, beta, _)) => alpha + beta,
    }
}

fn hess_parts(p: &Path, m: GaugeOrder) -> Option<(f64, f64, Vec<f64>)> {
    let q = parts(p, m)?;
    if q.term_norm == 0.0 {
        return None;
    }
    let mf = m.mf();
    let pow = q.term_norm.powi(m.two_m() - 2);
    // Three terms of the closed form, collected on the unit dyad and the
    // identity: 24 m^2 rho (1 - rho) + 12 m (m - 1) bracket on the dyad,
    // 6 m bracket on the identity.
    let alpha = pow * (24.0 * mf * mf * q.rho * (1.0 - q.rho) + 12.0 * mf * (mf - 1.0) * q.bracket);
    let beta = 6.0 * mf * q.bracket * pow;
    let unit: Vec<f64> = p.terminal().iter().map(|x| x / q.term_norm).collect();
    Some((alpha, beta, unit))
}

/// `Upsilon^m_0`: the gauge applied to the flat-extended difference.
pub fn upsilon_0(p: &Path, q: &Path, m: GaugeOrder) -> Result<f64> {
    Ok(upsilon(&p.aligned_difference(q)?, m))
}

/// `bar Upsilon^m_0 = Upsilon^m_0 + |s - t|^2`, the gauge-type function used
/// by the variational machinery.
pub fn upsilon_bar0(p: &Path, q: &Path, m: GaugeOrder) -> Result<f64> {
    let gap = p.end_time() - q.end_time();
    Ok(upsilon_0(p, q, m)? + gap * gap)
}

// --- bound checking ------------------------------------------------------

/// One inequality `lhs <= rhs`; `slack = lhs - rhs` (positive means violated).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn of(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            slack: lhs - rhs,
            holds: lhs <= rhs,
        }
    }

    /// Comparison with a small relative guard for checks whose two sides
    /// round independently and can sit at mathematical equality.
    fn of_guarded(lhs: f64, rhs: f64, rel_guard: f64) -> Self {
        Self {
            lhs,
            rhs,
            slack: lhs - rhs,
            holds: lhs <= rhs + rel_guard * rhs.abs(),
        }
    }
}

/// Per-path report on the proven estimates.
#[derive(Debug, Clone, Serialize)]
pub struct GaugeBoundsReport {
    pub lower: BoundCheck,
    pub upper: BoundCheck,
    pub grad: BoundCheck,
    pub hess: BoundCheck,
}

impl GaugeBoundsReport {
    pub fn all_hold(&self) -> bool {
        self.lower.holds && self.upper.holds && self.grad.holds && self.hess.holds
    }
}

/// Check the unary estimates on one path: the sandwich
/// `||p||^{2m} <= Upsilon^m(p) <= 3 ||p||^{2m}` and the derivative bounds
/// `|grad| <= 6m |p(t)|^{2m-1}`, `|hess| <= 6m(6m-1) |p(t)|^{2m-2}`.
pub fn check_gauge_bounds(p: &Path, m: GaugeOrder) -> GaugeBoundsReport {
    let ups = upsilon(p, m);
    let a = p.sup_norm().powi(m.two_m());
    let tn = euclid(p.terminal());
    let mf = m.mf();
    GaugeBoundsReport {
        lower: BoundCheck::of(a, ups),
        upper: BoundCheck::of(ups, 3.0 * a),
        grad: BoundCheck::of(upsilon_grad_norm(p, m), 6.0 * mf * tn.powi(m.two_m() - 1)),
        hess: BoundCheck::of(
            upsilon_hess_norm(p, m),
            6.0 * mf * (6.0 * mf - 1.0) * tn.powi(m.two_m() - 2),
        ),
    }
}

/// 2m-th-root subadditivity on a pair with common end time:
/// `Upsilon^m(p+q)^{1/2m} <= Upsilon^m(p)^{1/2m} + Upsilon^m(q)^{1/2m}`.
///
/// The two sides involve independent `powf` roundings and random pairs can
/// sit at mathematical equality (e.g. one segment negligible against the
/// other), so the check certifies the inequality up to 4 ulps; the unary
/// bounds stay bitwise exact.
pub fn check_subadditivity(p: &Path, q: &Path, m: GaugeOrder) -> Result<BoundCheck> {
    if p.end_index() != q.end_index() {
        return Err(Error::GridMismatch(
            "subadditivity needs a common end time".into(),
        ));
    }
    let sum = path_add(p, q)?;
    let e = 1.0 / m.two_m() as f64;
    Ok(BoundCheck::of_guarded(
        upsilon(&sum, m).powf(e),
        upsilon(p, m).powf(e) + upsilon(q, m).powf(e),
        1e-15,
    ))
}

/// Pointwise sum of two segments sharing grid, dimension and end time.
pub fn path_add(p: &Path, q: &Path) -> Result<Path> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    if p.grid() != q.grid() || p.end_index() != q.end_index() {
        return Err(Error::GridMismatch(
            "sum needs identical grids and end times".into(),
        ));
    }
    let values: Vec<f64> = p
        .data()
        .iter()
        .zip(q.data().iter())
        .map(|(a, b)| a + b)
        .collect();
    Path::new(*p.grid(), p.dim(), values)
}

/// Aggregated statistics for one named bound across a sweep.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BoundStat {
    pub samples: usize,
    pub violations: usize,
    /// Worst signed slack seen (`lhs - rhs`; negative means margin remained).
    pub max_slack: f64,
}

impl BoundStat {
    /// Fold another aggregate into this one.
    pub fn merge(&mut self, other: &BoundStat) {
        if self.samples == 0 || other.max_slack > self.max_slack {
            self.max_slack = other.max_slack;
        }
        self.samples += other.samples;
        self.violations += other.violations;
    }

    pub fn absorb(&mut self, check: &BoundCheck) {
        self.samples += 1;
        if !check.holds {
            self.violations += 1;
        }
        if self.samples == 1 || check.slack > self.max_slack {
            self.max_slack = check.slack;
        }
    }
}

/// Sweep report, serialized as `{bound_name: {violations, max_slack, ...}}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GaugeSweepReport(pub BTreeMap<String, BoundStat>);

impl GaugeSweepReport {
    pub fn record(&mut self, name: &str, check: &BoundCheck) {
        self.0.entry(name.to_string()).or_default().absorb(check);
    }

    pub fn total_violations(&self) -> usize {
        self.0.values().map(|s| s.violations).sum()
    }
}

/// Run the full bound sweep on random path pairs: unary bounds on each path,
/// subadditivity on the pair, and the gauge property
/// `d_inf <= (bar Upsilon_0)^{1/2m} + sqrt(bar Upsilon_0)`.
pub fn gauge_bounds_sweep(
    pairs: impl Iterator<Item = (Path, Path)>,
    m: GaugeOrder,
) -> Result<GaugeSweepReport> {
    let mut report = GaugeSweepReport::default();
    for (p, q) in pairs {
        let rp = check_gauge_bounds(&p, m);
        report.record("upsilon_lower", &rp.lower);
        report.record("upsilon_upper", &rp.upper);
        report.record("grad_bound", &rp.grad);
        report.record("hess_bound", &rp.hess);
        if p.end_index() == q.end_index() {
            report.record("root_subadditivity", &check_subadditivity(&p, &q, m)?);
        }
        let bar = upsilon_bar0(&p, &q, m)?;
        let dist = crate::path_space::dist_dinfty(&p, &q)?;
        report.record(
            "gauge_property",
            &BoundCheck::of(dist, bar.powf(1.0 / m.two_m() as f64) + bar.sqrt()),
        );
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_space::Grid;
    use crate::rng;
    use rand::Rng;

    fn grid01(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn m(v: u32) -> GaugeOrder {
        GaugeOrder::new(v).unwrap()
    }

    fn random_path(r: &mut rand_chacha::ChaCha8Rng, grid: Grid, dim: usize, scale: f64) -> Path {
        let end = r.random_range(0..=grid.n_steps());
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

    #[test]
    fn order_requires_m_at_least_two() {
        assert!(GaugeOrder::new(1).is_err());
        assert_eq!(GaugeOrder::default().m(), 3);
    }

    #[test]
    fn zero_path_takes_indicator_branch() {
        let p = Path::constant(grid01(8), &[0.0, 0.0], 5).unwrap();
        assert_eq!(upsilon(&p, m(3)), 0.0);
        assert_eq!(upsilon_grad(&p, m(3)), DVector::zeros(2));
        assert_eq!(upsilon_hess(&p, m(3)), DMatrix::zeros(2, 2));
    }

    #[test]
    fn constant_path_value_saturates_upper_bound() {
        for mm in [2u32, 3, 4] {
            let p = Path::constant(grid01(8), &[-1.3, 0.4], 6).unwrap();
            let c = euclid(p.terminal());
            let got = upsilon(&p, m(mm));
            let expect = 3.0 * c.powi(2 * mm as i32);
            assert!((got - expect).abs() <= 1e-12 * expect);
            let rep = check_gauge_bounds(&p, m(mm));
            assert!(rep.upper.holds && rep.lower.holds);
        }
    }

    #[test]
    fn interior_max_example_matches_one_line_oracle() {
        // d = 1, m = 3, sup 2 attained in the interior, terminal 1.
        let p = Path::new(grid01(2), 1, vec![0.0, 2.0, 1.0]).unwrap();
        let oracle = (64.0f64 - 1.0).powi(3) / 64.0f64.powi(2) + 3.0;
        assert!((upsilon(&p, m(3)) - oracle).abs() < 1e-12 * oracle);
        assert!((oracle - (63.0f64.powi(3) / 4096.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_path_gradient_closed_form() {
        for mm in [2u32, 3, 4] {
            let p = Path::constant(grid01(4), &[0.7, -0.2, 0.5], 3).unwrap();
            let c = euclid(p.terminal());
            let g = upsilon_grad(&p, m(mm));
            let factor = 6.0 * mm as f64 * c.powi(2 * mm as i32 - 2);
            for (gi, xi) in g.iter().zip(p.terminal()) {
                assert!((gi - factor * xi).abs() < 1e-12 * factor.max(1.0));
            }
        }
    }

    #[test]
    fn constant_path_hessian_hand_evaluation() {
        // d = 1, m = 3: 12 m (m-1) |c|^{2m-2} + 6 m |c|^{2m-2} = 90 |c|^4.
        let c = 1.7f64;
        let p = Path::constant(grid01(4), &[c], 2).unwrap();
        let h = upsilon_hess(&p, m(3));
        let expect = 90.0 * c.powi(4);
        assert!((h[(0, 0)] - expect).abs() < 1e-10 * expect);
    }

    #[test]
    fn grad_norm_helper_matches_euclidean_norm() {
        let mut r = rng::global_stream(3);
        for _ in 0..200 {
            let p = random_path(&mut r, grid01(12), 3, 1.0);
            for mm in [2u32, 3, 4] {
                let v = upsilon_grad(&p, m(mm)).norm();
                let a = upsilon_grad_norm(&p, m(mm));
                assert!((v - a).abs() <= 1e-12 * (1.0 + a), "{v} vs {a}");
            }
        }
    }

    #[test]
    fn hess_norm_helper_matches_spectral_norm() {
        let mut r = rng::global_stream(4);
        for _ in 0..100 {
            let p = random_path(&mut r, grid01(12), 3, 1.0);
            let h = upsilon_hess(&p, m(3));
            let spectral = h
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &e| acc.max(e.abs()));
            let a = upsilon_hess_norm(&p, m(3));
            assert!((spectral - a).abs() <= 1e-10 * (1.0 + a));
        }
    }

    #[test]
    fn tiny_scales_stay_finite_and_bounded() {
        // Far below the old underflow threshold for the unfactored formula.
        for scale in [1e-30, 1e-62, 1e-80] {
            let p = Path::new(grid01(2), 1, vec![scale, -2.0 * scale, scale]).unwrap();
            for mm in [2u32, 3, 4] {
                let v = upsilon(&p, m(mm));
                assert!(v.is_finite());
                let rep = check_gauge_bounds(&p, m(mm));
                assert!(rep.all_hold(), "bounds fail at scale {scale}, m {mm}");
            }
        }
    }

    #[test]
    fn bar_upsilon_identity_and_time_gap() {
        let g = grid01(10);
        let p = Path::sample(g, 2, 6, |t| vec![t, t * t]).unwrap();
        assert_eq!(upsilon_bar0(&p, &p, m(3)).unwrap(), 0.0);
        // Same values, end times differing by delta: difference path is zero.
        let q = p.flat_extend_to_index(8).unwrap();
        let delta = q.end_time() - p.end_time();
        let got = upsilon_bar0(&p, &q, m(3)).unwrap();
        assert!((got - delta * delta).abs() < 1e-15);
    }

    #[test]
    fn bar_upsilon_sandwich_on_random_pairs() {
        let mut r = rng::global_stream(9);
        let g = grid01(16);
        for _ in 0..1000 {
            let p = random_path(&mut r, g, 2, 1.0);
            let q = random_path(&mut r, g, 2, 1.0);
            let diff = p.aligned_difference(&q).unwrap();
            let a = diff.sup_norm().powi(6);
            let u0 = upsilon_0(&p, &q, m(3)).unwrap();
            assert!(a <= u0 && u0 <= 3.0 * a, "sandwich fails: {a} {u0}");
        }
    }

    #[test]
    fn upsilon_invariant_under_flat_extension() {
        let g = grid01(10);
        let p = Path::sample(g, 1, 5, |t| vec![(3.0 * t).cos()]).unwrap();
        let e = p.flat_extend(0.9).unwrap();
        assert_eq!(upsilon(&p, m(3)), upsilon(&e, m(3)));
    }

    #[test]
    fn subadditivity_and_sweep_on_random_pairs() {
        let mut r = rng::global_stream(21);
        let g = grid01(12);
        let pairs = (0..500).map(move |_| {
            let end = r.random_range(0..=g.n_steps());
            let mut mk = |scale: f64| {
                let mut values = Vec::new();
                let mut x = [
                    r.random_range(-1.0..1.0) * scale,
                    r.random_range(-1.0..1.0) * scale,
                ];
                values.extend_from_slice(&x);
                for _ in 0..end {
                    x[0] += 0.3 * scale * rng::standard_normal(&mut r);
                    x[1] += 0.3 * scale * rng::standard_normal(&mut r);
                    values.extend_from_slice(&x);
                }
                Path::new(g, 2, values).unwrap()
            };
            (mk(1.0), mk(0.7))
        });
        let report = gauge_bounds_sweep(pairs, m(3)).unwrap();
        assert_eq!(report.total_violations(), 0, "{report:?}");
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("root_subadditivity"));
        assert!(json.contains("max_slack"));
    }
}
