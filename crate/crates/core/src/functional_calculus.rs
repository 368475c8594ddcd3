//! Pathwise (Dupire) derivatives of non-anticipative functionals.
//!
//! The horizontal derivative moves time forward while freezing the path by
//! flat extension; the vertical derivatives bump only the final grid value,
//! the discrete analog of Dupire's vertical perturbation. Interior values
//! are never bumped. A [`FunctionalHandle`] may carry closed-form
//! derivatives; when present they take precedence over the numeric ones.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauge::{self, GaugeOrder};
use crate::path_space::Path;

type ScalarFn = dyn Fn(&Path) -> f64 + Send + Sync;
type VectorFn = dyn Fn(&Path) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(&Path) -> DMatrix<f64> + Send + Sync;

/// A non-anticipative functional of path segments with optional supplied
/// pathwise derivatives. Evaluation closures must be reentrant; the handle
/// is shared freely across workers. Continuity or semicontinuity of the
/// underlying functional is a documentation-level contract: nothing here
/// can verify it, and the growth degree is likewise a hint.
pub struct FunctionalHandle {
    eval: Box<ScalarFn>,
    dt: Option<Box<ScalarFn>>,
    dx: Option<Box<VectorFn>>,
    dxx: Option<Box<MatrixFn>>,
    growth_degree: u32,
}

impl FunctionalHandle {
    pub fn new(eval: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(eval),
            dt: None,
            dx: None,
            dxx: None,
            growth_degree: 1,
        }
    }

    pub fn with_dt(mut self, dt: impl Fn(&Path) -> f64 + Send + Sync + 'static) -> Self {
        self.dt = Some(Box::new(dt));
        self
    }

    pub fn with_dx(mut self, dx: impl Fn(&Path) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.dx = Some(Box::new(dx));
        self
    }

    pub fn with_dxx(mut self, dxx: impl Fn(&Path) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.dxx = Some(Box::new(dxx));
        self
    }

    pub fn with_growth_degree(mut self, degree: u32) -> Self {
        self.growth_degree = degree;
        self
    }

    pub fn growth_degree(&self) -> u32 {
        self.growth_degree
    }

    pub fn eval(&self, p: &Path) -> f64 {
        (self.eval)(p)
    }

    pub fn has_derivatives(&self) -> bool {
        self.dt.is_some() && self.dx.is_some() && self.dxx.is_some()
    }

    /// Time derivative: supplied closed form, or the one-sided difference
    /// quotient over one grid step.
    pub fn dt_at(&self, p: &Path) -> Result<f64> {
        match &self.dt {
            Some(f) => Ok(f(p)),
            None => horizontal_derivative(self, p, p.grid().step()),
        }
    }

    /// Vertical gradient: supplied closed form, or central differences with
    /// the default bump `1e-5 * (1 + ||p||_0)`.
    pub fn dx_at(&self, p: &Path) -> Result<DVector<f64>> {
        match &self.dx {
            Some(f) => Ok(f(p)),
            None => vertical_gradient(self, p, default_eps(p)),
        }
    }

    pub fn dxx_at(&self, p: &Path) -> Result<DMatrix<f64>> {
        match &self.dxx {
            Some(f) => Ok(f(p)),
            None => vertical_hessian(self, p, default_hess_eps(p)),
        }
    }
}

pub fn default_eps(p: &Path) -> f64 {
    1e-5 * (1.0 + p.sup_norm())
}

pub fn default_hess_eps(p: &Path) -> f64 {
    1e-4 * (1.0 + p.sup_norm())
}

/// One-sided horizontal difference quotient
/// `(f(flat_extend(p, t + h)) - f(p)) / h` with `h` a positive multiple of
/// the grid step. Rejected at the horizon: the limit needs room to the right.
pub fn horizontal_derivative(f: &FunctionalHandle, p: &Path, h: f64) -> Result<f64> {
    if p.at_horizon() {
        return Err(Error::AtHorizon);
    }
    let step = p.grid().step();
    let k = (h / step).round();
    if k < 1.0 || (h - k * step).abs() > 0.5 * step * 1e-6 {
        return Err(Error::OffGrid {
            time: p.end_time() + h,
            nearest: p.end_time() + k.max(1.0) * step,
            step,
        });
    }
    let target = p.end_index() + k as usize;
    if target > p.grid().n_steps() {
        return Err(Error::AtHorizon);
    }
    let ext = p.flat_extend_to_index(target)?;
    Ok((f.eval(&ext) - f.eval(p)) / h)
}

/// Horizontal derivative with one Richardson refinement over `h` and `h/2`
/// (`h` must span an even number of grid steps).
pub fn horizontal_derivative_richardson(f: &FunctionalHandle, p: &Path, h: f64) -> Result<f64> {
    let coarse = horizontal_derivative(f, p, h)?;
    let fine = horizontal_derivative(f, p, 0.5 * h)?;
    Ok(2.0 * fine - coarse)
}

/// Central difference in the terminal value only.
pub fn vertical_gradient(f: &FunctionalHandle, p: &Path, eps: f64) -> Result<DVector<f64>> {
    if eps <= 0.0 {
        return Err(Error::Precondition("bump size must be positive".into()));
    }
    let d = p.dim();
    let mut g = DVector::zeros(d);
    let mut delta = vec![0.0; d];
    for i in 0..d {
        delta[i] = eps;
        let up = f.eval(&p.bump_terminal(&delta)?);
        delta[i] = -eps;
        let dn = f.eval(&p.bump_terminal(&delta)?);
        delta[i] = 0.0;
        g[i] = (up - dn) / (2.0 * eps);
    }
    Ok(g)
}

/// Second-order central differences in the terminal value, symmetric by
/// construction (the upper triangle is computed once and mirrored).
pub fn vertical_hessian(f: &FunctionalHandle, p: &Path, eps: f64) -> Result<DMatrix<f64>> {
    if eps <= 0.0 {
        return Err(Error::Precondition("bump size must be positive".into()));
    }
    let d = p.dim();
    let mut h = DMatrix::zeros(d, d);
    let f0 = f.eval(p);
    let mut delta = vec![0.0; d];
    for i in 0..d {
        delta[i] = eps;
        let up = f.eval(&p.bump_terminal(&delta)?);
        delta[i] = -eps;
        let dn = f.eval(&p.bump_terminal(&delta)?);
        delta[i] = 0.0;
        h[(i, i)] = (up - 2.0 * f0 + dn) / (eps * eps);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                delta[i] = si * eps;
                delta[j] = sj * eps;
                let v = f.eval(&p.bump_terminal(&delta)?);
                delta[i] = 0.0;
                delta[j] = 0.0;
                Ok(v)
            };
            let v = (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?)
                / (4.0 * eps * eps);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Per-step integrands of a simulated semimartingale, as a simulation
/// produces them: one drift vector and one diffusion matrix per step.
pub struct StepIntegrands<'a> {
    pub drift: &'a [DVector<f64>],
    pub diffusion: &'a [DMatrix<f64>],
}

/// Discrete functional Ito residual along a full-horizon sample:
///
/// ```text
/// f(X_T) - f(X_t) - sum_k [ dt f . dl + dx f . dX + 1/2 tr(dxx f sigma sigma^T) dl ]
/// ```
///
/// The `dX` term uses the realized path increments, so the drift enters only
/// through the simulated path itself; the integrand table is validated for
/// shape. The defect is accumulated step by step, which keeps telescoping
/// cases exactly zero.
pub fn ito_residual(
    f: &FunctionalHandle,
    x: &Path,
    integrands: &StepIntegrands<'_>,
    start_index: usize,
) -> Result<f64> {
    let n = x.end_index();
    if start_index >= n {
        return Err(Error::Precondition(
            "start index must precede the path end".into(),
        ));
    }
    let steps = n - start_index;
    if integrands.drift.len() != steps {
        return Err(Error::LengthMismatch {
            what: "drift vectors",
            expected: steps,
            got: integrands.drift.len(),
        });
    }
    if integrands.diffusion.len() != steps {
        return Err(Error::LengthMismatch {
            what: "diffusion matrices",
            expected: steps,
            got: integrands.diffusion.len(),
        });
    }
    let d = x.dim();
    let dl = x.grid().step();
    let mut residual = 0.0;
    // One evaluation per prefix: the value at step k's endpoint is reused
    // as the base of step k+1.
    let mut f_prev = f.eval(&x.prefix(start_index));
    for k in start_index..n {
        let prefix = x.prefix(k);
        let next = x.prefix(k + 1);
        let dt = f.dt_at(&prefix)?;
        let dx = f.dx_at(&prefix)?;
        let dxx = f.dxx_at(&prefix)?;
        let sigma = &integrands.diffusion[k - start_index];
        if sigma.nrows() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.nrows(),
            });
        }
        // tr(dxx sigma sigma^T) = sum_{i,j} dxx[i,j] (sigma sigma^T)[j,i]
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                let mut ss = 0.0;
                for l in 0..sigma.ncols() {
                    ss += sigma[(j, l)] * sigma[(i, l)];
                }
                quad += dxx[(i, j)] * ss;
            }
        }
        let xk = prefix.terminal();
        let xk1 = next.terminal();
        let mut dx_term = 0.0;
        for i in 0..d {
            dx_term += dx[i] * (xk1[i] - xk[i]);
        }
        let f_next = f.eval(&next);
        residual += f_next - f_prev - (dt * dl + dx_term + 0.5 * quad * dl);
        f_prev = f_next;
    }
    Ok(residual)
}

/// `Upsilon^m` as a handle with its closed-form derivatives
/// (`dt = 0`: flat extension changes neither the sup norm nor the terminal
/// value).
pub fn upsilon_handle(m: GaugeOrder) -> FunctionalHandle {
    FunctionalHandle::new(move |p| gauge::upsilon(p, m))
        .with_dt(|_| 0.0)
        .with_dx(move |p| gauge::upsilon_grad(p, m))
        .with_dxx(move |p| gauge::upsilon_hess(p, m))
        .with_growth_degree(2 * m.m())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_space::Grid;
    use crate::rng;

    fn grid01(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn horizontal_of_time_functional_is_one() {
        let f = FunctionalHandle::new(|p| p.end_time());
        let p = Path::constant(grid01(10), &[0.3], 4).unwrap();
        let d = horizontal_derivative(&f, &p, p.grid().step()).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_of_upsilon_is_exactly_zero() {
        let f = FunctionalHandle::new(|p| gauge::upsilon(p, GaugeOrder::default()));
        let p = Path::sample(grid01(10), 1, 5, |t| vec![t.sin() + 0.2]).unwrap();
        assert_eq!(horizontal_derivative(&f, &p, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_of_terminal_linear_is_zero() {
        let f = FunctionalHandle::new(|p| 2.5 * p.terminal()[0]);
        let p = Path::sample(grid01(10), 1, 5, |t| vec![t]).unwrap();
        assert_eq!(horizontal_derivative(&f, &p, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_rejects_horizon_and_off_grid_steps() {
        let f = FunctionalHandle::new(|p| p.end_time());
        let p = Path::constant(grid01(10), &[0.0], 10).unwrap();
        assert!(matches!(
            horizontal_derivative(&f, &p, 0.1),
            Err(Error::AtHorizon)
        ));
        let q = Path::constant(grid01(10), &[0.0], 3).unwrap();
        assert!(matches!(
            horizontal_derivative(&f, &q, 0.15),
            Err(Error::OffGrid { .. })
        ));
    }

    #[test]
    fn richardson_refines_smooth_time_dependence() {
        let f = FunctionalHandle::new(|p| (1.0 - p.end_time()).powi(3));
        let p = Path::constant(grid01(64), &[0.0], 16).unwrap();
        let t = p.end_time();
        let exact = -3.0 * (1.0 - t) * (1.0 - t);
        let h = 8.0 * p.grid().step();
        let plain = horizontal_derivative(&f, &p, h).unwrap();
        let rich = horizontal_derivative_richardson(&f, &p, h).unwrap();
        assert!((rich - exact).abs() < (plain - exact).abs());
    }

    #[test]
    fn vertical_gradient_exact_for_linear() {
        let a = [1.5, -0.5];
        let f = FunctionalHandle::new(move |p| {
            p.terminal()
                .iter()
                .zip(a.iter())
                .map(|(x, ai)| x * ai)
                .sum()
        });
        let p = Path::constant(grid01(4), &[0.2, 0.4], 2).unwrap();
        let g = vertical_gradient(&f, &p, 1e-5).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-9 && (g[1] + 0.5).abs() < 1e-9);
        let h = vertical_hessian(&f, &p, 1e-4).unwrap();
        assert!(h.amax() < 1e-7);
    }

    #[test]
    fn vertical_gradient_of_riemann_sum_carries_one_quadrature_weight() {
        // Right-endpoint Riemann sum of the first component over [0, t].
        let f = FunctionalHandle::new(|p| {
            let dl = p.grid().step();
            (1..=p.end_index()).map(|i| p.value(i)[0] * dl).sum()
        });
        let p = Path::sample(grid01(20), 1, 10, |t| vec![t * t]).unwrap();
        let g = vertical_gradient(&f, &p, 1e-6).unwrap();
        assert!(g.norm() <= p.grid().step() + 1e-9);
    }

    #[test]
    fn vertical_hessian_of_quadratic_is_identity_times_two() {
        let f = FunctionalHandle::new(|p| p.terminal().iter().map(|x| x * x).sum());
        let p = Path::constant(grid01(4), &[0.3, -0.7, 0.1], 2).unwrap();
        let h = vertical_hessian(&f, &p, 1e-4).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert!((h[(i, j)] - expect).abs() < 1e-6);
            }
        }
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn numeric_derivatives_match_upsilon_closed_forms() {
        let mut r = rng::global_stream(17);
        let m = GaugeOrder::default();
        let plain = FunctionalHandle::new(move |p| gauge::upsilon(p, m));
        for i in 0..200 {
            let p = crate::test_support::random_path(&mut r, grid01(12), 2, 1.0);
            // Floors keep the relative error meaningful where the true
            // derivative vanishes: central differences cannot resolve below
            // ulp(f)/eps.
            let scale = 1.0 + p.sup_norm();
            let g_num = vertical_gradient(&plain, &p, default_eps(&p)).unwrap();
            let g_cf = gauge::upsilon_grad(&p, m);
            let g_floor = 0.01 * scale.powi(2 * m.m() as i32 - 1);
            assert!(
                (g_num.clone() - &g_cf).norm() / (g_cf.norm() + g_floor) < 1e-5,
                "i={i} cf={g_cf:?} num={g_num:?}"
            );
            let h_num = vertical_hessian(&plain, &p, default_hess_eps(&p)).unwrap();
            let h_cf = gauge::upsilon_hess(&p, m);
            let h_floor = 0.01 * scale.powi(2 * m.m() as i32 - 2);
            assert!((h_num - &h_cf).norm() / (h_cf.norm() + h_floor) < 1e-4);
        }
    }

    #[test]
    fn gradient_vanishes_at_a_vertical_bump_maximum() {
        // f has an interior maximum in the terminal value; at a path whose
        // terminal sits there, the numeric gradient is below tolerance.
        let f = FunctionalHandle::new(|p: &Path| {
            -(p.terminal()[0] - 0.4).powi(2) - (p.terminal()[1] + 0.1).powi(2)
        });
        let p = Path::constant(grid01(6), &[0.4, -0.1], 3).unwrap();
        let g = vertical_gradient(&f, &p, 1e-6).unwrap();
        assert!(g.norm() < 1e-8, "gradient at max: {g:?}");
    }

    #[test]
    fn ito_residual_telescopes_exactly_for_identity_functional() {
        let f = FunctionalHandle::new(|p| p.terminal()[0])
            .with_dt(|_| 0.0)
            .with_dx(|p| DVector::from_element(p.dim(), 1.0))
            .with_dxx(|p| DMatrix::zeros(p.dim(), p.dim()));
        let mut r = rng::global_stream(5);
        let g = grid01(128);
        let x = crate::test_support::brownian_path(&mut r, g, 1, &[0.0]);
        let drift = vec![DVector::zeros(1); g.n_steps()];
        let diffusion = vec![DMatrix::identity(1, 1); g.n_steps()];
        let res = ito_residual(
            &f,
            &x,
            &StepIntegrands {
                drift: &drift,
                diffusion: &diffusion,
            },
            0,
        )
        .unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn ito_residual_rejects_mismatched_tables() {
        let f = FunctionalHandle::new(|p| p.terminal()[0]);
        let x = Path::sample(grid01(8), 1, 8, |t| vec![t]).unwrap();
        let drift = vec![DVector::zeros(1); 3];
        let diffusion = vec![DMatrix::zeros(1, 1); 8];
        assert!(matches!(
            ito_residual(
                &f,
                &x,
                &StepIntegrands {
                    drift: &drift,
                    diffusion: &diffusion
                },
                0
            ),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
