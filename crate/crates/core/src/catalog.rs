//! Built-in test problems with known oracles.
//!
//! Every entry names the independent oracle that pins its expected
//! behavior; the scenario runner and the test suites draw from here so the
//! same constructions are exercised everywhere.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bsde::BsdeDriver;
use crate::dynamics::{ControlGrid, SdeCoefficients};
use crate::error::{Error, Result};
use crate::functional_calculus::FunctionalHandle;
use crate::game::GameSpec;
use crate::path_space::Grid;
use crate::viscosity::{CandidateSolution, GeneratorHandle, Role};

/// Catalog listing row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub oracle: &'static str,
}

pub fn entries() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "driftless-brownian",
            summary: "singleton controls, b = 0, sigma = I, q = 0; payoff linear or |X(T)|",
            oracle: "martingale identity and closed-form Gaussian moments",
        },
        CatalogEntry {
            name: "deterministic-bang-bang",
            summary: "d = 1, b = u in {-1, 1}, no noise, q = 0, payoff -|X(T)|",
            oracle: "exhaustive enumeration over all control sequences",
        },
        CatalogEntry {
            name: "lq-isaacs-separable",
            summary: "linear dynamics b = -x/2 + u + v, separable running cost",
            oracle: "separable minimax: lower and upper values coincide",
        },
        CatalogEntry {
            name: "bilinear-non-isaacs",
            summary: "driver coupling u*v on grids {-1, 1}",
            oracle: "2x2 matrix game: pure-strategy duality gap 2",
        },
        CatalogEntry {
            name: "heat-type-exact",
            summary: "F = tr(hess)/2 with V = |x(t)|^2 + d (T - t)",
            oracle: "closed-form classical solution, residual 0",
        },
    ]
}

pub fn entry(name: &str) -> Result<CatalogEntry> {
    entries()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::Precondition(format!("unknown catalog entry '{name}'")))
}

/// Payoff variants of the driftless entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftlessPayoff {
    /// `a * x_1(T)` (martingale identity: value = a * x_1(t)).
    Linear { a: f64 },
    /// `|x(T)|` (Gaussian closed form; square-root time regularity).
    AbsTerminal,
    /// `max_s |x(s)|` (genuinely path-dependent Lipschitz payoff).
    RunningMax,
}

/// Uncontrolled Brownian test game.
pub fn driftless_brownian(grid: Grid, dim: usize, payoff: DriftlessPayoff) -> GameSpec {
    let coeffs = SdeCoefficients::new(
        dim,
        dim,
        move |_, _, _| DVector::zeros(dim),
        move |_, _, _| DMatrix::identity(dim, dim),
    )
    .with_lipschitz_hint(0.0);
    let phi = move |p: &crate::path_space::Path| match payoff {
        DriftlessPayoff::Linear { a } => a * p.terminal()[0],
        DriftlessPayoff::AbsTerminal => p.terminal().iter().map(|x| x * x).sum::<f64>().sqrt(),
        DriftlessPayoff::RunningMax => p.sup_norm(),
    };
    let driver = BsdeDriver::new(|_, _, _, _, _| 0.0, phi).with_lipschitz_hint(0.0);
    GameSpec {
        coeffs,
        driver,
        u_grid: ControlGrid::singleton(0.0),
        v_grid: ControlGrid::singleton(0.0),
        grid,
    }
}

/// Deterministic bang-bang control problem: `d = 1`, `b = u`, no noise,
/// payoff `-|X(T)|`; the v-player is a spectator.
pub fn deterministic_bang_bang(grid: Grid) -> GameSpec {
    let coeffs = SdeCoefficients::new(
        1,
        0,
        |_, u, _| DVector::from_element(1, u),
        |_, _, _| DMatrix::zeros(1, 0),
    )
    .with_lipschitz_hint(0.0);
    let driver = BsdeDriver::new(
        |_, _, _, _, _| 0.0,
        |p: &crate::path_space::Path| -p.terminal()[0].abs(),
    )
    .with_lipschitz_hint(0.0);
    GameSpec {
        coeffs,
        driver,
        u_grid: ControlGrid::new(vec![-1.0, 1.0]).expect("nonempty"),
        v_grid: ControlGrid::singleton(0.0),
        grid,
    }
}

/// Separable linear-quadratic game: Isaacs holds, so lower and upper values
/// coincide. Dynamics stay linear and the payoff linear, so the default
/// regression basis represents the value exactly.
pub fn lq_isaacs_separable(grid: Grid) -> GameSpec {
    let coeffs = SdeCoefficients::new(
        1,
        1,
        |p, u, v| DVector::from_element(1, -0.5 * p.terminal()[0] + u + v),
        |_, _, _| DMatrix::from_element(1, 1, 0.5),
    )
    .with_lipschitz_hint(0.5);
    let driver = BsdeDriver::new(
        |_, y, _, u, v| 0.25 * u * u - 0.25 * v * v + 0.1 * y,
        |p: &crate::path_space::Path| p.terminal()[0],
    )
    .with_lipschitz_hint(0.1);
    GameSpec {
        coeffs,
        driver,
        u_grid: ControlGrid::new(vec![-1.0, 1.0]).expect("nonempty"),
        v_grid: ControlGrid::new(vec![-1.0, 1.0]).expect("nonempty"),
        grid,
    }
}

/// Bilinear coupling `u * v` in the driver on grids `{-1, 1}`: the 2x2
/// matrix game `[[1,-1],[-1,1]]` has no pure saddle, so the Hamiltonian gap
/// is exactly 2 and lower/upper game values separate.
pub fn bilinear_non_isaacs(grid: Grid) -> GameSpec {
    let coeffs = SdeCoefficients::new(
        1,
        1,
        |_, _, _| DVector::zeros(1),
        |_, _, _| DMatrix::identity(1, 1),
    )
    .with_lipschitz_hint(0.0);
    let driver = BsdeDriver::new(
        |_, _, _, u, v| u * v,
        |p: &crate::path_space::Path| p.terminal()[0],
    )
    .with_lipschitz_hint(0.0);
    GameSpec {
        coeffs,
        driver,
        u_grid: ControlGrid::new(vec![-1.0, 1.0]).expect("nonempty"),
        v_grid: ControlGrid::new(vec![-1.0, 1.0]).expect("nonempty"),
        grid,
    }
}

/// Heat-type exact problem: generator `F = tr(hess)/2` and the classical
/// solution `V(p) = |p(t)|^2 + d (T - t)` with terminal `|p(T)|^2`.
pub fn heat_type_exact(grid: Grid, dim: usize) -> (GeneratorHandle, CandidateSolution) {
    let generator = GeneratorHandle::new(|_, _, _, hess| 0.5 * hess.trace()).with_hints(
        0.0,
        1.0,
        "rho(s, r) = (1 + r^2) s",
    );
    let t_end = grid.t_end();
    let d = dim as f64;
    let handle = FunctionalHandle::new(move |p: &crate::path_space::Path| {
        p.terminal().iter().map(|x| x * x).sum::<f64>() + d * (t_end - p.end_time())
    })
    .with_dt(move |_| -d)
    .with_dx(|p| 2.0 * DVector::from_column_slice(p.terminal()))
    .with_dxx(move |p| 2.0 * DMatrix::identity(p.dim(), p.dim()))
    .with_growth_degree(2);
    let candidate = CandidateSolution::new(
        handle,
        |p: &crate::path_space::Path| p.terminal().iter().map(|x| x * x).sum::<f64>(),
        Role::Solution,
    );
    (generator, candidate)
}

/// The candidate `V + shift * (T - t)`: the residual moves by `-shift`, so
/// a negative shift yields a subsolution and a positive one a
/// supersolution, with unchanged terminal data.
pub fn heat_type_shifted(grid: Grid, dim: usize, shift: f64) -> CandidateSolution {
    let t_end = grid.t_end();
    let d = dim as f64;
    let handle = FunctionalHandle::new(move |p: &crate::path_space::Path| {
        p.terminal().iter().map(|x| x * x).sum::<f64>() + (d + shift) * (t_end - p.end_time())
    })
    .with_dt(move |_| -(d + shift))
    .with_dx(|p| 2.0 * DVector::from_column_slice(p.terminal()))
    .with_dxx(move |p| 2.0 * DMatrix::identity(p.dim(), p.dim()))
    .with_growth_degree(2);
    let role = if shift < 0.0 {
        Role::Subsolution
    } else {
        Role::Supersolution
    };
    CandidateSolution::new(
        handle,
        |p: &crate::path_space::Path| p.terminal().iter().map(|x| x * x).sum::<f64>(),
        role,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_at_least_five_entries_with_oracles() {
        let es = entries();
        assert!(es.len() >= 5);
        for e in &es {
            assert!(!e.oracle.is_empty(), "{} lacks an oracle", e.name);
        }
    }

    #[test]
    fn lookup_by_name() {
        assert!(entry("lq-isaacs-separable").is_ok());
        assert!(entry("nope").is_err());
    }
}
