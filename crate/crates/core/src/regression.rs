//! Least-squares machinery shared by the backward solvers.
//!
//! Conditional expectations are approximated by linear regression on a small
//! set of path features. The normal equations are solved by Cholesky; if the
//! Gram matrix is (numerically) rank deficient the solver falls back to a
//! spectral pseudo-inverse that drops near-null directions and flags the fit
//! as reduced. Assembly is strictly sequential in sample order, so fits are
//! bit-reproducible regardless of worker count.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_space::Path;

/// Built-in path feature families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// The intercept; always required.
    Constant,
    /// Components of the current value.
    Terminal,
    /// Running maximum of the Euclidean norm.
    RunningMax,
    /// Per-component running average.
    RunningAverage,
    /// Pairwise products of the current value's components.
    TerminalProducts,
}

/// Feature maps plus a ridge parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub kinds: Vec<FeatureKind>,
    pub ridge: f64,
}

impl RegressionBasis {
    pub fn new(kinds: Vec<FeatureKind>, ridge: f64) -> Result<Self> {
        if !kinds.contains(&FeatureKind::Constant) {
            return Err(Error::Regression(
                "basis must contain the constant feature".into(),
            ));
        }
        Ok(Self { kinds, ridge })
    }

    /// The default basis: constant, terminal components, running max,
    /// running average, and terminal pair products. Path-dependent features
    /// are included because the games' payoffs are path functionals.
    pub fn default_path_basis() -> Self {
        Self {
            kinds: vec![
                FeatureKind::Constant,
                FeatureKind::Terminal,
                FeatureKind::RunningMax,
                FeatureKind::RunningAverage,
                FeatureKind::TerminalProducts,
            ],
            ridge: 0.0,
        }
    }

    pub fn constant_only() -> Self {
        Self {
            kinds: vec![FeatureKind::Constant],
            ridge: 0.0,
        }
    }

    pub fn feature_count(&self, dim: usize) -> usize {
        self.kinds
            .iter()
            .map(|k| match k {
                FeatureKind::Constant | FeatureKind::RunningMax => 1,
                FeatureKind::Terminal | FeatureKind::RunningAverage => dim,
                FeatureKind::TerminalProducts => dim * (dim + 1) / 2,
            })
            .sum()
    }

    /// Features of a whole path segment.
    pub fn features_of_path(&self, p: &Path) -> DVector<f64> {
        let mut state = FeatureState::new(p.dim());
        for i in 0..p.end_index() {
            state.push(p.value(i));
        }
        self.features(&state, p.terminal())
    }

    /// Features of `history + terminal`, with the history summarized in
    /// `state` (cheap evaluation at hypothetical next points).
    pub fn features(&self, state: &FeatureState, terminal: &[f64]) -> DVector<f64> {
        let d = terminal.len();
        let mut out = Vec::with_capacity(self.feature_count(d));
        let term_norm = terminal.iter().map(|x| x * x).sum::<f64>().sqrt();
        for k in &self.kinds {
            match k {
                FeatureKind::Constant => out.push(1.0),
                FeatureKind::Terminal => out.extend_from_slice(terminal),
                FeatureKind::RunningMax => out.push(state.max_norm.max(term_norm)),
                FeatureKind::RunningAverage => {
                    let n = (state.count + 1) as f64;
                    for (s, t) in state.sum.iter().zip(terminal) {
                        out.push((s + t) / n);
                    }
                }
                FeatureKind::TerminalProducts => {
                    for i in 0..d {
                        for j in i..d {
                            out.push(terminal[i] * terminal[j]);
                        }
                    }
                }
            }
        }
        DVector::from_vec(out)
    }
}

/// Running history summary used for incremental feature evaluation.
#[derive(Debug, Clone)]
pub struct FeatureState {
    pub max_norm: f64,
    pub sum: Vec<f64>,
    pub count: usize,
}

impl FeatureState {
    pub fn new(dim: usize) -> Self {
        Self {
            max_norm: 0.0,
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    /// Absorb one past grid point into the history.
    pub fn push(&mut self, point: &[f64]) {
        let n = point.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > self.max_norm {
            self.max_norm = n;
        }
        for (s, x) in self.sum.iter_mut().zip(point) {
            *s += x;
        }
        self.count += 1;
    }
}

/// A fitted linear model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fit {
    pub coeffs: DVector<f64>,
    /// Set when near-null directions were dropped by the pseudo-inverse.
    pub reduced: bool,
}

impl Fit {
    pub fn predict(&self, features: &DVector<f64>) -> f64 {
        self.coeffs.dot(features)
    }
}

/// Solve the normal equations for `targets ~ rows`, with optional ridge.
pub fn fit_least_squares<R: std::borrow::Borrow<DVector<f64>>>(
    rows: &[R],
    targets: &[f64],
    ridge: f64,
) -> Result<Fit> {
    if rows.is_empty() || rows.len() != targets.len() {
        return Err(Error::Regression(format!(
            "need matching nonempty rows/targets, got {} vs {}",
            rows.len(),
            targets.len()
        )));
    }
    let k = rows[0].borrow().len();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut moment = DVector::<f64>::zeros(k);
    for (row, &y) in rows.iter().zip(targets) {
        let row = row.borrow();
        if y.is_nan() {
            return Err(Error::Regression("NaN regression target".into()));
        }
        for i in 0..k {
            moment[i] += row[i] * y;
            for j in i..k {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
        gram[(i, i)] += ridge;
    }
    // Spectral solve: minimum-norm solution with near-null directions
    // dropped and flagged. Deterministic, and exact for targets in the
    // column span.
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 || max_eig.is_nan() {
        return Err(Error::Regression("all-zero feature matrix".into()));
    }
    let tol = max_eig * 1e-12;
    let mut coeffs = DVector::zeros(k);
    let mut reduced = false;
    for (idx, &val) in eig.eigenvalues.iter().enumerate() {
        if val > tol {
            let v = eig.eigenvectors.column(idx);
            coeffs += v * (v.dot(&moment) / val);
        } else {
            reduced = true;
        }
    }
    Ok(Fit { coeffs, reduced })
}
