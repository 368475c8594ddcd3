//! Discretized path space.
//!
//! A path segment is stored as values on a uniform time grid from the grid
//! origin up to its current end time. The sup norm is the maximum Euclidean
//! norm over the stored grid points, and the metric between two segments is
//! `|t - s| + sup`-norm of their difference after the shorter one is held
//! constant up to the longer end time (flat extension). Interior maxima
//! between grid points are invisible at this resolution; every comparison in
//! the toolkit runs at one fixed resolution, so they are consistent with each
//! other.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform time grid on `[t0, t_end]` with `n_steps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t0: f64,
    t_end: f64,
    n_steps: usize,
}

impl Grid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidGrid("non-finite endpoints".into()));
        }
        if t0 < 0.0 {
            return Err(Error::InvalidGrid(format!("start {t0} must be >= 0")));
        }
        if n_steps == 0 || t_end <= t0 {
            return Err(Error::InvalidGrid(format!(
                "need t_end > t0 and n_steps > 0, got [{t0}, {t_end}] with {n_steps} steps"
            )));
        }
        Ok(Self { t0, t_end, n_steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, index: usize) -> f64 {
        if index >= self.n_steps {
            self.t_end
        } else {
            self.t0 + self.step() * index as f64
        }
    }

    /// Grid index of `time`: snapped to the nearest grid point (half-step
    /// radius) and accepted only if the residue is arithmetic noise; a
    /// genuinely off-grid time is rejected rather than interpolated.
    pub fn index_of(&self, time: f64) -> Result<usize> {
        let step = self.step();
        let raw = (time - self.t0) / step;
        let rounded = raw.round();
        if rounded < 0.0 || rounded > self.n_steps as f64 {
            return Err(Error::OffGrid {
                time,
                nearest: self.time(rounded.clamp(0.0, self.n_steps as f64) as usize),
                step,
            });
        }
        let idx = rounded as usize;
        if (time - self.time(idx)).abs() > 1e-6 * step {
            return Err(Error::OffGrid {
                time,
                nearest: self.time(idx),
                step,
            });
        }
        Ok(idx)
    }
}

/// A path segment: `d`-dimensional values at grid points `0..=end_index`.
///
/// The value storage is shared, so taking a prefix of a longer path is O(1).
/// Paths are immutable once constructed; every operation returns a new path.
#[derive(Debug, Clone)]
pub struct Path {
    grid: Grid,
    dim: usize,
    end_index: usize,
    values: Arc<Vec<f64>>,
}

impl PartialEq for Path {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.dim == other.dim
            && self.end_index == other.end_index
            && self.data() == other.data()
    }
}

impl Path {
    /// Build a path from `(end_index + 1) * dim` values in point-major order.
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("dimension must be positive".into()));
        }
        if values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidPath(format!(
                "value count {} is not a positive multiple of dim {dim}",
                values.len()
            )));
        }
        let end_index = values.len() / dim - 1;
        if end_index > grid.n_steps() {
            return Err(Error::InvalidPath(format!(
                "end index {end_index} beyond grid horizon {}",
                grid.n_steps()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("non-finite entry".into()));
        }
        Ok(Self {
            grid,
            dim,
            end_index,
            values: Arc::new(values),
        })
    }

    /// Constant path holding `point` from the origin through `end_index`.
    pub fn constant(grid: Grid, point: &[f64], end_index: usize) -> Result<Self> {
        let mut values = Vec::with_capacity((end_index + 1) * point.len());
        for _ in 0..=end_index {
            values.extend_from_slice(point);
        }
        Self::new(grid, point.len(), values)
    }

    /// Sample a function of time on the grid up to `end_index`.
    pub fn sample<F>(grid: Grid, dim: usize, end_index: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64>,
    {
        let mut values = Vec::with_capacity((end_index + 1) * dim);
        for i in 0..=end_index {
            let v = f(grid.time(i));
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            values.extend_from_slice(&v);
        }
        Self::new(grid, dim, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn end_index(&self) -> usize {
        self.end_index
    }

    pub fn end_time(&self) -> f64 {
        self.grid.time(self.end_index)
    }

    pub fn at_horizon(&self) -> bool {
        self.end_index == self.grid.n_steps()
    }

    /// Value at grid point `i`.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Current (terminal) value.
    pub fn terminal(&self) -> &[f64] {
        self.value(self.end_index)
    }

    /// All stored values, point-major.
    pub fn data(&self) -> &[f64] {
        &self.values[..(self.end_index + 1) * self.dim]
    }

    /// O(1) prefix ending at grid index `k <= end_index` (shares storage).
    pub fn prefix(&self, k: usize) -> Path {
        assert!(k <= self.end_index, "prefix index beyond end");
        Path {
            grid: self.grid,
            dim: self.dim,
            end_index: k,
            values: Arc::clone(&self.values),
        }
    }

    /// Append one grid point in place. Internal builder for simulations;
    /// copies the storage only if it is shared.
    pub(crate) fn push_point(&mut self, point: &[f64]) {
        debug_assert_eq!(point.len(), self.dim);
        debug_assert!(self.end_index < self.grid.n_steps());
        let values = Arc::make_mut(&mut self.values);
        values.truncate((self.end_index + 1) * self.dim);
        values.extend_from_slice(point);
        self.end_index += 1;
    }

    /// New path with the terminal value displaced by `delta`.
    pub fn bump_terminal(&self, delta: &[f64]) -> Result<Path> {
        if delta.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: delta.len(),
            });
        }
        let mut values = self.data().to_vec();
        let off = self.end_index * self.dim;
        for (j, d) in delta.iter().enumerate() {
            values[off + j] += d;
        }
        Path::new(self.grid, self.dim, values)
    }

    /// Max over grid points of the Euclidean norm of the values.
    pub fn sup_norm(&self) -> f64 {
        // Track squared norms; one square root at the end (monotone, so the
        // result is bit-identical to rooting every point).
        let mut best = 0.0f64;
        match self.dim {
            1 => {
                for x in self.data() {
                    let q = x * x;
                    if q > best {
                        best = q;
                    }
                }
            }
            _ => {
                for i in 0..=self.end_index {
                    let q: f64 = self.value(i).iter().map(|x| x * x).sum();
                    if q > best {
                        best = q;
                    }
                }
            }
        }
        best.sqrt()
    }

    /// Hold the last value constant through on-grid time `s >= end time`.
    pub fn flat_extend(&self, s: f64) -> Result<Path> {
        let end_time = self.end_time();
        let step = self.grid.step();
        if s < end_time - 0.5 * step {
            return Err(Error::TimeBeforeEnd { time: s, end_time });
        }
        let target = self.grid.index_of(s)?;
        if target < self.end_index {
            return Err(Error::TimeBeforeEnd { time: s, end_time });
        }
        self.flat_extend_to_index(target)
    }

    /// Same as [`flat_extend`](Self::flat_extend) but indexed.
    pub fn flat_extend_to_index(&self, target: usize) -> Result<Path> {
        if target < self.end_index {
            return Err(Error::TimeBeforeEnd {
                time: self.grid.time(target),
                end_time: self.end_time(),
            });
        }
        if target > self.grid.n_steps() {
            return Err(Error::InvalidPath(format!(
                "extension index {target} beyond grid horizon {}",
                self.grid.n_steps()
            )));
        }
        if target == self.end_index {
            return Ok(self.clone());
        }
        let mut values = Vec::with_capacity((target + 1) * self.dim);
        values.extend_from_slice(self.data());
        let last = self.terminal().to_vec();
        for _ in self.end_index..target {
            values.extend_from_slice(&last);
        }
        Path::new(self.grid, self.dim, values)
    }

    /// Pointwise difference after flat-extending both paths to the later end
    /// time. Both paths must share the grid and dimension.
    pub fn aligned_difference(&self, other: &Path) -> Result<Path> {
        check_compatible(self, other)?;
        let target = self.end_index.max(other.end_index);
        let a = self.flat_extend_to_index(target)?;
        let b = other.flat_extend_to_index(target)?;
        let values: Vec<f64> = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| x - y)
            .collect();
        Path::new(self.grid, self.dim, values)
    }

    /// Resample onto a finer grid of the same span by linear interpolation.
    /// Utility for cross-resolution comparisons; not part of the metric.
    pub fn resample(&self, finer: Grid) -> Result<Path> {
        if (finer.t0() - self.grid.t0()).abs() > 1e-12
            || (finer.t_end() - self.grid.t_end()).abs() > 1e-12
        {
            return Err(Error::GridMismatch(
                "resampling requires the same span".into(),
            ));
        }
        if !finer.n_steps().is_multiple_of(self.grid.n_steps()) {
            return Err(Error::GridMismatch(
                "finer grid must refine the coarse one".into(),
            ));
        }
        let ratio = finer.n_steps() / self.grid.n_steps();
        let end = self.end_index * ratio;
        let coarse_step = self.grid.step();
        Path::sample(finer, self.dim, end, |t| {
            let pos = (t - self.grid.t0()) / coarse_step;
            let i = (pos.floor() as usize).min(self.end_index - usize::from(self.end_index > 0));
            let w = pos - i as f64;
            let a = self.value(i);
            let b = self.value((i + 1).min(self.end_index));
            a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
        })
    }
}

fn check_compatible(p: &Path, q: &Path) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    if p.grid != q.grid {
        return Err(Error::GridMismatch(format!(
            "[{}, {}]/{} vs [{}, {}]/{}",
            p.grid.t0(),
            p.grid.t_end(),
            p.grid.n_steps(),
            q.grid.t0(),
            q.grid.t_end(),
            q.grid.n_steps()
        )));
    }
    Ok(())
}

/// Sup norm of a path segment.
pub fn sup_norm(p: &Path) -> f64 {
    p.sup_norm()
}

/// `d_inf` distance: time gap plus sup norm of the aligned difference.
pub fn dist_dinfty(p: &Path, q: &Path) -> Result<f64> {
    let diff = p.aligned_difference(q)?;
    Ok((p.end_time() - q.end_time()).abs() + diff.sup_norm())
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GridRepr {
    t0: f64,
    #[serde(rename = "T")]
    t_end: f64,
    n: usize,
}

/// Compact JSON form `{grid:{t0,T,n}, end_index, values:[[..]]}`.
#[derive(Serialize, Deserialize)]
struct PathRepr {
    grid: GridRepr,
    end_index: usize,
    values: Vec<Vec<f64>>,
}

impl Serialize for Path {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = PathRepr {
            grid: GridRepr {
                t0: self.grid.t0(),
                t_end: self.grid.t_end(),
                n: self.grid.n_steps(),
            },
            end_index: self.end_index,
            values: (0..=self.end_index)
                .map(|i| self.value(i).to_vec())
                .collect(),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Path {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PathRepr::deserialize(d)?;
        let grid = Grid::new(repr.grid.t0, repr.grid.t_end, repr.grid.n)
            .map_err(serde::de::Error::custom)?;
        if repr.values.len() != repr.end_index + 1 {
            return Err(serde::de::Error::custom("values length != end_index + 1"));
        }
        let dim = repr.values.first().map(Vec::len).unwrap_or(0);
        let flat: Vec<f64> = repr.values.into_iter().flatten().collect();
        if flat.len() != (repr.end_index + 1) * dim {
            return Err(serde::de::Error::custom("ragged value rows"));
        }
        Path::new(grid, dim, flat).map_err(serde::de::Error::custom)
    }
}

impl Path {
    /// Columnar CSV with header `time,x1..xd`.
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        wtr.write_record(&header)?;
        for i in 0..=self.end_index {
            let mut rec = vec![format!("{}", self.grid.time(i))];
            rec.extend(self.value(i).iter().map(|v| format!("{v}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read back a path written by [`to_csv`](Self::to_csv). The grid is
    /// reconstructed from the time column; `horizon` extends it past the
    /// stored segment (defaults to the last stored time).
    pub fn from_csv<R: std::io::Read>(r: R, horizon: Option<(f64, usize)>) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let dim = rdr.headers()?.len().saturating_sub(1);
        if dim == 0 {
            return Err(Error::Parse(
                "csv needs time plus at least one component".into(),
            ));
        }
        let mut times = Vec::new();
        let mut flat = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut it = rec.iter();
            let t: f64 = it
                .next()
                .ok_or_else(|| Error::Parse("empty record".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad time: {e}")))?;
            times.push(t);
            for field in it {
                flat.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad value: {e}")))?,
                );
            }
        }
        if times.len() < 2 {
            return Err(Error::Parse("need at least two grid points".into()));
        }
        let t0 = times[0];
        let step = times[1] - times[0];
        let (t_end, n_steps) = horizon.unwrap_or((*times.last().unwrap(), times.len() - 1));
        let grid = Grid::new(t0, t_end, n_steps)?;
        if (grid.step() - step).abs() > 0.5 * step.abs() * 1e-6 {
            return Err(Error::Parse(
                "time column does not match a uniform grid".into(),
            ));
        }
        Path::new(grid, dim, flat)
    }
}
