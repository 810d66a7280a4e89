//! Uniform lattices on the unit box and real-valued functions on them.
//!
//! Points are numbered row-major with the x index varying fastest:
//! `flat = i + n*j (+ n*n*k)`. Interior unknowns inherit the same ordering
//! restricted to interior points, so sparse-matrix column indices are
//! reproducible.

use std::io::Write;
use std::sync::Arc;

use crate::error::{MaError, Result};

/// A closed-form real function of physical coordinates.
pub type Field = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Wrap a closure as a [`Field`].
pub fn field<F>(f: F) -> Field
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

/// Uniform lattice on `[0,1]^dim` with `n` points per side, boundary included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    h: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(MaError::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 3 {
            return Err(MaError::Config(format!(
                "need at least 3 points per side, got {n}"
            )));
        }
        Ok(Self {
            dim,
            n,
            h: 1.0 / (n - 1) as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Total number of lattice points, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of interior points, `(n-2)^dim`.
    pub fn interior_len(&self) -> usize {
        (self.n - 2).pow(self.dim as u32)
    }

    /// Flat index of a lattice multi-index. Unused trailing components are ignored.
    #[inline]
    pub fn flat(&self, idx: [usize; 3]) -> usize {
        let n = self.n;
        match self.dim {
            2 => idx[0] + n * idx[1],
            _ => idx[0] + n * (idx[1] + n * idx[2]),
        }
    }

    /// Multi-index of a flat index; components beyond `dim` are zero.
    #[inline]
    pub fn multi(&self, flat: usize) -> [usize; 3] {
        let n = self.n;
        match self.dim {
            2 => [flat % n, flat / n, 0],
            _ => [flat % n, (flat / n) % n, flat / (n * n)],
        }
    }

    /// Flat index of a signed multi-index, or `None` when it leaves the lattice.
    #[inline]
    pub fn checked_flat(&self, idx: [i64; 3]) -> Option<usize> {
        let n = self.n as i64;
        for &c in &idx[..self.dim] {
            if c < 0 || c >= n {
                return None;
            }
        }
        Some(self.flat([idx[0] as usize, idx[1] as usize, idx[2] as usize]))
    }

    /// Physical coordinates of a point; components beyond `dim` are zero.
    #[inline]
    pub fn coord(&self, flat: usize) -> [f64; 3] {
        let m = self.multi(flat);
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = m[d] as f64 * self.h;
        }
        x
    }

    /// Nearest lattice point to a physical coordinate (clamped to the box).
    pub fn index_of(&self, x: &[f64]) -> usize {
        let mut idx = [0usize; 3];
        for d in 0..self.dim {
            let k = (x[d] / self.h).round();
            idx[d] = k.clamp(0.0, (self.n - 1) as f64) as usize;
        }
        self.flat(idx)
    }

    #[inline]
    pub fn is_boundary(&self, flat: usize) -> bool {
        let m = self.multi(flat);
        m[..self.dim].iter().any(|&c| c == 0 || c == self.n - 1)
    }
}

/// Interior/boundary tag of a lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointTag {
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct PointClass {
    pub tags: Vec<PointTag>,
}

impl PointClass {
    pub fn interior_count(&self) -> usize {
        self.tags.iter().filter(|t| **t == PointTag::Interior).count()
    }

    pub fn boundary_count(&self) -> usize {
        self.tags.len() - self.interior_count()
    }
}

pub fn classify(grid: &GridSpec) -> PointClass {
    let tags = (0..grid.len())
        .map(|p| {
            if grid.is_boundary(p) {
                PointTag::Boundary
            } else {
                PointTag::Interior
            }
        })
        .collect();
    PointClass { tags }
}

/// Numbering of interior points as unknowns, preserving lattice order.
#[derive(Debug, Clone)]
pub struct InteriorMap {
    /// `unknown[p]` is the unknown number of lattice point `p`, if interior.
    unknown: Vec<Option<usize>>,
    /// Lattice index of each unknown.
    points: Vec<usize>,
}

impl InteriorMap {
    pub fn new(grid: &GridSpec) -> Self {
        let mut unknown = vec![None; grid.len()];
        let mut points = Vec::with_capacity(grid.interior_len());
        for (p, slot) in unknown.iter_mut().enumerate() {
            if !grid.is_boundary(p) {
                *slot = Some(points.len());
                points.push(p);
            }
        }
        Self { unknown, points }
    }

    #[inline]
    pub fn unknown(&self, point: usize) -> Option<usize> {
        self.unknown[point]
    }

    #[inline]
    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One real value per lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(MaError::Config(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(non_finite(&grid, index, value));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Scatter per-unknown values into a grid function, zero on the boundary.
    pub fn from_interior(grid: GridSpec, map: &InteriorMap, interior: &[f64]) -> Self {
        let mut out = Self::zeros(grid);
        for (k, &p) in map.points().iter().enumerate() {
            out.values[p] = interior[k];
        }
        out
    }

    /// Values at the interior points, in unknown order.
    pub fn gather_interior(&self, map: &InteriorMap) -> Vec<f64> {
        map.points().iter().map(|&p| self.values[p]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Write as CSV with header `x,y[,z],value`, one row per point in lattice order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let axes = ["x", "y", "z"];
        let mut header: Vec<&str> = axes[..self.grid.dim].to_vec();
        header.push("value");
        w.write_record(&header)?;
        for (p, v) in self.values.iter().enumerate() {
            let x = self.grid.coord(p);
            let mut rec: Vec<String> = x[..self.grid.dim].iter().map(|c| c.to_string()).collect();
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn non_finite(grid: &GridSpec, index: usize, value: f64) -> MaError {
    MaError::NonFinite {
        index,
        coords: grid.coord(index)[..grid.dim()].to_vec(),
        value,
    }
}

/// Evaluate `field` at every lattice point.
pub fn sample<F>(grid: &GridSpec, field: F) -> Result<GridFunction>
where
    F: Fn(&[f64]) -> f64,
{
    let mut values = Vec::with_capacity(grid.len());
    for p in 0..grid.len() {
        let x = grid.coord(p);
        let v = field(&x[..grid.dim()]);
        if !v.is_finite() {
            return Err(non_finite(grid, p, v));
        }
        values.push(v);
    }
    Ok(GridFunction { grid: *grid, values })
}

/// Evaluate `field` at interior points only; boundary entries are zero.
///
/// Used for right-hand sides that may be unbounded on the boundary.
pub fn sample_interior<F>(grid: &GridSpec, field: F) -> Result<GridFunction>
where
    F: Fn(&[f64]) -> f64,
{
    let mut out = GridFunction::zeros(*grid);
    for p in 0..grid.len() {
        if grid.is_boundary(p) {
            continue;
        }
        let x = grid.coord(p);
        let v = field(&x[..grid.dim()]);
        if !v.is_finite() {
            return Err(non_finite(grid, p, v));
        }
        out.values[p] = v;
    }
    Ok(out)
}

/// Multilinear interpolation of `u` at a physical point inside the box.
pub fn interpolate(u: &GridFunction, x: &[f64]) -> f64 {
    let grid = u.grid();
    let dim = grid.dim();
    let top = (grid.n() - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for d in 0..dim {
        let s = (x[d] / grid.h()).clamp(0.0, top);
        let b = s.floor().min(top - 1.0);
        base[d] = b as usize;
        frac[d] = s - b;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut idx = base;
        let mut weight = 1.0;
        for d in 0..dim {
            if corner & (1 << d) != 0 {
                idx[d] += 1;
                weight *= frac[d];
            } else {
                weight *= 1.0 - frac[d];
            }
        }
        if weight != 0.0 {
            acc += weight * u.values()[grid.flat(idx)];
        }
    }
    acc
}

/// Resample `u` onto another lattice by multilinear interpolation.
pub fn resample(u: &GridFunction, target: &GridSpec) -> GridFunction {
    let mut out = GridFunction::zeros(*target);
    for p in 0..target.len() {
        let x = target.coord(p);
        out.values[p] = interpolate(u, &x[..target.dim()]);
    }
    out
}
