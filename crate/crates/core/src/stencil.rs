//! Lattice directions, orthogonal direction bases, and second directional
//! differences on wide stencils.
//!
//! A second difference along an integer direction `ν` at an interior point
//! uses the two lattice neighbours `x ± νh` when both exist. When an arm
//! leaves the box it is shortened to the boundary crossing, and the
//! boundary value there is taken from the Dirichlet trace. The resulting
//! three-point formula on unequal arms `ρ₊, ρ₋` is
//!
//! ```text
//! 2 [ u₊ / (ρ₊(ρ₊+ρ₋)) + u₋ / (ρ₋(ρ₊+ρ₋)) − u₀ / (ρ₊ρ₋) ]
//! ```
//!
//! which reduces to `(u₊ + u₋ − 2u₀) / (|ν|²h²)` for full arms and is exact
//! on quadratics along the line.

use std::collections::HashSet;
use std::fmt;

use crate::error::{MaError, Result};
use crate::grid::{Field, GridFunction, GridSpec, InteriorMap};

/// Reduced integer lattice direction with canonical sign.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    v: [i64; 3],
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Direction {
    /// Reduce by the gcd and flip so the first nonzero component is positive.
    /// Returns `None` for the zero vector.
    pub fn new(components: &[i64]) -> Option<Self> {
        let mut v = [0i64; 3];
        v[..components.len()].copy_from_slice(components);
        let g = v.iter().fold(0, |acc, &c| gcd(acc, c));
        if g == 0 {
            return None;
        }
        for c in v.iter_mut() {
            *c /= g;
        }
        if let Some(&first) = v.iter().find(|&&c| c != 0) {
            if first < 0 {
                for c in v.iter_mut() {
                    *c = -*c;
                }
            }
        }
        Some(Self { v })
    }

    pub fn components(&self) -> [i64; 3] {
        self.v
    }

    pub fn norm_sq(&self) -> i64 {
        self.v.iter().map(|c| c * c).sum()
    }

    pub fn dot(&self, other: &Direction) -> i64 {
        self.v.iter().zip(other.v.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn chebyshev(&self) -> i64 {
        self.v.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    fn nonzero_count(&self) -> usize {
        self.v.iter().filter(|&&c| c != 0).count()
    }
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.v[0], self.v[1], self.v[2])
    }
}

/// Which lattice directions a stencil of a given width includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DirectionMode {
    /// Every reduced direction with Chebyshev norm ≤ width.
    #[default]
    Full,
    /// Axes and face diagonals only (3D 19-point stencil at width 1).
    FaceDiagonals,
}

/// All reduced, sign-canonical directions with Chebyshev norm ≤ `width`.
///
/// Coordinate axes come first, the rest are ordered by length and then
/// lexicographically, so the axis basis is always basis 0.
pub fn build_directions(dim: usize, width: usize, mode: DirectionMode) -> Vec<Direction> {
    let w = width.max(1) as i64;
    let mut seen = HashSet::new();
    let mut dirs = Vec::new();
    let range = |d: usize| if d < dim { -w..=w } else { 0..=0 };
    for a in range(0) {
        for b in range(1) {
            for c in range(2) {
                let Some(dir) = Direction::new(&[a, b, c]) else {
                    continue;
                };
                if mode == DirectionMode::FaceDiagonals
                    && (dir.chebyshev() > 1 || dir.nonzero_count() > 2)
                {
                    continue;
                }
                if seen.insert(dir) {
                    dirs.push(dir);
                }
            }
        }
    }
    let is_axis = |d: &Direction| d.nonzero_count() == 1;
    dirs.sort_by(|p, q| {
        let key = |d: &Direction| {
            let axis_rank = if is_axis(d) {
                // e_x, e_y, e_z in order
                d.v.iter().position(|&c| c != 0).unwrap() as i64
            } else {
                i64::MAX
            };
            (axis_rank, d.norm_sq(), [-d.v[0], -d.v[1], -d.v[2]])
        };
        key(p).cmp(&key(q))
    });
    dirs
}

/// Number of points in the stencil formed by the centre and `±ν` for each direction.
pub fn stencil_point_count(directions: &[Direction]) -> usize {
    1 + 2 * directions.len()
}

/// Directions together with every mutually orthogonal `d`-tuple drawn from them.
#[derive(Debug, Clone)]
pub struct StencilBasisSet {
    pub dim: usize,
    pub width: usize,
    pub directions: Vec<Direction>,
    /// Each entry lists `dim` indices into `directions`, pairwise orthogonal.
    pub bases: Vec<Vec<usize>>,
}

impl StencilBasisSet {
    /// Directions and bases for the default stencil: full width-`width`
    /// set in 2D, axes plus face diagonals in 3D.
    pub fn standard(dim: usize, width: usize) -> Result<Self> {
        let mode = if dim == 3 {
            DirectionMode::FaceDiagonals
        } else {
            DirectionMode::Full
        };
        build_orthogonal_bases(&build_directions(dim, width, mode), dim)
    }
}

pub fn build_orthogonal_bases(directions: &[Direction], dim: usize) -> Result<StencilBasisSet> {
    let k = directions.len();
    let mut bases = Vec::new();
    match dim {
        2 => {
            for i in 0..k {
                for j in i + 1..k {
                    if directions[i].dot(&directions[j]) == 0 {
                        bases.push(vec![i, j]);
                    }
                }
            }
        }
        3 => {
            for i in 0..k {
                for j in i + 1..k {
                    if directions[i].dot(&directions[j]) != 0 {
                        continue;
                    }
                    for l in j + 1..k {
                        if directions[i].dot(&directions[l]) == 0
                            && directions[j].dot(&directions[l]) == 0
                        {
                            bases.push(vec![i, j, l]);
                        }
                    }
                }
            }
        }
        _ => return Err(MaError::Config(format!("unsupported dimension {dim}"))),
    }
    if bases.is_empty() {
        return Err(MaError::Config(
            "direction set contains no complete orthogonal basis".into(),
        ));
    }
    let width = directions.iter().map(|d| d.chebyshev()).max().unwrap_or(0) as usize;
    Ok(StencilBasisSet {
        dim,
        width,
        directions: directions.to_vec(),
        bases,
    })
}

/// Source of Dirichlet values at off-lattice boundary crossings.
#[derive(Clone)]
pub enum BoundaryTrace {
    /// Evaluate the closed-form trace at the crossing.
    Exact(Field),
    /// Multilinear interpolation between the boundary lattice points of the
    /// face containing the crossing, using the current boundary values of `u`.
    Lattice,
}

impl fmt::Debug for BoundaryTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryTrace::Exact(_) => f.write_str("Exact"),
            BoundaryTrace::Lattice => f.write_str("Lattice"),
        }
    }
}

/// Far end of one arm of a second difference.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmEnd {
    Lattice(usize),
    /// Boundary crossing with a value fixed by the exact trace.
    Fixed { coords: [f64; 3], value: f64 },
    /// Boundary crossing interpolated from boundary lattice points.
    Interpolated(Vec<(usize, f64)>),
}

impl ArmEnd {
    #[inline]
    fn value(&self, u: &[f64]) -> f64 {
        match self {
            ArmEnd::Lattice(p) => u[*p],
            ArmEnd::Fixed { value, .. } => *value,
            ArmEnd::Interpolated(w) => w.iter().map(|&(p, c)| c * u[p]).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub end: ArmEnd,
    /// Physical length of the arm.
    pub length: f64,
}

/// Both arms of a second difference at a fixed centre along a fixed direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmPair {
    pub plus: Arm,
    pub minus: Arm,
    /// Weights `(w₊, w₋, w₀)` with value `w₊u₊ + w₋u₋ − w₀u₀`.
    pub weights: (f64, f64, f64),
}

impl ArmPair {
    fn new(plus: Arm, minus: Arm) -> Self {
        let (rp, rm) = (plus.length, minus.length);
        let weights = (2.0 / (rp * (rp + rm)), 2.0 / (rm * (rp + rm)), 2.0 / (rp * rm));
        Self { plus, minus, weights }
    }

    #[inline]
    pub fn apply(&self, u: &[f64], centre: usize) -> f64 {
        let (wp, wm, w0) = self.weights;
        wp * self.plus.end.value(u) + wm * self.minus.end.value(u) - w0 * u[centre]
    }

    /// Centre value at which the second difference vanishes: the linear
    /// interpolant of the two arm ends.
    #[inline]
    pub fn chord_value(&self, u: &[f64]) -> f64 {
        let (wp, wm, w0) = self.weights;
        (wp * self.plus.end.value(u) + wm * self.minus.end.value(u)) / w0
    }

    pub fn is_full(&self) -> bool {
        matches!(self.plus.end, ArmEnd::Lattice(_)) && matches!(self.minus.end, ArmEnd::Lattice(_))
    }

    /// Visit the lattice-point coefficients of the neighbour arms.
    #[inline]
    pub fn for_each_neighbor<F: FnMut(usize, f64)>(&self, mut visit: F) {
        let (wp, wm, _) = self.weights;
        for (arm, w) in [(&self.plus, wp), (&self.minus, wm)] {
            match &arm.end {
                ArmEnd::Lattice(p) => visit(*p, w),
                ArmEnd::Fixed { .. } => {}
                ArmEnd::Interpolated(ws) => {
                    for &(p, c) in ws {
                        visit(p, w * c);
                    }
                }
            }
        }
    }
}

fn build_arm(grid: &GridSpec, centre: [usize; 3], step: [i64; 3], norm: f64, trace: &BoundaryTrace) -> Arm {
    let dim = grid.dim();
    let top = (grid.n() - 1) as i64;
    let mut t = 1.0f64;
    let mut limiting = None;
    for c in 0..dim {
        let s = step[c];
        if s == 0 {
            continue;
        }
        let room = if s > 0 { top - centre[c] as i64 } else { centre[c] as i64 };
        let tc = room as f64 / s.abs() as f64;
        if tc < t {
            t = tc;
            limiting = Some(c);
        }
    }
    let h = grid.h();
    let Some(face_axis) = limiting else {
        let idx = [
            (centre[0] as i64 + step[0]) as usize,
            (centre[1] as i64 + step[1]) as usize,
            (centre[2] as i64 + step[2]) as usize,
        ];
        return Arm {
            end: ArmEnd::Lattice(grid.flat(idx)),
            length: norm * h,
        };
    };
    // Crossing point in index coordinates, snapped onto the face.
    let mut q = [0.0f64; 3];
    for c in 0..dim {
        q[c] = centre[c] as f64 + t * step[c] as f64;
    }
    q[face_axis] = if step[face_axis] > 0 { top as f64 } else { 0.0 };
    let length = t * norm * h;
    let end = match trace {
        BoundaryTrace::Exact(g) => {
            let mut x = [0.0; 3];
            for c in 0..dim {
                x[c] = q[c] * h;
            }
            ArmEnd::Fixed {
                coords: x,
                value: g(&x[..dim]),
            }
        }
        BoundaryTrace::Lattice => ArmEnd::Interpolated(face_weights(grid, &q)),
    };
    Arm { end, length }
}

/// Multilinear weights of lattice points surrounding a point given in index coordinates.
fn face_weights(grid: &GridSpec, q: &[f64; 3]) -> Vec<(usize, f64)> {
    let dim = grid.dim();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for c in 0..dim {
        let b = q[c].floor();
        let f = q[c] - b;
        if f < 1e-12 {
            base[c] = b as usize;
        } else if f > 1.0 - 1e-12 {
            base[c] = b as usize + 1;
        } else {
            base[c] = b as usize;
            frac[c] = f;
        }
    }
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(4);
    for corner in 0..(1usize << dim) {
        let mut idx = base;
        let mut w = 1.0;
        let mut skip = false;
        for c in 0..dim {
            let hi = corner & (1 << c) != 0;
            if frac[c] == 0.0 {
                if hi {
                    skip = true;
                    break;
                }
                continue;
            }
            if hi {
                idx[c] += 1;
                w *= frac[c];
            } else {
                w *= 1.0 - frac[c];
            }
        }
        if !skip && w > 0.0 {
            out.push((grid.flat(idx), w));
        }
    }
    out
}

/// Arms of the second difference at `point` along `dir`.
pub fn arm_pair(grid: &GridSpec, point: usize, dir: &Direction, trace: &BoundaryTrace) -> ArmPair {
    let centre = grid.multi(point);
    let v = dir.components();
    let norm = (dir.norm_sq() as f64).sqrt();
    let plus = build_arm(grid, centre, v, norm, trace);
    let minus = build_arm(grid, centre, [-v[0], -v[1], -v[2]], norm, trace);
    ArmPair::new(plus, minus)
}

/// A node used by a second difference.
#[derive(Debug, Clone, PartialEq)]
pub enum StencilNode {
    Point(usize),
    BoundarySample([f64; 3]),
}

/// Value of a second directional difference and the coefficients that produced it.
#[derive(Debug, Clone)]
pub struct SecondDifference {
    pub value: f64,
    pub coefficients: Vec<(StencilNode, f64)>,
}

/// Approximate `∂²u/∂ν²` at interior point `point`.
pub fn second_difference(
    u: &GridFunction,
    point: usize,
    dir: &Direction,
    trace: &BoundaryTrace,
) -> SecondDifference {
    let grid = u.grid();
    let pair = arm_pair(grid, point, dir, trace);
    let value = pair.apply(u.values(), point);
    let mut coefficients = Vec::with_capacity(3);
    let (wp, wm, w0) = pair.weights;
    for (arm, w) in [(&pair.plus, wp), (&pair.minus, wm)] {
        match &arm.end {
            ArmEnd::Lattice(p) => coefficients.push((StencilNode::Point(*p), w)),
            ArmEnd::Fixed { coords, .. } => {
                coefficients.push((StencilNode::BoundarySample(*coords), w))
            }
            ArmEnd::Interpolated(ws) => {
                for &(p, c) in ws {
                    coefficients.push((StencilNode::Point(p), w * c));
                }
            }
        }
    }
    coefficients.push((StencilNode::Point(point), -w0));
    SecondDifference {
        value,
        coefficients,
    }
}

/// Arm pairs for every interior point and every direction, built once per
/// grid and reused by residual and Jacobian evaluation.
#[derive(Debug, Clone)]
pub struct StencilTable {
    grid: GridSpec,
    directions: Vec<Direction>,
    pairs: Vec<ArmPair>,
}

impl StencilTable {
    pub fn new(grid: &GridSpec, map: &InteriorMap, directions: &[Direction], trace: &BoundaryTrace) -> Self {
        let mut pairs = Vec::with_capacity(map.len() * directions.len());
        for &p in map.points() {
            for d in directions {
                pairs.push(arm_pair(grid, p, d, trace));
            }
        }
        Self {
            grid: *grid,
            directions: directions.to_vec(),
            pairs,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// Arm pair of interior unknown `k` along direction index `d`.
    #[inline]
    pub fn pair(&self, k: usize, d: usize) -> &ArmPair {
        &self.pairs[k * self.directions.len() + d]
    }
}
