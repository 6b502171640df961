//! Hexahedral control grids.
//!
//! A [`ControlGrid`] holds the `(r+1)³` control points of one resolution
//! level. Nodes are stored flat with `idx(i, j, k) = (i·(r+1) + j)·(r+1) + k`,
//! `i` running along `u`, `j` along `v` and `k` along `w` (fastest). The
//! lattice topology never changes; only the positions move.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid resolution must be at least 1")]
    ZeroResolution,
    #[error("grid bounds must satisfy lo < hi (got lo={lo}, hi={hi})")]
    InvalidBounds { lo: f64, hi: f64 },
    #[error("expected {expected} control points, got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("operation needs resolution >= {needed}, grid has {got}")]
    ResolutionTooLow { needed: usize, got: usize },
    #[error("unsupported grid format version {0}")]
    Version(u32),
    #[error("flat coordinate array length {0} is not a multiple of 3")]
    FlatLength(usize),
}

/// Number of nodes of a resolution-`r` lattice.
pub fn node_count(resolution: usize) -> usize {
    let n = resolution + 1;
    n * n * n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridJson", into = "GridJson")]
pub struct ControlGrid {
    resolution: usize,
    points: Vec<Vec3>,
}

impl ControlGrid {
    pub fn new(resolution: usize, points: Vec<Vec3>) -> Result<Self, GridError> {
        if resolution == 0 {
            return Err(GridError::ZeroResolution);
        }
        let expected = node_count(resolution);
        if points.len() != expected {
            return Err(GridError::PointCount {
                expected,
                got: points.len(),
            });
        }
        Ok(Self { resolution, points })
    }

    /// Regular lattice over `[lo, hi]³`.
    pub fn regular(resolution: usize, lo: f64, hi: f64) -> Result<Self, GridError> {
        if resolution == 0 {
            return Err(GridError::ZeroResolution);
        }
        if !(lo < hi) {
            return Err(GridError::InvalidBounds { lo, hi });
        }
        let r = resolution as f64;
        let n = resolution + 1;
        let mut points = Vec::with_capacity(node_count(resolution));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    points.push(Vec3::new(
                        lo + (hi - lo) * (i as f64) / r,
                        lo + (hi - lo) * (j as f64) / r,
                        lo + (hi - lo) * (k as f64) / r,
                    ));
                }
            }
        }
        Ok(Self { resolution, points })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Vec3] {
        &mut self.points
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        lattice_index(self.resolution, i, j, k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.points[self.idx(i, j, k)]
    }

    /// Lattice coordinates of a flat node index.
    pub fn node_coords(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.resolution + 1;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let (i, j, k) = self.node_coords(idx);
        let r = self.resolution;
        i == 0 || i == r || j == 0 || j == r || k == 0 || k == r
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    /// The cell whose lowest corner is node `(i, j, k)`.
    pub fn cell(&self, i: usize, j: usize, k: usize) -> Cell {
        let ids = cell_corner_indices(self.resolution, i, j, k);
        Cell {
            corners: ids.map(|id| self.points[id]),
        }
    }

    /// Cells in lexicographic `(i, j, k)` order, `k` fastest.
    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize, usize), Cell)> + '_ {
        let r = self.resolution;
        (0..r).flat_map(move |i| {
            (0..r).flat_map(move |j| (0..r).map(move |k| ((i, j, k), self.cell(i, j, k))))
        })
    }

    /// Positions as `[x0, y0, z0, x1, ...]` in node order.
    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.points)
    }

    pub fn from_flat(resolution: usize, flat: &[f64]) -> Result<Self, GridError> {
        Self::new(resolution, unflatten(flat)?)
    }

    /// Pointwise `self + scale · offsets`.
    pub fn offset_by(&self, offsets: &[Vec3], scale: f64) -> Result<Self, GridError> {
        if offsets.len() != self.points.len() {
            return Err(GridError::PointCount {
                expected: self.points.len(),
                got: offsets.len(),
            });
        }
        let points = self
            .points
            .iter()
            .zip(offsets)
            .map(|(p, d)| p + d * scale)
            .collect();
        Ok(Self {
            resolution: self.resolution,
            points,
        })
    }

    /// Trilinear Jacobian determinants at the 8 corners of every cell; returns
    /// the cells where any of them is non-positive.
    pub fn inverted_cells(&self) -> Vec<(usize, usize, usize)> {
        self.cells()
            .filter(|(_, cell)| {
                (0..8).any(|c| {
                    let uvw = corner_param(c);
                    cell.jacobian(uvw.x, uvw.y, uvw.z).determinant() <= 0.0
                })
            })
            .map(|(ijk, _)| ijk)
            .collect()
    }
}

#[inline]
pub fn lattice_index(resolution: usize, i: usize, j: usize, k: usize) -> usize {
    let n = resolution + 1;
    (i * n + j) * n + k
}

/// Flat node indices of the 8 corners of cell `(i, j, k)`, ordered by local
/// `(a, b, c) ∈ {0,1}³` with `c` fastest.
pub fn cell_corner_indices(resolution: usize, i: usize, j: usize, k: usize) -> [usize; 8] {
    std::array::from_fn(|c| {
        let (a, b, d) = (c >> 2, (c >> 1) & 1, c & 1);
        lattice_index(resolution, i + a, j + b, k + d)
    })
}

fn corner_param(c: usize) -> Vec3 {
    Vec3::new((c >> 2) as f64, ((c >> 1) & 1) as f64, (c & 1) as f64)
}

pub fn flatten(points: &[Vec3]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(flat: &[f64]) -> Result<Vec<Vec3>, GridError> {
    if flat.len() % 3 != 0 {
        return Err(GridError::FlatLength(flat.len()));
    }
    Ok(flat
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect())
}

/// Eight corners of one hexahedral cell, `w` fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub corners: [Vec3; 8],
}

/// Blend weights of the 8 corners at local parameters `(u, v, w)`.
#[inline]
pub fn trilinear_weights(u: f64, v: f64, w: f64) -> [f64; 8] {
    let us = [1.0 - u, u];
    let vs = [1.0 - v, v];
    let ws = [1.0 - w, w];
    std::array::from_fn(|c| us[c >> 2] * vs[(c >> 1) & 1] * ws[c & 1])
}

impl Cell {
    pub fn unit() -> Self {
        Self {
            corners: std::array::from_fn(corner_param),
        }
    }

    /// Trilinear blend of the corners. Defined for any `(u, v, w)`.
    pub fn eval(&self, u: f64, v: f64, w: f64) -> Vec3 {
        let wts = trilinear_weights(u, v, w);
        let mut out = Vec3::zeros();
        for (p, wt) in self.corners.iter().zip(wts) {
            out += p * wt;
        }
        out
    }

    /// Columns are ∂f/∂u, ∂f/∂v, ∂f/∂w.
    pub fn jacobian(&self, u: f64, v: f64, w: f64) -> Matrix3<f64> {
        let p = &self.corners;
        let (u0, u1) = (1.0 - u, u);
        let (v0, v1) = (1.0 - v, v);
        let (w0, w1) = (1.0 - w, w);
        let du = (p[4] - p[0]) * v0 * w0
            + (p[5] - p[1]) * v0 * w1
            + (p[6] - p[2]) * v1 * w0
            + (p[7] - p[3]) * v1 * w1;
        let dv = (p[2] - p[0]) * u0 * w0
            + (p[3] - p[1]) * u0 * w1
            + (p[6] - p[4]) * u1 * w0
            + (p[7] - p[5]) * u1 * w1;
        let dw = (p[1] - p[0]) * u0 * v0
            + (p[3] - p[2]) * u0 * v1
            + (p[5] - p[4]) * u1 * v0
            + (p[7] - p[6]) * u1 * v1;
        Matrix3::from_columns(&[du, dv, dw])
    }

    pub fn aabb(&self) -> (Vec3, Vec3) {
        let mut lo = self.corners[0];
        let mut hi = self.corners[0];
        for p in &self.corners[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

/// Doubles the resolution. Even-index nodes copy the input, edge, face and
/// body nodes take the mean of their 2, 4 or 8 parent nodes.
pub fn subdivide(grid: &ControlGrid) -> ControlGrid {
    let r = grid.resolution;
    let r2 = 2 * r;
    let n2 = r2 + 1;
    let parents = |t: usize| -> ([usize; 2], usize) {
        if t % 2 == 0 {
            ([t / 2, t / 2], 1)
        } else {
            ([(t - 1) / 2, (t + 1) / 2], 2)
        }
    };
    let mut points = Vec::with_capacity(n2 * n2 * n2);
    for i in 0..n2 {
        let (pi, ni) = parents(i);
        for j in 0..n2 {
            let (pj, nj) = parents(j);
            for k in 0..n2 {
                let (pk, nk) = parents(k);
                let count = ni * nj * nk;
                if count == 1 {
                    points.push(grid.at(pi[0], pj[0], pk[0]));
                    continue;
                }
                let mut sum = Vec3::zeros();
                for &a in &pi[..ni] {
                    for &b in &pj[..nj] {
                        for &c in &pk[..nk] {
                            sum += grid.at(a, b, c);
                        }
                    }
                }
                points.push(sum / count as f64);
            }
        }
    }
    ControlGrid {
        resolution: r2,
        points,
    }
}

/// Finite-difference partials of the grid map with respect to `(u, v, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partial {
    U,
    V,
    W,
    UU,
    VV,
    WW,
    UV,
    VW,
    UW,
}

impl Partial {
    pub const FIRST: [Partial; 3] = [Partial::U, Partial::V, Partial::W];
    pub const PURE_SECOND: [Partial; 3] = [Partial::UU, Partial::VV, Partial::WW];
    pub const MIXED_SECOND: [Partial; 3] = [Partial::UV, Partial::VW, Partial::UW];

    fn is_second(self) -> bool {
        !matches!(self, Partial::U | Partial::V | Partial::W)
    }
}

/// A linear combination of at most four nodes.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    terms: [(usize, f64); 4],
    len: usize,
}

impl Stencil {
    fn push(&mut self, idx: usize, coef: f64) {
        self.terms[self.len] = (idx, coef);
        self.len += 1;
    }

    pub fn terms(&self) -> &[(usize, f64)] {
        &self.terms[..self.len]
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec3 {
        let mut out = Vec3::zeros();
        for &(idx, c) in self.terms() {
            out += points[idx] * c;
        }
        out
    }
}

/// Finite-difference stencil of `partial` at node `(i, j, k)` with parameter
/// spacing `h = 1/r`.
///
/// First partials are central in the interior and one-sided on the boundary.
/// Second partials reuse the nearest interior stencil on boundary nodes, so
/// they need `r >= 2`.
pub fn stencil(resolution: usize, partial: Partial, node: [usize; 3]) -> Stencil {
    let r = resolution;
    debug_assert!(r >= 1 && (r >= 2 || !partial.is_second()));
    let h = 1.0 / r as f64;
    let mut st = Stencil {
        terms: [(0, 0.0); 4],
        len: 0,
    };
    let at = |n: [usize; 3]| lattice_index(r, n[0], n[1], n[2]);
    let with = |axis: usize, t: usize| {
        let mut n = node;
        n[axis] = t;
        n
    };
    let clamp_inner = |t: usize| t.clamp(1, r - 1);
    match partial {
        Partial::U | Partial::V | Partial::W => {
            let axis = partial as usize;
            let t = node[axis];
            if t == 0 {
                st.push(at(with(axis, 1)), 1.0 / h);
                st.push(at(with(axis, 0)), -1.0 / h);
            } else if t == r {
                st.push(at(with(axis, r)), 1.0 / h);
                st.push(at(with(axis, r - 1)), -1.0 / h);
            } else {
                st.push(at(with(axis, t + 1)), 0.5 / h);
                st.push(at(with(axis, t - 1)), -0.5 / h);
            }
        }
        Partial::UU | Partial::VV | Partial::WW => {
            let axis = partial as usize - 3;
            let c = clamp_inner(node[axis]);
            let h2 = h * h;
            st.push(at(with(axis, c + 1)), 1.0 / h2);
            st.push(at(with(axis, c)), -2.0 / h2);
            st.push(at(with(axis, c - 1)), 1.0 / h2);
        }
        Partial::UV | Partial::VW | Partial::UW => {
            let (a, b) = match partial {
                Partial::UV => (0, 1),
                Partial::VW => (1, 2),
                _ => (0, 2),
            };
            let ca = clamp_inner(node[a]);
            let cb = clamp_inner(node[b]);
            let q = 0.25 / (h * h);
            let corner = |da: usize, db: usize| {
                let mut n = node;
                n[a] = ca + da - 1;
                n[b] = cb + db - 1;
                at(n)
            };
            st.push(corner(2, 2), q);
            st.push(corner(2, 0), -q);
            st.push(corner(0, 2), -q);
            st.push(corner(0, 0), q);
        }
    }
    st
}

/// All nine partials at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDerivatives {
    /// `V_u, V_v, V_w`
    pub first: [Vec3; 3],
    /// `V_uu, V_vv, V_ww`
    pub pure: [Vec3; 3],
    /// `V_uv, V_vw, V_uw`
    pub mixed: [Vec3; 3],
}

/// First partials at every node. Valid for any `r >= 1`.
pub fn first_derivatives(grid: &ControlGrid) -> Vec<[Vec3; 3]> {
    let r = grid.resolution;
    (0..grid.points.len())
        .map(|idx| {
            let (i, j, k) = grid.node_coords(idx);
            Partial::FIRST.map(|p| stencil(r, p, [i, j, k]).apply(&grid.points))
        })
        .collect()
}

/// First and second partials at every node.
pub fn grid_derivatives(grid: &ControlGrid) -> Result<Vec<NodeDerivatives>, GridError> {
    let r = grid.resolution;
    if r < 2 {
        return Err(GridError::ResolutionTooLow { needed: 2, got: r });
    }
    Ok((0..grid.points.len())
        .map(|idx| {
            let (i, j, k) = grid.node_coords(idx);
            let node = [i, j, k];
            let eval = |p: Partial| stencil(r, p, node).apply(&grid.points);
            NodeDerivatives {
                first: Partial::FIRST.map(eval),
                pure: Partial::PURE_SECOND.map(eval),
                mixed: Partial::MIXED_SECOND.map(eval),
            }
        })
        .collect())
}

/// Ball centers filling every cell on a regular `s³` sub-lattice of its
/// parameter domain.
///
/// Center `cell · s³ + local` sits at the trilinear image of
/// `((a+½)/s, (b+½)/s, (c+½)/s)`, where `local = (a·s + b)·s + c`; it is the
/// fixed blend `weights[local]` of the cell's corners.
#[derive(Debug, Clone)]
pub struct BallCovering {
    pub per_axis: usize,
    pub weights: Vec<[f64; 8]>,
    pub centers: Vec<Vec3>,
}

impl BallCovering {
    pub fn balls_per_cell(&self) -> usize {
        self.weights.len()
    }

    /// Splits a center index into `(cell index, local index)`.
    pub fn locate(&self, center: usize) -> (usize, usize) {
        let m = self.balls_per_cell();
        (center / m, center % m)
    }
}

pub fn covering_weights(per_axis: usize) -> Vec<[f64; 8]> {
    let s = per_axis as f64;
    let mut weights = Vec::with_capacity(per_axis.pow(3));
    for a in 0..per_axis {
        for b in 0..per_axis {
            for c in 0..per_axis {
                weights.push(trilinear_weights(
                    (a as f64 + 0.5) / s,
                    (b as f64 + 0.5) / s,
                    (c as f64 + 0.5) / s,
                ));
            }
        }
    }
    weights
}

/// Corner node indices of the flat cell index `cell` (`k` fastest).
pub fn cell_corners_flat(resolution: usize, cell: usize) -> [usize; 8] {
    let r = resolution;
    cell_corner_indices(r, cell / (r * r), (cell / r) % r, cell % r)
}

pub fn ball_covering(grid: &ControlGrid, per_axis: usize) -> BallCovering {
    assert!(per_axis >= 1, "covering needs at least one ball per axis");
    let weights = covering_weights(per_axis);
    let mut centers = Vec::with_capacity(grid.cell_count() * weights.len());
    for cell in 0..grid.cell_count() {
        let ids = cell_corners_flat(grid.resolution, cell);
        for w in &weights {
            let mut c = Vec3::zeros();
            for (id, wt) in ids.iter().zip(w) {
                c += grid.points[*id] * *wt;
            }
            centers.push(c);
        }
    }
    BallCovering {
        per_axis,
        weights,
        centers,
    }
}

#[derive(Serialize, Deserialize)]
struct GridJson {
    version: u32,
    resolution: usize,
    points: Vec<f64>,
}

impl TryFrom<GridJson> for ControlGrid {
    type Error = GridError;

    fn try_from(g: GridJson) -> Result<Self, GridError> {
        if g.version != 1 {
            return Err(GridError::Version(g.version));
        }
        ControlGrid::from_flat(g.resolution, &g.points)
    }
}

impl From<ControlGrid> for GridJson {
    fn from(g: ControlGrid) -> Self {
        GridJson {
            version: 1,
            resolution: g.resolution,
            points: g.to_flat(),
        }
    }
}
