//! Expressing shapes in grid coordinates.
//!
//! The exact route inverts the trilinear map of the cell containing each point
//! with Newton's method. The default route fits a thin-plate spline taking the
//! grid's control points to their targets, which is smooth and defined for
//! points outside the grid too.

use std::cell::OnceCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, ControlGrid, Vec3};
use crate::shape_io::SampledShape;
use crate::tps::{TpsError, TpsMap};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 30;
const DOMAIN_SLACK: f64 = 1e-9;
const AABB_INFLATE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error(transparent)]
    Tps(#[from] TpsError),
    #[error("grid resolutions differ (source {source_r}, target {target_r})")]
    ResolutionMismatch { source_r: usize, target_r: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpMethod {
    #[default]
    Tps,
    Exact,
}

impl std::str::FromStr for WarpMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tps" => Ok(Self::Tps),
            "exact" => Ok(Self::Exact),
            other => Err(format!("unknown method {other:?} (expected tps or exact)")),
        }
    }
}

/// Default TPS ridge for `n` control points.
pub fn default_tps_lambda(n: usize) -> f64 {
    1e-8 * n as f64
}

/// Local coordinates `(u, v, w)` with `cell.eval(u, v, w) = q`, or `None`
/// when Newton fails to converge, hits a singular Jacobian, or lands outside
/// the cell.
pub fn exact_local_coords(cell: &Cell, q: &Vec3, tol: f64, max_iter: usize) -> Option<Vec3> {
    let mut uvw = Vec3::repeat(0.5);
    let mut residual = cell.eval(uvw.x, uvw.y, uvw.z) - q;
    for _ in 0..max_iter {
        if residual.norm() < tol {
            break;
        }
        let jac = cell.jacobian(uvw.x, uvw.y, uvw.z);
        let step = jac.lu().solve(&residual)?;
        uvw -= step;
        if !uvw.iter().all(|x| x.is_finite()) {
            return None;
        }
        residual = cell.eval(uvw.x, uvw.y, uvw.z) - q;
    }
    if !(residual.norm() < tol) {
        return None;
    }
    if uvw.iter().any(|&x| !(-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x)) {
        return None;
    }
    Some(uvw.map(|x| x.clamp(0.0, 1.0)))
}

/// Where a point sits inside a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridLocation {
    pub cell: (usize, usize, usize),
    pub local: Vec3,
    /// `((i + u)/r, (j + v)/r, (k + w)/r)`.
    pub global: Vec3,
}

/// Finds, for every point, the lowest-index cell whose trilinear map reaches
/// it. Points outside the grid come back as `None`.
pub fn locate_and_register(grid: &ControlGrid, points: &[Vec3]) -> Vec<Option<GridLocation>> {
    let r = grid.resolution() as f64;
    let cells: Vec<((usize, usize, usize), Cell, Vec3, Vec3)> = grid
        .cells()
        .map(|(ijk, cell)| {
            let (lo, hi) = cell.aabb();
            (ijk, cell, lo.add_scalar(-AABB_INFLATE), hi.add_scalar(AABB_INFLATE))
        })
        .collect();
    points
        .par_iter()
        .map(|q| {
            cells.iter().find_map(|(ijk, cell, lo, hi)| {
                if (0..3).any(|a| q[a] < lo[a] || q[a] > hi[a]) {
                    return None;
                }
                let local = exact_local_coords(cell, q, NEWTON_TOL, NEWTON_MAX_ITER)?;
                let global = Vec3::new(
                    (ijk.0 as f64 + local.x) / r,
                    (ijk.1 as f64 + local.y) / r,
                    (ijk.2 as f64 + local.z) / r,
                );
                Some(GridLocation {
                    cell: *ijk,
                    local,
                    global,
                })
            })
        })
        .collect()
}

/// Evaluates the piecewise-trilinear grid map at global coordinates in
/// `[0,1]³`; coordinates outside extend the polynomial of the nearest cell.
pub fn grid_map(grid: &ControlGrid, global: &Vec3) -> Vec3 {
    let r = grid.resolution();
    let mut ijk = [0usize; 3];
    let mut local = Vec3::zeros();
    for a in 0..3 {
        let t = global[a] * r as f64;
        let i = (t.floor().max(0.0) as usize).min(r - 1);
        ijk[a] = i;
        local[a] = t - i as f64;
    }
    grid.cell(ijk[0], ijk[1], ijk[2]).eval(local.x, local.y, local.z)
}

fn warn_inverted(grid: &ControlGrid, role: &str) {
    let bad = grid.inverted_cells();
    if !bad.is_empty() {
        tracing::warn!(
            cells = ?bad,
            "{role} grid has {} cell(s) with a non-positive trilinear Jacobian",
            bad.len()
        );
    }
}

fn fit_grid_tps(from: &ControlGrid, to: &ControlGrid, lambda: Option<f64>) -> Result<TpsMap, TpsError> {
    let n = from.points().len();
    TpsMap::fit(from.points(), to.points(), lambda.unwrap_or_else(|| default_tps_lambda(n)))
}

/// Warps a shape so that its grid becomes the regular lattice on `[0,1]³`.
///
/// With [`WarpMethod::Exact`], points inside the grid use their exact global
/// coordinates and points outside fall back to the TPS warp.
pub fn cubify(
    grid: &ControlGrid,
    shape: &SampledShape,
    method: WarpMethod,
    lambda: Option<f64>,
) -> Result<SampledShape, RegistrationError> {
    warn_inverted(grid, "cubify");
    let regular = ControlGrid::regular(grid.resolution(), 0.0, 1.0).expect("resolution >= 1");
    match method {
        WarpMethod::Tps => {
            let map = fit_grid_tps(grid, &regular, lambda)?;
            Ok(shape.map_points(|pts| map.apply(pts)))
        }
        WarpMethod::Exact => {
            let fallback = OnceCell::new();
            let out = shape.map_points(|pts| {
                let located = locate_and_register(grid, pts);
                pts.iter()
                    .zip(located)
                    .map(|(p, loc)| match loc {
                        Some(l) => l.global,
                        None => match fallback.get_or_init(|| fit_grid_tps(grid, &regular, lambda)) {
                            Ok(map) => map.apply_point(p),
                            Err(_) => *p,
                        },
                    })
                    .collect()
            });
            match fallback.into_inner() {
                Some(Err(e)) => Err(e.into()),
                _ => Ok(out),
            }
        }
    }
}

/// Moves a shape fitted by `source` into the frame of `target`.
pub fn project(
    shape: &SampledShape,
    source: &ControlGrid,
    target: &ControlGrid,
    method: WarpMethod,
    lambda: Option<f64>,
) -> Result<SampledShape, RegistrationError> {
    if source.resolution() != target.resolution() {
        return Err(RegistrationError::ResolutionMismatch {
            source_r: source.resolution(),
            target_r: target.resolution(),
        });
    }
    match method {
        WarpMethod::Tps => {
            warn_inverted(source, "source");
            let map = fit_grid_tps(source, target, lambda)?;
            Ok(shape.map_points(|pts| map.apply(pts)))
        }
        WarpMethod::Exact => {
            let cubified = cubify(source, shape, WarpMethod::Exact, lambda)?;
            Ok(cubified.map_points(|pts| pts.par_iter().map(|g| grid_map(target, g)).collect()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn warped(r: usize, amount: f64, seed: u64) -> ControlGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = ControlGrid::regular(r, 0.0, 1.0).unwrap();
        for p in g.points_mut() {
            *p += Vec3::new(
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
                rng.random_range(-amount..amount),
            );
        }
        g
    }

    fn cloud(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)))
            .collect()
    }

    #[test]
    fn axis_aligned_inversion() {
        let (a, b) = (Vec3::new(0.2, -1.0, 3.0), Vec3::new(0.7, 1.5, 3.25));
        let cell = Cell {
            corners: Cell::unit().corners.map(|c| a + c.component_mul(&(b - a))),
        };
        for q in cloud(100, 0.0, 1.0, 1) {
            let p = a + q.component_mul(&(b - a));
            let uvw = exact_local_coords(&cell, &p, NEWTON_TOL, NEWTON_MAX_ITER).unwrap();
            assert!((uvw - q).amax() < 1e-12);
        }
    }

    #[test]
    fn warped_inversion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..200 {
            let cell = warped(1, 0.2, seed).cell(0, 0, 0);
            let uvw = Vec3::new(rng.random(), rng.random(), rng.random());
            let q = cell.eval(uvw.x, uvw.y, uvw.z);
            let back = exact_local_coords(&cell, &q, NEWTON_TOL, NEWTON_MAX_ITER).unwrap();
            assert!((back - uvw).amax() < 1e-8);
        }
    }

    #[test]
    fn outside_and_degenerate_cells() {
        let cell = Cell::unit();
        assert!(exact_local_coords(&cell, &Vec3::new(1.5, 0.5, 0.5), NEWTON_TOL, NEWTON_MAX_ITER).is_none());
        let flat = Cell {
            corners: Cell::unit().corners.map(|c| Vec3::new(c.x, c.y, 0.0)),
        };
        assert!(exact_local_coords(&flat, &Vec3::new(0.3, 0.6, 0.0), NEWTON_TOL, NEWTON_MAX_ITER).is_none());
    }

    #[test]
    fn regular_grid_location() {
        let g = ControlGrid::regular(4, 0.0, 1.0).unwrap();
        let pts = cloud(200, 0.001, 0.999, 3);
        for (p, loc) in pts.iter().zip(locate_and_register(&g, &pts)) {
            let loc = loc.unwrap();
            assert!((loc.global - p).amax() < 1e-12);
            let frac = p * 4.0 - Vec3::new(loc.cell.0 as f64, loc.cell.1 as f64, loc.cell.2 as f64);
            assert!((loc.local - frac).amax() < 1e-12);
        }
        let outside = [Vec3::new(1.2, 0.5, 0.5), Vec3::new(0.5, -0.01, 0.5)];
        assert!(locate_and_register(&g, &outside).iter().all(Option::is_none));
    }

    #[test]
    fn shared_faces_go_to_lowest_cell() {
        let g = ControlGrid::regular(2, 0.0, 1.0).unwrap();
        let loc = locate_and_register(&g, &[Vec3::new(0.5, 0.25, 0.25)])[0].unwrap();
        assert_eq!(loc.cell, (0, 0, 0));
        assert!((loc.local.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warped_grid_round_trip() {
        let g = warped(3, 0.03, 4);
        let pts: Vec<Vec3> = cloud(300, 0.0, 1.0, 5).iter().map(|u| grid_map(&g, u)).collect();
        for (p, loc) in pts.iter().zip(locate_and_register(&g, &pts)) {
            let loc = loc.expect("interior point registers");
            assert!((grid_map(&g, &loc.global) - p).amax() < 1e-8);
        }
    }

    #[test]
    fn cubify_regular_is_identity() {
        let g = ControlGrid::regular(3, 0.0, 1.0).unwrap();
        let shape = SampledShape::from_points(cloud(200, 0.05, 0.95, 6));
        let tps = cubify(&g, &shape, WarpMethod::Tps, None).unwrap();
        for (a, b) in tps.points.iter().zip(&shape.points) {
            assert!((a - b).amax() < 1e-8);
        }
        let exact = cubify(&g, &shape, WarpMethod::Exact, None).unwrap();
        for (a, b) in exact.points.iter().zip(&shape.points) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn cubify_sends_control_points_to_lattice() {
        let g = warped(3, 0.04, 7);
        let shape = SampledShape::from_points(g.points().to_vec());
        let out = cubify(&g, &shape, WarpMethod::Tps, Some(0.0)).unwrap();
        let lattice = ControlGrid::regular(3, 0.0, 1.0).unwrap();
        for (a, b) in out.points.iter().zip(lattice.points()) {
            assert!((a - b).amax() < 1e-6);
        }
    }

    #[test]
    fn exact_and_tps_paths_agree() {
        let g = warped(4, 0.02, 8);
        let pts: Vec<Vec3> = cloud(400, 0.05, 0.95, 9).iter().map(|u| grid_map(&g, u)).collect();
        let shape = SampledShape::from_points(pts);
        let tps = cubify(&g, &shape, WarpMethod::Tps, None).unwrap();
        let exact = cubify(&g, &shape, WarpMethod::Exact, None).unwrap();
        let mut errs: Vec<f64> = tps.points.iter().zip(&exact.points).map(|(a, b)| (a - b).norm()).collect();
        errs.sort_by(f64::total_cmp);
        let p95 = errs[(errs.len() as f64 * 0.95) as usize];
        assert!(p95 < 0.05, "{p95}");
    }

    #[test]
    fn project_identities() {
        let g = warped(3, 0.04, 10);
        let shape = SampledShape::from_points(cloud(150, 0.1, 0.9, 11));
        let same = project(&shape, &g, &g, WarpMethod::Tps, None).unwrap();
        for (a, b) in same.points.iter().zip(&shape.points) {
            assert!((a - b).amax() < 1e-8);
        }
        let regular = ControlGrid::regular(3, 0.0, 1.0).unwrap();
        let to_cube = project(&shape, &g, &regular, WarpMethod::Tps, None).unwrap();
        let cubified = cubify(&g, &shape, WarpMethod::Tps, None).unwrap();
        assert_eq!(to_cube, cubified);
        let other = ControlGrid::regular(2, 0.0, 1.0).unwrap();
        assert!(matches!(
            project(&shape, &g, &other, WarpMethod::Tps, None),
            Err(RegistrationError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn project_round_trip() {
        let a = warped(3, 0.04, 12);
        let b = warped(3, 0.04, 13);
        let shape = SampledShape::from_points(cloud(300, 0.1, 0.9, 14));
        let there = project(&shape, &a, &b, WarpMethod::Tps, None).unwrap();
        let back = project(&there, &b, &a, WarpMethod::Tps, None).unwrap();
        let mut errs: Vec<f64> = back.points.iter().zip(&shape.points).map(|(x, y)| (x - y).norm()).collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[(errs.len() as f64 * 0.95) as usize] < 0.03);
    }

    #[test]
    fn exact_projection_between_grids() {
        let a = warped(2, 0.03, 15);
        let b = warped(2, 0.03, 16);
        let uvw = cloud(100, 0.05, 0.95, 17);
        let shape = SampledShape::from_points(uvw.iter().map(|u| grid_map(&a, u)).collect());
        let moved = project(&shape, &a, &b, WarpMethod::Exact, None).unwrap();
        for (m, u) in moved.points.iter().zip(&uvw) {
            assert!((m - grid_map(&b, u)).amax() < 1e-8);
        }
    }
}
