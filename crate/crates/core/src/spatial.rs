//! Exact nearest-neighbour queries over a uniform spatial hash.
//!
//! Results are exact: the distance and tie-breaking (lowest index among
//! equidistant points) match an exhaustive scan.

use crate::grid::Vec3;

const MAX_CELLS_PER_AXIS: usize = 256;

#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// `cell_start[c]..cell_start[c + 1]` indexes `entries` for hash cell `c`.
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Self {
        let points = points.to_vec();
        if points.is_empty() {
            return Self {
                points,
                origin: Vec3::zeros(),
                cell: 1.0,
                dims: [1, 1, 1],
                cell_start: vec![0, 0],
                entries: Vec::new(),
            };
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in &points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let max_ext = extent.max();
        // Roughly two points per occupied cell for volumetric sets.
        let mut cell = if max_ext > 0.0 {
            max_ext / ((points.len() as f64 / 2.0).cbrt()).max(1.0)
        } else {
            1.0
        };
        cell = cell.max(max_ext / MAX_CELLS_PER_AXIS as f64);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(MAX_CELLS_PER_AXIS));

        let mut index = Self {
            points,
            origin: lo,
            cell,
            dims,
            cell_start: Vec::new(),
            entries: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = index
            .points
            .iter()
            .map(|p| index.flat_cell(index.clamped_cell(p)))
            .collect();
        let mut counts = vec![0usize; total + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 0..total {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0usize; keys.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k]] = i;
            fill[k] += 1;
        }
        index.cell_start = counts;
        index.entries = entries;
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn raw_cell(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn clamped_cell(&self, p: &Vec3) -> [usize; 3] {
        let raw = self.raw_cell(p);
        [0, 1, 2].map(|a| raw[a].clamp(0, self.dims[a] as i64 - 1) as usize)
    }

    fn flat_cell(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    /// Index and squared distance of the nearest point; ties go to the lowest
    /// index. `None` only for an empty index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let qc = self.raw_cell(q);
        let dims = self.dims.map(|d| d as i64);
        // Rings closer than this contain no hash cells.
        let start = (0..3)
            .map(|a| {
                if qc[a] < 0 {
                    -qc[a]
                } else if qc[a] >= dims[a] {
                    qc[a] - dims[a] + 1
                } else {
                    0
                }
            })
            .max()
            .unwrap();
        let slack = 1e-9 * self.cell;
        let mut best: Option<(usize, f64)> = None;
        let mut rho = start;
        loop {
            let lo = [0, 1, 2].map(|a| (qc[a] - rho).max(0));
            let hi = [0, 1, 2].map(|a| (qc[a] + rho).min(dims[a] - 1));
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let cheb = (x - qc[0]).abs().max((y - qc[1]).abs()).max((z - qc[2]).abs());
                        if cheb != rho {
                            continue;
                        }
                        let flat = self.flat_cell([x as usize, y as usize, z as usize]);
                        for &i in &self.entries[self.cell_start[flat]..self.cell_start[flat + 1]] {
                            let d2 = (self.points[i] - q).norm_squared();
                            let better = match best {
                                None => true,
                                Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                            };
                            if better {
                                best = Some((i, d2));
                            }
                        }
                    }
                }
            }
            let exhausted = (0..3).all(|a| qc[a] - rho <= 0 && qc[a] + rho >= dims[a] - 1);
            if exhausted {
                break;
            }
            if let Some((_, bd)) = best {
                // Distance from q to the nearest face of the visited box that
                // still has unvisited cells behind it.
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    if qc[a] - rho > 0 {
                        let face = self.origin[a] + (qc[a] - rho) as f64 * self.cell;
                        bound = bound.min(q[a] - face);
                    }
                    if qc[a] + rho < dims[a] - 1 {
                        let face = self.origin[a] + (qc[a] + rho + 1) as f64 * self.cell;
                        bound = bound.min(face - q[a]);
                    }
                }
                let bound = bound - slack;
                if bound > 0.0 && bd < bound * bound {
                    break;
                }
            }
            rho += 1;
        }
        best
    }
}
