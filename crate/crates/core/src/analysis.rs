//! Descriptors, retrieval, correspondences and PCA deformation modes.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{node_count, unflatten, ControlGrid, GridError, Vec3};
use crate::registration::{project, RegistrationError, WarpMethod};
use crate::shape_io::SampledShape;
use crate::spatial::PointIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("resolution mismatch at entry {index}: expected {expected}, got {got}")]
    ResolutionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("k = {k} is out of range for a database of {size}")]
    KOutOfRange { k: usize, size: usize },
    #[error("descriptor length {got} does not match resolution {resolution} (expected {expected})")]
    DescriptorLength {
        resolution: usize,
        expected: usize,
        got: usize,
    },
    #[error("PCA needs at least 2 grids, got {0}")]
    TooFewGrids(usize),
    #[error("{given} coefficients given but the model has {available} components")]
    TooManyCoefficients { given: usize, available: usize },
    #[error("point set is empty")]
    EmptyPoints,
    #[error("malformed PCA model: {0}")]
    BadModel(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

/// Number of boundary nodes of a resolution-`r` grid.
pub fn outer_node_count(r: usize) -> usize {
    node_count(r) - if r >= 2 { (r - 1).pow(3) } else { 0 }
}

/// Boundary control points of a grid, flattened in ascending node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvgDescriptor {
    pub resolution: usize,
    pub vector: Vec<f64>,
}

impl DvgDescriptor {
    pub fn check(&self) -> Result<(), AnalysisError> {
        let expected = 3 * outer_node_count(self.resolution);
        if self.resolution == 0 || self.vector.len() != expected {
            return Err(AnalysisError::DescriptorLength {
                resolution: self.resolution,
                expected,
                got: self.vector.len(),
            });
        }
        Ok(())
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One line of a descriptor database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRecord {
    pub id: String,
    #[serde(flatten)]
    pub descriptor: DvgDescriptor,
}

pub fn descriptor(grid: &ControlGrid) -> DvgDescriptor {
    let mut vector = Vec::with_capacity(3 * outer_node_count(grid.resolution()));
    for (idx, p) in grid.points().iter().enumerate() {
        if grid.is_boundary_node(idx) {
            vector.extend_from_slice(&[p.x, p.y, p.z]);
        }
    }
    DvgDescriptor {
        resolution: grid.resolution(),
        vector,
    }
}

pub fn parse_descriptor_db(text: &str) -> Result<Vec<DescriptorRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let rec: DescriptorRecord =
                serde_json::from_str(l).map_err(|e| format!("line {}: {e}", n + 1))?;
            rec.descriptor.check().map_err(|e| format!("line {}: {e}", n + 1))?;
            Ok(rec)
        })
        .collect()
}

pub fn format_descriptor_db(records: &[DescriptorRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("descriptor serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Exact `k` nearest descriptors by Euclidean distance, ties to the lower
/// index.
pub fn knn_search(
    query: &DvgDescriptor,
    database: &[DvgDescriptor],
    k: usize,
) -> Result<Vec<Neighbor>, AnalysisError> {
    if k == 0 || k > database.len() {
        return Err(AnalysisError::KOutOfRange {
            k,
            size: database.len(),
        });
    }
    query.check()?;
    for (index, d) in database.iter().enumerate() {
        if d.resolution != query.resolution {
            return Err(AnalysisError::ResolutionMismatch {
                index,
                expected: query.resolution,
                got: d.resolution,
            });
        }
        d.check()?;
    }
    let mut scored: Vec<Neighbor> = database
        .par_iter()
        .enumerate()
        .map(|(index, d)| Neighbor {
            index,
            distance: query.distance(d),
        })
        .collect();
    scored.sort_by(|a, b| match a.distance.total_cmp(&b.distance) {
        Ordering::Equal => a.index.cmp(&b.index),
        o => o,
    });
    scored.truncate(k);
    Ok(scored)
}

/// For every target point, the nearest source point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub source_index: Vec<usize>,
    pub distance: Vec<f64>,
}

pub fn correspondences(source: &[Vec3], target: &[Vec3]) -> Result<Correspondence, AnalysisError> {
    if source.is_empty() || target.is_empty() {
        return Err(AnalysisError::EmptyPoints);
    }
    let index = PointIndex::new(source);
    let (source_index, distance) = target
        .par_iter()
        .map(|q| {
            let (i, d2) = index.nearest(q).expect("index is nonempty");
            (i, d2.sqrt())
        })
        .unzip();
    Ok(Correspondence {
        source_index,
        distance,
    })
}

pub fn format_correspondence_csv(c: &Correspondence) -> String {
    let mut out = String::from("target_idx,source_idx,distance\n");
    for (t, (s, d)) in c.source_index.iter().zip(&c.distance).enumerate() {
        out.push_str(&format!("{t},{s},{d:.16e}\n"));
    }
    out
}

/// Principal modes of a collection of grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub resolution: usize,
    pub mean: Vec<f64>,
    /// Unit directions, one per retained mode.
    pub components: Vec<Vec<f64>>,
    /// Descending; sample variance along each component.
    pub variances: Vec<f64>,
    pub n_samples: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        3 * node_count(self.resolution)
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn check(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::BadModel(m.to_string()));
        let d = self.dim();
        if self.resolution == 0 || self.mean.len() != d {
            return bad("mean length does not match resolution");
        }
        if self.components.len() != self.variances.len() {
            return bad("components and variances differ in count");
        }
        if self.components.iter().any(|c| c.len() != d) {
            return bad("component length does not match resolution");
        }
        if self.variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("variances must be finite and nonnegative");
        }
        if self.variances.windows(2).any(|w| w[0] < w[1]) {
            return bad("variances must be descending");
        }
        Ok(())
    }

    /// Fraction of the total variance carried by each component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.variances.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.variances.len()];
        }
        self.variances.iter().map(|v| v / total).collect()
    }

    /// Coordinates `u_i · (x − mean)` of a grid in the component basis.
    pub fn project(&self, grid: &ControlGrid) -> Result<Vec<f64>, AnalysisError> {
        self.match_resolution(grid)?;
        let centered: Vec<f64> = grid.to_flat().iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .components
            .iter()
            .map(|u| u.iter().zip(&centered).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `mean + Σ c_i u_i`.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<ControlGrid, AnalysisError> {
        self.check_coeffs(coords.len())?;
        let mut flat = self.mean.clone();
        for (c, u) in coords.iter().zip(&self.components) {
            for (x, ui) in flat.iter_mut().zip(u) {
                *x += c * ui;
            }
        }
        Ok(ControlGrid::from_flat(self.resolution, &flat)?)
    }

    /// Offset `Σ t_i √λ_i u_i` as per-node displacements.
    pub fn offsets(&self, coeffs: &[f64]) -> Result<Vec<Vec3>, AnalysisError> {
        self.check_coeffs(coeffs.len())?;
        let mut flat = vec![0.0; self.dim()];
        for ((t, u), var) in coeffs.iter().zip(&self.components).zip(&self.variances) {
            let s = t * var.sqrt();
            for (x, ui) in flat.iter_mut().zip(u) {
                *x += s * ui;
            }
        }
        Ok(unflatten(&flat)?)
    }

    fn match_resolution(&self, grid: &ControlGrid) -> Result<(), AnalysisError> {
        if grid.resolution() != self.resolution {
            return Err(AnalysisError::ResolutionMismatch {
                index: 0,
                expected: self.resolution,
                got: grid.resolution(),
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, given: usize) -> Result<(), AnalysisError> {
        if given > self.components.len() {
            return Err(AnalysisError::TooManyCoefficients {
                given,
                available: self.components.len(),
            });
        }
        Ok(())
    }
}

/// Mean-centered PCA over flattened grids.
///
/// Works on the `n × n` Gram matrix since grids far outnumber samples in
/// dimension. Components with numerically zero variance are dropped, so the
/// model keeps at most `n − 1` of them.
pub fn pca_fit(grids: &[ControlGrid]) -> Result<PcaModel, AnalysisError> {
    let n = grids.len();
    if n < 2 {
        return Err(AnalysisError::TooFewGrids(n));
    }
    let r = grids[0].resolution();
    for (index, g) in grids.iter().enumerate() {
        if g.resolution() != r {
            return Err(AnalysisError::ResolutionMismatch {
                index,
                expected: r,
                got: g.resolution(),
            });
        }
    }
    let d = 3 * node_count(r);
    let data = DMatrix::from_fn(n, d, |s, c| {
        let p = grids[s].points()[c / 3];
        p[c % 3]
    });
    let mean: Vec<f64> = (0..d).map(|c| data.column(c).sum() / n as f64).collect();
    let mut centered = data;
    for c in 0..d {
        let m = mean[c];
        centered.column_mut(c).add_scalar_mut(-m);
    }
    let gram = &centered * centered.transpose() / (n - 1) as f64;
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let scale = mean.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let floor = (top * 1e-10).max(d as f64 * (1e3 * f64::EPSILON * scale).powi(2));

    let mut components: Vec<DVector<f64>> = Vec::new();
    let mut variances = Vec::new();
    for &e in &order {
        let lambda = eig.eigenvalues[e];
        if !(lambda > floor) {
            break;
        }
        let mut u = centered.transpose() * eig.eigenvectors.column(e);
        // Re-orthogonalize against earlier components to clean up rounding.
        for prev in &components {
            let dot = prev.dot(&u);
            u.axpy(-dot, prev, 1.0);
        }
        let norm = u.norm();
        if !(norm > 0.0) {
            break;
        }
        u /= norm;
        let pivot = u.iamax();
        if u[pivot] < 0.0 {
            u.neg_mut();
        }
        components.push(u);
        variances.push(lambda);
    }
    Ok(PcaModel {
        resolution: r,
        mean,
        components: components.into_iter().map(|u| u.as_slice().to_vec()).collect(),
        variances,
        n_samples: n,
    })
}

/// `grid + Σ t_i √λ_i u_i`.
pub fn pca_deform_grid(grid: &ControlGrid, model: &PcaModel, coeffs: &[f64]) -> Result<ControlGrid, AnalysisError> {
    model.match_resolution(grid)?;
    let offsets = model.offsets(coeffs)?;
    Ok(grid.offset_by(&offsets, 1.0)?)
}

/// Deforms the grid along the model's modes and carries the shape along with
/// a TPS warp.
pub fn pca_deform(
    shape: &SampledShape,
    grid: &ControlGrid,
    model: &PcaModel,
    coeffs: &[f64],
) -> Result<(SampledShape, ControlGrid), AnalysisError> {
    let deformed = pca_deform_grid(grid, model, coeffs)?;
    let moved = project(shape, grid, &deformed, WarpMethod::Tps, None)?;
    Ok((moved, deformed))
}
