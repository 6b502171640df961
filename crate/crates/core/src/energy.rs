//! Grid energies and their analytic gradients.
//!
//! The total energy is `λe·elastic + λb·bending + λi·inclusion`. Elastic and
//! bending integrate squared first and second parameter derivatives over
//! `[0,1]³`, discretized as the mean over all nodes. Inclusion is the mean
//! soft-thresholded distance from every sample to the nearest ball of a
//! covering of the grid volume.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{self, ball_covering, cell_corners_flat, stencil, ControlGrid, Partial, Vec3};
use crate::spatial::PointIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error(transparent)]
    Grid(#[from] grid::GridError),
    #[error("invalid energy parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("inclusion loss needs at least one sample")]
    NoSamples,
    #[error("non-finite {term} energy")]
    NonFinite { term: &'static str },
    #[error("non-finite gradient at control point {node}")]
    NonFiniteGradient { node: usize },
}

/// Energy weights and inclusion hyperparameters.
///
/// `ball_radius` and `stiffness` default to values derived from the grid
/// resolution when left unset; see [`EnergyParams::radius_for`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub lambda_e: f64,
    pub lambda_b: f64,
    pub lambda_i: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ball_radius: Option<f64>,
    pub stiffness: Option<f64>,
    pub covering_s: usize,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_b: 0.4,
            lambda_i: 4.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            ball_radius: None,
            stiffness: None,
            covering_s: 2,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), EnergyError> {
        let weights = [
            ("lambda_e", self.lambda_e),
            ("lambda_b", self.lambda_b),
            ("lambda_i", self.lambda_i),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EnergyError::InvalidParam {
                    name,
                    reason: format!("must be finite and nonnegative, got {v}"),
                });
            }
        }
        for (name, v) in [("ball_radius", self.ball_radius), ("stiffness", self.stiffness)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(EnergyError::InvalidParam {
                        name,
                        reason: format!("must be finite and positive, got {v}"),
                    });
                }
            }
        }
        if self.covering_s == 0 {
            return Err(EnergyError::InvalidParam {
                name: "covering_s",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Ball radius used on a resolution-`r` grid: the explicit value, or the
    /// half-diagonal of one initial sub-cell, `(√3/2)/(r·s)`.
    pub fn radius_for(&self, resolution: usize) -> f64 {
        self.ball_radius
            .unwrap_or_else(|| 3f64.sqrt() / 2.0 / (resolution * self.covering_s) as f64)
    }

    /// Sigmoid stiffness on a resolution-`r` grid; defaults to `20/radius`.
    pub fn stiffness_for(&self, resolution: usize) -> f64 {
        self.stiffness
            .unwrap_or_else(|| 20.0 / self.radius_for(resolution))
    }

    /// Copy with radius and stiffness pinned to their values at `resolution`.
    pub fn resolved(&self, resolution: usize) -> Self {
        Self {
            ball_radius: Some(self.radius_for(resolution)),
            stiffness: Some(self.stiffness_for(resolution)),
            ..self.clone()
        }
    }
}

/// `½·tanh(α(x − θ)) + ½`.
#[inline]
pub fn soft_threshold(x: f64, threshold: f64, stiffness: f64) -> f64 {
    0.5 * (stiffness * (x - threshold)).tanh() + 0.5
}

#[inline]
fn soft_threshold_slope(x: f64, threshold: f64, stiffness: f64) -> f64 {
    let t = (stiffness * (x - threshold)).tanh();
    0.5 * stiffness * (1.0 - t * t)
}

/// Weighted terms of the total energy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub bending: f64,
    pub inclusion: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn check_finite(&self) -> Result<(), EnergyError> {
        for (term, v) in [
            ("elastic", self.elastic),
            ("bending", self.bending),
            ("inclusion", self.inclusion),
        ] {
            if !v.is_finite() {
                return Err(EnergyError::NonFinite { term });
            }
        }
        Ok(())
    }
}

/// Sum with a fixed pairwise reduction tree, independent of thread count.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `c/N · Σ_nodes Σ_partials |D x|²`, accumulating its gradient when asked.
fn quadratic_term(
    grid: &ControlGrid,
    terms: &[(Partial, f64)],
    mut grad: Option<&mut [Vec3]>,
    grad_scale: f64,
) -> f64 {
    let r = grid.resolution();
    let pts = grid.points();
    let inv_n = 1.0 / pts.len() as f64;
    let mut total = 0.0;
    for idx in 0..pts.len() {
        let (i, j, k) = grid.node_coords(idx);
        let mut node_sum = 0.0;
        for &(partial, coef) in terms {
            if coef == 0.0 {
                continue;
            }
            let st = stencil(r, partial, [i, j, k]);
            let d = st.apply(pts);
            node_sum += coef * d.norm_squared();
            if let Some(g) = grad.as_deref_mut() {
                let f = 2.0 * coef * inv_n * grad_scale;
                for &(id, c) in st.terms() {
                    g[id] += d * (f * c);
                }
            }
        }
        total += node_sum;
    }
    total * inv_n
}

fn elastic_terms(params: &EnergyParams) -> [(Partial, f64); 3] {
    Partial::FIRST.map(|p| (p, params.alpha))
}

fn bending_terms(params: &EnergyParams) -> [(Partial, f64); 6] {
    [
        (Partial::UU, params.beta),
        (Partial::VV, params.beta),
        (Partial::WW, params.beta),
        (Partial::UV, params.gamma),
        (Partial::VW, params.gamma),
        (Partial::UW, params.gamma),
    ]
}

/// `α · mean(|V_u|² + |V_v|² + |V_w|²)`.
pub fn elastic_energy(grid: &ControlGrid, params: &EnergyParams) -> f64 {
    quadratic_term(grid, &elastic_terms(params), None, 1.0)
}

/// `mean(β(|V_uu|²+|V_vv|²+|V_ww|²) + γ(|V_uv|²+|V_vw|²+|V_uw|²))`. Needs `r >= 2`.
pub fn bending_energy(grid: &ControlGrid, params: &EnergyParams) -> Result<f64, EnergyError> {
    if grid.resolution() < 2 {
        return Err(grid::GridError::ResolutionTooLow {
            needed: 2,
            got: grid.resolution(),
        }
        .into());
    }
    Ok(quadratic_term(grid, &bending_terms(params), None, 1.0))
}

/// Per-sample nearest ball and soft-inclusion value.
#[derive(Debug, Clone, Copy)]
struct SampleHit {
    center: usize,
    distance: f64,
    loss: f64,
    slope: f64,
}

fn inclusion_hits(samples: &[Vec3], centers: &[Vec3], radius: f64, stiffness: f64) -> Vec<SampleHit> {
    let index = PointIndex::new(centers);
    samples
        .par_iter()
        .map(|s| {
            let (center, d2) = index.nearest(s).expect("covering is nonempty");
            let distance = d2.sqrt();
            SampleHit {
                center,
                distance,
                loss: soft_threshold(distance, radius, stiffness),
                slope: soft_threshold_slope(distance, radius, stiffness),
            }
        })
        .collect()
}

/// Mean soft-inclusion loss of `samples` against the grid's ball covering.
pub fn inclusion_loss(
    samples: &[Vec3],
    grid: &ControlGrid,
    params: &EnergyParams,
) -> Result<f64, EnergyError> {
    if samples.is_empty() {
        return Err(EnergyError::NoSamples);
    }
    let r = grid.resolution();
    let cov = ball_covering(grid, params.covering_s);
    let hits = inclusion_hits(samples, &cov.centers, params.radius_for(r), params.stiffness_for(r));
    let losses: Vec<f64> = hits.iter().map(|h| h.loss).collect();
    Ok(pairwise_sum(&losses) / samples.len() as f64)
}

/// Nearest covering-center index of each sample, for tie diagnostics.
pub fn nearest_centers(samples: &[Vec3], grid: &ControlGrid, params: &EnergyParams) -> Vec<usize> {
    let cov = ball_covering(grid, params.covering_s);
    let index = PointIndex::new(&cov.centers);
    samples
        .par_iter()
        .map(|s| index.nearest(s).expect("covering is nonempty").0)
        .collect()
}

/// Energy breakdown and, optionally, its gradient at one grid state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: EnergyBreakdown,
    pub gradient: Option<Vec<Vec3>>,
}

/// Evaluates the total energy and optionally its exact gradient.
///
/// On a resolution-1 grid the bending term is omitted (a two-node axis has no
/// second difference). An empty sample set contributes zero inclusion. The
/// inclusion gradient holds each sample's nearest-ball assignment fixed and
/// flows through the trilinear blend of that ball's cell corners.
pub fn evaluate(
    grid: &ControlGrid,
    samples: &[Vec3],
    params: &EnergyParams,
    with_gradient: bool,
) -> Result<Evaluation, EnergyError> {
    params.validate()?;
    let r = grid.resolution();
    let n = grid.points().len();
    let mut grad = with_gradient.then(|| vec![Vec3::zeros(); n]);

    let elastic = params.lambda_e
        * quadratic_term(grid, &elastic_terms(params), grad.as_deref_mut(), params.lambda_e);
    let bending = if r >= 2 && params.lambda_b > 0.0 {
        params.lambda_b
            * quadratic_term(grid, &bending_terms(params), grad.as_deref_mut(), params.lambda_b)
    } else {
        0.0
    };

    let mut inclusion = 0.0;
    if !samples.is_empty() && params.lambda_i > 0.0 {
        let cov = ball_covering(grid, params.covering_s);
        let hits = inclusion_hits(samples, &cov.centers, params.radius_for(r), params.stiffness_for(r));
        let losses: Vec<f64> = hits.iter().map(|h| h.loss).collect();
        inclusion = params.lambda_i * pairwise_sum(&losses) / samples.len() as f64;
        if let Some(g) = grad.as_deref_mut() {
            let scale = params.lambda_i / samples.len() as f64;
            for (s, hit) in samples.iter().zip(&hits) {
                if hit.distance == 0.0 || hit.slope == 0.0 {
                    continue;
                }
                let dir = (cov.centers[hit.center] - s) / hit.distance;
                let (cell, local) = cov.locate(hit.center);
                let corners = cell_corners_flat(r, cell);
                let f = scale * hit.slope;
                for (id, w) in corners.iter().zip(&cov.weights[local]) {
                    g[*id] += dir * (f * w);
                }
            }
        }
    }

    let energy = EnergyBreakdown {
        elastic,
        bending,
        inclusion,
        total: elastic + bending + inclusion,
    };
    energy.check_finite()?;
    if let Some(g) = &grad {
        if let Some(node) = g.iter().position(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(EnergyError::NonFiniteGradient { node });
        }
    }
    Ok(Evaluation {
        energy,
        gradient: grad,
    })
}

pub fn total_energy(
    grid: &ControlGrid,
    samples: &[Vec3],
    params: &EnergyParams,
) -> Result<EnergyBreakdown, EnergyError> {
    Ok(evaluate(grid, samples, params, false)?.energy)
}

pub fn energy_gradient(
    grid: &ControlGrid,
    samples: &[Vec3],
    params: &EnergyParams,
) -> Result<Vec<Vec3>, EnergyError> {
    Ok(evaluate(grid, samples, params, true)?
        .gradient
        .expect("gradient requested"))
}
