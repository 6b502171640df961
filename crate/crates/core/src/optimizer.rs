//! Coarse-to-fine fitting.
//!
//! Level 0 is a single cell. Each further level subdivides the previous one
//! and optimizes the result; the detail it adds is stored as a residual so
//! that `v_k = subdivide(v_{k-1}) + fading_k · residual_k` holds exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{evaluate, EnergyBreakdown, EnergyError, EnergyParams};
use crate::grid::{self, subdivide, ControlGrid, GridError, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("level {requested} out of range 0..={max}")]
    LevelOutOfRange { requested: usize, max: usize },
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Final resolution is `2^max_level`.
    pub max_level: usize,
    pub steps_per_level: usize,
    pub step_size: f64,
    /// One factor per level `1..=max_level`.
    pub fading: Vec<f64>,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self::with_levels(3)
    }
}

impl ScheduleParams {
    pub fn with_levels(max_level: usize) -> Self {
        Self {
            max_level,
            steps_per_level: 300,
            step_size: 5e-3,
            fading: vec![1.0; max_level],
            convergence_tol: 1e-6,
            seed: 0,
        }
    }

    pub fn final_resolution(&self) -> usize {
        1 << self.max_level
    }

    pub fn validate(&self) -> Result<(), FitError> {
        if self.steps_per_level == 0 {
            return Err(FitError::Schedule("steps_per_level must be >= 1".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(FitError::Schedule(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.fading.len() != self.max_level {
            return Err(FitError::Schedule(format!(
                "expected {} fading factors, got {}",
                self.max_level,
                self.fading.len()
            )));
        }
        if let Some(f) = self.fading.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(FitError::Schedule(format!("fading factor {f} outside [0, 1]")));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(FitError::Schedule("convergence_tol must be >= 0".into()));
        }
        if self.max_level > 6 {
            return Err(FitError::Schedule(format!(
                "max_level {} exceeds the supported maximum of 6",
                self.max_level
            )));
        }
        Ok(())
    }
}

/// One accepted state of the descent (step 0 is the initial grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub level: usize,
    pub step: usize,
    pub energy: EnergyBreakdown,
}

const MAX_HALVINGS: usize = 30;
const STALL_WINDOW: usize = 10;

/// Gradient descent with a backtracking step: a candidate is accepted only
/// when the total energy does not increase, otherwise the step is halved.
/// Stops after `steps_per_level` accepted steps, when 30 halvings fail, or
/// when the relative decrease stays below `convergence_tol` for 10
/// consecutive steps.
pub fn fit_level(
    grid: &ControlGrid,
    samples: &[Vec3],
    params: &EnergyParams,
    schedule: &ScheduleParams,
    level: usize,
) -> Result<(ControlGrid, Vec<TraceEntry>), FitError> {
    schedule.validate()?;
    let mut current = grid.clone();
    let mut eval = evaluate(&current, samples, params, true)?;
    let mut trace = vec![TraceEntry {
        level,
        step: 0,
        energy: eval.energy,
    }];
    let mut step = schedule.step_size;
    let mut stalled = 0;
    for iteration in 1..=schedule.steps_per_level {
        let gradient = eval.gradient.take().expect("gradient requested");
        if gradient.iter().all(|g| *g == Vec3::zeros()) {
            break;
        }
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = current.offset_by(&gradient, -step)?;
            let trial = evaluate(&candidate, samples, params, false)?;
            if trial.energy.total <= eval.energy.total {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(next) = accepted else { break };
        let previous = eval.energy.total;
        current = next;
        eval = evaluate(&current, samples, params, true)?;
        trace.push(TraceEntry {
            level,
            step: iteration,
            energy: eval.energy,
        });
        let decrease = (previous - eval.energy.total) / previous.abs().max(f64::MIN_POSITIVE);
        stalled = if decrease < schedule.convergence_tol { stalled + 1 } else { 0 };
        if stalled >= STALL_WINDOW {
            break;
        }
    }
    Ok((current, trace))
}

/// A fitted multi-level grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelJson", into = "ModelJson")]
pub struct DvgModel {
    pub levels: Vec<ControlGrid>,
    /// `residuals[k-1]` is the detail of level `k`.
    pub residuals: Vec<Vec<Vec3>>,
    pub fading: Vec<f64>,
    pub params: EnergyParams,
    pub shape_ref: String,
}

impl DvgModel {
    pub fn max_level(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn final_grid(&self) -> &ControlGrid {
        self.levels.last().expect("model has at least one level")
    }

    pub fn resolution(&self) -> usize {
        self.final_grid().resolution()
    }

    /// Rebuilds level `k` from level `k-1` and its residual.
    pub fn reconstruct_level(&self, k: usize) -> Result<ControlGrid, FitError> {
        if k == 0 || k > self.max_level() {
            return Err(FitError::LevelOutOfRange {
                requested: k,
                max: self.max_level(),
            });
        }
        Ok(subdivide(&self.levels[k - 1]).offset_by(&self.residuals[k - 1], self.fading[k - 1])?)
    }

    /// Whether every stored level equals its reconstruction bit for bit.
    pub fn reconstruction_holds(&self) -> bool {
        (1..=self.max_level()).all(|k| {
            self.reconstruct_level(k)
                .map(|g| bit_equal(&g, &self.levels[k]))
                .unwrap_or(false)
        })
    }

    /// Full-resolution grid carrying detail up to level `k` only: residuals of
    /// levels `<= k` keep their fitted factors, deeper levels are pure
    /// subdivision.
    pub fn select_level(&self, k: usize) -> Result<ControlGrid, FitError> {
        let p = self.max_level();
        if k > p {
            return Err(FitError::LevelOutOfRange { requested: k, max: p });
        }
        let mut grid = self.levels[0].clone();
        for level in 1..=p {
            let sub = subdivide(&grid);
            grid = if level <= k {
                sub.offset_by(&self.residuals[level - 1], self.fading[level - 1])?
            } else {
                sub
            };
        }
        Ok(grid)
    }

    pub fn check(&self) -> Result<(), FitError> {
        if self.levels.is_empty() {
            return Err(FitError::Inconsistent("no levels".into()));
        }
        let p = self.levels.len() - 1;
        if self.residuals.len() != p || self.fading.len() != p {
            return Err(FitError::Inconsistent(format!(
                "{} levels need {p} residuals and fading factors",
                self.levels.len()
            )));
        }
        for (k, grid) in self.levels.iter().enumerate() {
            if grid.resolution() != 1 << k {
                return Err(FitError::Inconsistent(format!(
                    "level {k} has resolution {}, expected {}",
                    grid.resolution(),
                    1 << k
                )));
            }
            if k > 0 && self.residuals[k - 1].len() != grid.points().len() {
                return Err(FitError::Inconsistent(format!("residual {k} has wrong length")));
            }
        }
        Ok(())
    }
}

fn bit_equal(a: &ControlGrid, b: &ControlGrid) -> bool {
    a.resolution() == b.resolution()
        && a.points()
            .iter()
            .zip(b.points())
            .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    version: u32,
    levels: Vec<ControlGrid>,
    residuals: Vec<Vec<f64>>,
    fading: Vec<f64>,
    params: EnergyParams,
    shape_ref: String,
}

impl From<DvgModel> for ModelJson {
    fn from(m: DvgModel) -> Self {
        ModelJson {
            version: 1,
            residuals: m.residuals.iter().map(|r| grid::flatten(r)).collect(),
            levels: m.levels,
            fading: m.fading,
            params: m.params,
            shape_ref: m.shape_ref,
        }
    }
}

impl TryFrom<ModelJson> for DvgModel {
    type Error = FitError;

    fn try_from(j: ModelJson) -> Result<Self, FitError> {
        if j.version != 1 {
            return Err(FitError::Version(j.version));
        }
        let residuals = j
            .residuals
            .iter()
            .map(|r| grid::unflatten(r))
            .collect::<Result<Vec<_>, _>>()?;
        let model = DvgModel {
            levels: j.levels,
            residuals,
            fading: j.fading,
            params: j.params,
            shape_ref: j.shape_ref,
        };
        model.check()?;
        Ok(model)
    }
}

/// Result of [`fit_hierarchical`]: the model and the concatenated per-level
/// traces.
#[derive(Debug, Clone)]
pub struct HierarchicalFit {
    pub model: DvgModel,
    pub trace: Vec<TraceEntry>,
}

/// Energy parameters for level `k` of a fit ending at level `p`.
///
/// The covering keeps the density of the finest level: coarse cells are
/// split into proportionally more balls, and radius and stiffness are pinned
/// to their finest-level values. With a radius tied to the coarse cell size,
/// the huge balls of level 0 let the grid collapse far inside the shape, and
/// the saturated sigmoid then gives finer levels almost no gradient to
/// recover with.
pub fn level_params(params: &EnergyParams, k: usize, p: usize) -> EnergyParams {
    EnergyParams {
        covering_s: params.covering_s << (p - k),
        ..params.resolved(1 << p)
    }
}

/// Fits levels `0..=max_level`, starting from the unit cube.
pub fn fit_hierarchical(
    samples: &[Vec3],
    schedule: &ScheduleParams,
    params: &EnergyParams,
    shape_ref: &str,
) -> Result<HierarchicalFit, FitError> {
    schedule.validate()?;
    params.validate()?;
    let mut trace = Vec::new();

    let start = ControlGrid::regular(1, 0.0, 1.0)?;
    let (v0, t0) = fit_level(&start, samples, &level_params(params, 0, schedule.max_level), schedule, 0)?;
    trace.extend(t0);
    let mut levels = vec![v0];
    let mut residuals = Vec::with_capacity(schedule.max_level);

    for k in 1..=schedule.max_level {
        let fading = schedule.fading[k - 1];
        let sub = subdivide(levels.last().expect("level 0 exists"));
        let residual: Vec<Vec3> = if fading > 0.0 {
            let level = level_params(params, k, schedule.max_level);
            let (fitted, t) = fit_level(&sub, samples, &level, schedule, k)?;
            trace.extend(t);
            fitted
                .points()
                .iter()
                .zip(sub.points())
                .map(|(f, s)| (f - s) / fading)
                .collect()
        } else {
            vec![Vec3::zeros(); sub.points().len()]
        };
        // Store the reconstruction rather than the raw optimum so the level
        // identity holds bit for bit.
        levels.push(sub.offset_by(&residual, fading)?);
        residuals.push(residual);
    }

    Ok(HierarchicalFit {
        model: DvgModel {
            levels,
            residuals,
            fading: schedule.fading.clone(),
            params: params.clone(),
            shape_ref: shape_ref.to_string(),
        },
        trace,
    })
}

/// Fits a regular grid at the final resolution directly, without the
/// hierarchy, using `steps` descent steps.
pub fn fit_direct(
    samples: &[Vec3],
    resolution: usize,
    steps: usize,
    schedule: &ScheduleParams,
    params: &EnergyParams,
) -> Result<(ControlGrid, Vec<TraceEntry>), FitError> {
    let sched = ScheduleParams {
        steps_per_level: steps,
        ..schedule.clone()
    };
    let start = ControlGrid::regular(resolution, 0.0, 1.0)?;
    fit_level(&start, samples, params, &sched, 0)
}
