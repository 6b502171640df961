//! 3D thin-plate spline warps with the biharmonic kernel `φ(d) = d`.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpsError {
    #[error("thin-plate spline needs at least 4 sources, got {0}")]
    TooFewSources(usize),
    #[error("sources and targets differ in length ({sources} vs {targets})")]
    LengthMismatch { sources: usize, targets: usize },
    #[error("sources {0} and {1} coincide")]
    DuplicateSources(usize, usize),
    #[error("sources are coplanar; the affine block is rank deficient")]
    Coplanar,
    #[error("thin-plate spline system is singular")]
    Singular,
    #[error("regularization must be finite and nonnegative, got {0}")]
    BadRegularization(f64),
}

#[inline]
fn kernel(d: f64) -> f64 {
    d
}

/// `f(x) = A·x + b + Σ w_i·φ(‖x − c_i‖)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsMap {
    pub sources: Vec<Vec3>,
    pub affine: Matrix3<f64>,
    pub translation: Vec3,
    pub weights: Vec<Vec3>,
    pub regularization: f64,
}

impl TpsMap {
    /// Solves the interpolation system with a ridge `λ` on the kernel diagonal.
    pub fn fit(sources: &[Vec3], targets: &[Vec3], lambda: f64) -> Result<Self, TpsError> {
        let n = sources.len();
        if n != targets.len() {
            return Err(TpsError::LengthMismatch {
                sources: n,
                targets: targets.len(),
            });
        }
        if n < 4 {
            return Err(TpsError::TooFewSources(n));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(TpsError::BadRegularization(lambda));
        }
        check_sources(sources)?;

        let m = n + 4;
        let mut sys = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in (i + 1)..n {
                let k = kernel((sources[i] - sources[j]).norm());
                sys[(i, j)] = k;
                sys[(j, i)] = k;
            }
            sys[(i, i)] = lambda;
            let c = sources[i];
            for (col, v) in [1.0, c.x, c.y, c.z].into_iter().enumerate() {
                sys[(i, n + col)] = v;
                sys[(n + col, i)] = v;
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(m, 3);
        for (i, t) in targets.iter().enumerate() {
            for a in 0..3 {
                rhs[(i, a)] = t[a];
            }
        }
        let sol = sys.lu().solve(&rhs).ok_or(TpsError::Singular)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(TpsError::Singular);
        }
        let weights = (0..n)
            .map(|i| Vec3::new(sol[(i, 0)], sol[(i, 1)], sol[(i, 2)]))
            .collect();
        let translation = Vec3::new(sol[(n, 0)], sol[(n, 1)], sol[(n, 2)]);
        // Row a of A holds the coefficients of x, y, z for output axis a.
        let affine = Matrix3::from_fn(|a, c| sol[(n + 1 + c, a)]);
        Ok(Self {
            sources: sources.to_vec(),
            affine,
            translation,
            weights,
            regularization: lambda,
        })
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        let mut out = self.affine * x + self.translation;
        for (c, w) in self.sources.iter().zip(&self.weights) {
            out += w * kernel((x - c).norm());
        }
        out
    }

    pub fn apply(&self, points: &[Vec3]) -> Vec<Vec3> {
        points.par_iter().map(|p| self.apply_point(p)).collect()
    }

    /// `Σ w_i` and `Σ w_i c_iᵀ`; both vanish for a solved system.
    pub fn side_conditions(&self) -> (Vec3, Matrix3<f64>) {
        let mut sum = Vec3::zeros();
        let mut moment = Matrix3::zeros();
        for (w, c) in self.weights.iter().zip(&self.sources) {
            sum += w;
            moment += w * c.transpose();
        }
        (sum, moment)
    }
}

fn check_sources(sources: &[Vec3]) -> Result<(), TpsError> {
    let n = sources.len() as f64;
    let mean = sources.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for s in sources {
        let d = s - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(TpsError::Coplanar);
    }
    let scale = hi.sqrt();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&a, &b| sources[a].x.total_cmp(&sources[b].x));
    let tol = 1e-12 * scale;
    for (pos, &i) in order.iter().enumerate() {
        for &j in &order[pos + 1..] {
            if sources[j].x - sources[i].x > tol {
                break;
            }
            if (sources[j] - sources[i]).norm() <= tol {
                return Err(TpsError::DuplicateSources(i.min(j), i.max(j)));
            }
        }
    }
    Ok(())
}
