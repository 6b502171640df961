//! Deformable voxel grids.
//!
//! A deformable voxel grid (DVG) is a hexahedral control lattice over the
//! unit cube whose control points are moved, by energy minimization, until its
//! outer surface wraps a shape. Once fitted it serves as a local coordinate
//! system for the shape: shapes can be cubified, transferred between grids,
//! compared by their grids, and deformed along principal modes of a grid
//! collection.

pub mod analysis;
pub mod api;
pub mod energy;
pub mod grid;
pub mod optimizer;
pub mod registration;
pub mod shape_io;
pub mod spatial;
pub mod synthetic;
pub mod tps;

pub use analysis::{
    correspondences, descriptor, knn_search, pca_deform, pca_fit, Correspondence, DvgDescriptor,
    PcaModel,
};
pub use energy::{EnergyBreakdown, EnergyParams};
pub use grid::{subdivide, Cell, ControlGrid, Vec3};
pub use optimizer::{fit_hierarchical, fit_level, DvgModel, ScheduleParams};
pub use registration::{cubify, project, WarpMethod};
pub use shape_io::{Mesh, SampledShape};
pub use tps::TpsMap;
