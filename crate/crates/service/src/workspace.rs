//! Shapes, fitted models and the PCA model served to the editor, loaded once
//! at startup from `workspace.json`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use dvg_core::analysis::PcaModel;
use dvg_core::optimizer::DvgModel;
use dvg_core::shape_io::{load_shape, SampledShape, ShapeIoError, DEFAULT_MARGIN, DEFAULT_SAMPLE_COUNT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_NAME: &str = "workspace.json";
/// Largest mesh the service will send in one response.
pub const MAX_MESH_VERTICES: usize = 50_000;

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("shape {id}: {source}")]
    Shape { id: String, source: ShapeIoError },
    #[error("duplicate shape id {0:?}")]
    DuplicateId(String),
    #[error("shape {id} has {count} vertices; the limit is {MAX_MESH_VERTICES}")]
    TooLarge { id: String, count: usize },
    #[error("model for shape {id} is inconsistent: {message}")]
    BadModel { id: String, message: String },
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_samples() -> usize {
    DEFAULT_SAMPLE_COUNT
}

/// Contents of `workspace.json`. Relative paths resolve against the manifest's
/// directory; `margin`, `samples` and `seed` must match the values the models
/// were fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub shapes: Vec<ShapeEntry>,
    #[serde(default)]
    pub pca: Option<PathBuf>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeEntry {
    pub id: String,
    pub shape: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct WorkspaceShape {
    pub id: String,
    pub shape: SampledShape,
    pub model: Option<DvgModel>,
}

#[derive(Debug, Clone, Default)]
pub struct Workspace {
    shapes: Vec<WorkspaceShape>,
    pca: Option<PcaModel>,
}

fn read(path: &Path) -> Result<String, WorkspaceError> {
    std::fs::read_to_string(path).map_err(|source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, WorkspaceError> {
    serde_json::from_str(&read(path)?).map_err(|e| WorkspaceError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl Workspace {
    /// Loads `dir/workspace.json` and everything it references.
    pub fn load(dir: &Path) -> Result<Self, WorkspaceError> {
        let manifest: Manifest = parse_json(&dir.join(MANIFEST_NAME))?;
        let mut shapes = Vec::with_capacity(manifest.shapes.len());
        for entry in &manifest.shapes {
            let raw = load_shape(&dir.join(&entry.shape), None).map_err(|source| WorkspaceError::Shape {
                id: entry.id.clone(),
                source,
            })?;
            let shape = SampledShape::from_mesh(&raw, manifest.margin, manifest.samples, manifest.seed)
                .map_err(|source| WorkspaceError::Shape {
                    id: entry.id.clone(),
                    source,
                })?;
            let model = entry
                .model
                .as_ref()
                .map(|p| parse_json::<DvgModel>(&dir.join(p)))
                .transpose()?;
            shapes.push(WorkspaceShape {
                id: entry.id.clone(),
                shape,
                model,
            });
        }
        let pca = manifest.pca.as_ref().map(|p| parse_json::<PcaModel>(&dir.join(p))).transpose()?;
        Self::new(shapes, pca)
    }

    pub fn new(shapes: Vec<WorkspaceShape>, pca: Option<PcaModel>) -> Result<Self, WorkspaceError> {
        let mut seen = HashSet::new();
        for s in &shapes {
            if !seen.insert(s.id.as_str()) {
                return Err(WorkspaceError::DuplicateId(s.id.clone()));
            }
            let count = s.shape.carrier().len();
            if count > MAX_MESH_VERTICES {
                return Err(WorkspaceError::TooLarge { id: s.id.clone(), count });
            }
            if let Some(m) = &s.model {
                m.check().map_err(|e| WorkspaceError::BadModel {
                    id: s.id.clone(),
                    message: e.to_string(),
                })?;
            }
        }
        if let Some(p) = &pca {
            p.check().map_err(|e| WorkspaceError::Parse {
                path: PathBuf::from("pca"),
                message: e.to_string(),
            })?;
        }
        Ok(Self { shapes, pca })
    }

    /// Shapes in manifest order.
    pub fn shapes(&self) -> &[WorkspaceShape] {
        &self.shapes
    }

    pub fn shape(&self, id: &str) -> Option<&WorkspaceShape> {
        self.shapes.iter().find(|s| s.id == id)
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }
}
