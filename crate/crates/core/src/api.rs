//! Request and response bodies of the editor HTTP API, shared by the service
//! and its client.

use serde::{Deserialize, Serialize};

use crate::grid::{flatten, unflatten, ControlGrid, GridError, Vec3};
use crate::shape_io::Mesh;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSummary {
    pub id: String,
    pub point_count: usize,
    pub has_mesh: bool,
}

/// Mesh with flattened vertex coordinates and triangle indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshPayload {
    pub vertices: Vec<f64>,
    pub faces: Vec<usize>,
}

impl MeshPayload {
    pub fn from_mesh(mesh: &Mesh) -> Self {
        Self {
            vertices: flatten(&mesh.vertices),
            faces: mesh.faces.iter().flatten().copied().collect(),
        }
    }

    /// A point set, sent with no faces.
    pub fn from_points(points: &[Vec3]) -> Self {
        Self {
            vertices: flatten(points),
            faces: Vec::new(),
        }
    }

    pub fn to_mesh(&self) -> Result<Mesh, GridError> {
        let vertices = unflatten(&self.vertices)?;
        let faces = self
            .faces
            .chunks(3)
            .filter(|c| c.len() == 3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Mesh { vertices, faces })
    }
}

/// `coeffs` entries may be `null`, which is how JSON encoders emit NaN; the
/// service rejects them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformRequest {
    pub shape_id: String,
    pub coeffs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformResponse {
    pub mesh: MeshPayload,
    pub grid: ControlGrid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferRequest {
    pub source_id: String,
    pub target_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}
