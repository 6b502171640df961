use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use dvg_client::{Client, ClientError};
use dvg_core::api::MeshPayload;
use dvg_core::shape_io::{format_obj, format_xyz};

use crate::commands::write_text;
use crate::CliError;

#[derive(Debug, Args)]
pub struct RemoteArgs {
    /// Base URL of the service.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub url: String,
    #[command(subcommand)]
    pub action: RemoteAction,
}

#[derive(Debug, Subcommand)]
pub enum RemoteAction {
    /// List the shapes the service holds.
    Shapes,
    /// Download a shape's mesh.
    Mesh {
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deform a shape along the PCA modes.
    Deform {
        id: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        coeffs: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the deformed grid JSON here.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Project one shape into another shape's grid.
    Transfer {
        source: String,
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn client_error(e: ClientError) -> CliError {
    match e.status() {
        Some(s) if s.is_client_error() => CliError::input(e),
        _ => CliError::runtime(e),
    }
}

/// OBJ when the payload has faces, XYZ otherwise.
fn write_payload(path: &Path, payload: &MeshPayload) -> Result<(), CliError> {
    let mesh = payload.to_mesh().map_err(CliError::runtime)?;
    let text = if mesh.faces.is_empty() {
        format_xyz(&mesh.vertices)
    } else {
        format_obj(&mesh)
    };
    write_text(path, &text)
}

pub fn run(args: &RemoteArgs) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)?;
    let client = Client::new(args.url.clone());
    rt.block_on(async {
        match &args.action {
            RemoteAction::Shapes => {
                for s in client.shapes().await.map_err(client_error)? {
                    println!("{}\t{}\t{}", s.id, s.point_count, if s.has_mesh { "mesh" } else { "points" });
                }
                Ok(())
            }
            RemoteAction::Mesh { id, out } => write_payload(out, &client.mesh(id).await.map_err(client_error)?),
            RemoteAction::Deform {
                id,
                coeffs,
                out,
                grid_out,
            } => {
                let resp = client.deform(id, coeffs).await.map_err(client_error)?;
                write_payload(out, &resp.mesh)?;
                if let Some(g) = grid_out {
                    let mut text = serde_json::to_string(&resp.grid).map_err(CliError::runtime)?;
                    text.push('\n');
                    write_text(g, &text)?;
                }
                Ok(())
            }
            RemoteAction::Transfer { source, target, out } => {
                write_payload(out, &client.transfer(source, target).await.map_err(client_error)?)
            }
        }
    })
}
