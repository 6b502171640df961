use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::Parser;
use dvg_service::{app, Workspace, DEFAULT_UI_ORIGINS};
use tracing_subscriber::EnvFilter;

/// Serve a workspace of fitted shapes to the editor UI.
#[derive(Debug, Parser)]
#[command(name = "dvg-service", version)]
struct Args {
    /// Directory containing workspace.json.
    #[arg(long)]
    workspace: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Allowed UI origin; repeat for several.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let workspace = Workspace::load(&args.workspace)
        .with_context(|| format!("loading workspace {}", args.workspace.display()))?;
    tracing::info!(shapes = workspace.shapes().len(), pca = workspace.pca().is_some(), "workspace loaded");

    let origins = if args.cors_origins.is_empty() {
        DEFAULT_UI_ORIGINS.iter().map(|s| s.to_string()).collect()
    } else {
        args.cors_origins
    };
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app(Arc::new(workspace), &origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
