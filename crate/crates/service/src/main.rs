use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use stochseg::RunConfig;
use stochseg_service::{serve, AppState, ServiceConfig};
use tracing_subscriber::EnvFilter;

/// Session service for interactive scribble segmentation.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Largest accepted upload in pixels.
    #[arg(long, default_value_t = 2_000_000)]
    max_pixels: usize,
    /// Idle session lifetime in seconds.
    #[arg(long, default_value_t = 1800)]
    ttl_secs: u64,
    /// Directory served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// TOML run configuration used as the session default.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let mut cfg = ServiceConfig {
        max_pixels: args.max_pixels,
        ttl: Duration::from_secs(args.ttl_secs),
        ..ServiceConfig::default()
    };
    if let Some(dir) = args.static_dir {
        cfg.static_dir = dir;
    }
    if let Some(path) = args.config {
        cfg.defaults = RunConfig::load(&path).with_context(|| format!("loading {}", path.display()))?;
    }
    let listener = tokio::net::TcpListener::bind(args.addr)
        .await
        .with_context(|| format!("binding {}", args.addr))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve(listener, AppState::new(cfg)).await?;
    Ok(())
}
