use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use hogface_portal::{bind, serve, Portal, PortalError, DATA_ENV, MODEL_ENV};

#[derive(Debug, Parser)]
#[command(name = "hogface-portal", version, about = "Missing-and-found photo matching service")]
struct Args {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Trained model file.
    #[arg(long, env = MODEL_ENV)]
    model: PathBuf,
    /// Directory for the record log and photos.
    #[arg(long, env = DATA_ENV)]
    data_dir: PathBuf,
    /// Serve the web UI from this directory.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();

    let (model, data) = (args.model.clone(), args.data_dir.clone());
    let portal = match tokio::task::spawn_blocking(move || Portal::open(&model, &data)).await {
        Ok(Ok(p)) => Arc::new(p),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(if matches!(e, PortalError::Model { .. }) { 2 } else { 1 });
        }
        Err(e) => {
            eprintln!("internal error: {e}");
            return ExitCode::from(1);
        }
    };
    let (listener, addr) = match bind(args.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.listen);
            return ExitCode::from(2);
        }
    };
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match serve(listener, portal, args.static_dir, shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
