use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use multibo_service::{router, Host};

#[derive(Parser)]
#[command(name = "multibo-serve", version, about = "Serve human-in-the-loop multibo sessions")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Persist sessions and previews here and restore them on start.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let host = match &args.data_dir {
        Some(dir) => match Host::open(dir) {
            Ok(h) => h,
            Err(e) => {
                eprintln!("error: {}", e.message());
                return ExitCode::from(2);
            }
        },
        None => Host::in_memory(),
    };
    eprintln!("{} sessions restored; listening on {}", host.len(), args.addr);
    let listener = match tokio::net::TcpListener::bind(args.addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {e}", args.addr);
            return ExitCode::from(1);
        }
    };
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    if let Err(e) = axum::serve(listener, router(Arc::new(host)))
        .with_graceful_shutdown(shutdown)
        .await
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
