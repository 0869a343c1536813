use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use psysim::platform::store::{DataStore, ExportBundle};
use psysim::platform::{api, PlatformConfig, PlatformService, ProviderKind};

#[derive(Parser)]
#[command(name = "psysim", version, about = "Psychiatry training platform server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Scripted,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, value_enum)]
        provider: Option<Provider>,
        #[arg(long)]
        kb_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write every stored record to a JSON bundle.
    Export {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a bundle written by `export`.
    Import {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    match Cli::parse().command {
        Command::Serve {
            config,
            port,
            provider,
            kb_dir,
            seed,
        } => {
            let mut cfg = match config {
                Some(path) => PlatformConfig::load(&path)?,
                None => PlatformConfig::default(),
            };
            if let Some(port) = port {
                cfg.server.port = port;
            }
            if let Some(p) = provider {
                cfg.provider.kind = match p {
                    Provider::Scripted => ProviderKind::Scripted,
                    Provider::Http => ProviderKind::Http,
                };
            }
            if kb_dir.is_some() {
                cfg.kb_dir = kb_dir;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            if cfg.security.tls.is_some() {
                tracing::info!("TLS settings validated; terminate TLS at the deployment proxy");
            }
            let addr: SocketAddr = format!("{}:{}", cfg.server.bind, cfg.server.port).parse()?;
            let service = Arc::new(PlatformService::from_config(cfg)?);
            api::serve(service, addr).await?;
        }
        Command::Export { data_dir, out } => {
            let bundle = DataStore::open(data_dir.join("store"))?.export()?;
            std::fs::write(&out, serde_json::to_string_pretty(&bundle)?)?;
            println!("exported {} records to {}", bundle.entries.len(), out.display());
        }
        Command::Import { data_dir, input } => {
            let bundle: ExportBundle = serde_json::from_str(&std::fs::read_to_string(&input)?)?;
            let n = DataStore::open(data_dir.join("store"))?.import(&bundle)?;
            println!("imported {n} records into {}", data_dir.display());
        }
    }
    Ok(())
}
