use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cnndiff_cli::commands::{self, Format};
use cnndiff_cli::{SessionConfig, SessionState};
use cnndiff_core::diff::{DEFAULT_BINS, DEFAULT_LEVELS};
use cnndiff_core::{Error, TrainConfig};

#[derive(Parser)]
#[command(
    name = "cnndiff",
    version,
    about = "Train small CNNs and compare two of their snapshots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference network on synthetic shapes and save snapshots
    Train {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        lr: f32,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Epochs to snapshot, comma separated
        #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 50])]
        checkpoint_at: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Diff one layer between two snapshots
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_LEVELS)]
        levels: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Summarize every parameterized layer
    Report {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Serve the JSON API over two snapshots and an image directory
    Serve {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Overridden by CNNDIFF_PORT when set
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train {
            seed,
            lr,
            epochs,
            checkpoint_at,
            batch_size,
            samples,
            out: dir,
        } => {
            let config = TrainConfig {
                seed,
                learning_rate: lr,
                epochs,
                checkpoint_epochs: checkpoint_at,
                batch_size,
                n_samples: samples,
                ..TrainConfig::default()
            };
            commands::run_training(&mut out, &config, &dir)?;
        }
        Command::Diff {
            a,
            b,
            layer,
            bins,
            levels,
            format,
        } => {
            let (a, b) = commands::load_pair(&a, &b)?;
            let diff = commands::layer_diff(&a, &b, &layer, bins, levels)?;
            commands::write_layer_diff(&mut out, &diff, format)?;
        }
        Command::Report { a, b, format } => {
            let (a, b) = commands::load_pair(&a, &b)?;
            commands::write_report(&mut out, &a, &b, format)?;
        }
        Command::Serve {
            arch,
            a,
            b,
            images,
            port,
            host,
        } => {
            let port = match std::env::var("CNNDIFF_PORT") {
                Ok(v) => v.parse().map_err(|_| {
                    Error::Validation(format!("CNNDIFF_PORT `{v}` is not a port number"))
                })?,
                Err(_) => port,
            };
            let state = SessionState::load(&SessionConfig { arch, a, b, images })?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(cnndiff_cli::serve(state, SocketAddr::new(host, port)))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
