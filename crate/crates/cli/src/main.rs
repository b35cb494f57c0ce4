//! ncdw: an embeddable clinical data warehouse engine with wrapper-based
//! ingestion, pseudonymized record linkage, star-schema storage, cube-lattice
//! OLAP, dengue-mart analytics, capacity estimation, and a benchmark harness.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use ncdw_core::error::{Error, Result};

use crate::config::Config;

#[derive(Parser)]
#[command(
    name = "ncdw",
    version,
    about = "Embedded clinical data warehouse: ingest, load, cube, analyze, estimate",
    arg_required_else_help = true
)]
struct Cli {
    /// Configuration file; defaults to ./ncdw.toml when present.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Warehouse directory; overrides the config file.
    #[arg(long, global = true, value_name = "DIR")]
    warehouse: Option<PathBuf>,

    /// File holding the hex-encoded link key. Without it the key is read
    /// from the NCDW_LINK_KEY environment variable.
    #[arg(long, global = true, value_name = "FILE")]
    link_key_file: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, standardize, pseudonymize, and stage one source file.
    Ingest {
        /// Source id from the configuration.
        #[arg(long)]
        source: String,
        /// Input file; overrides the configured path.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Load staged batches into the warehouse (all pending by default).
    Load {
        /// Load only this batch id.
        #[arg(long)]
        batch: Option<u64>,
    },
    /// Print facts matching a predicate as tab-separated rows.
    Scan {
        #[arg(long, default_value = "testresult")]
        fact: String,
        /// Equality filter, e.g. "diagnosis=DENGUE,division=Dhaka".
        #[arg(long = "where", value_name = "EXPR")]
        filter: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Materialize a cube lattice and export every cuboid.
    Cube {
        #[arg(long, default_value = "testresult")]
        fact: String,
        /// Comma-separated dimensions with optional level, e.g.
        /// "geography@division,diagnosis".
        #[arg(long)]
        dims: String,
        /// Comma-separated measures, e.g. "count,avg:result_value".
        #[arg(long, default_value = "count")]
        measures: String,
        #[arg(long, default_value = "shared_scan")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive or report on a disease data mart.
    Mart {
        #[command(subcommand)]
        action: MartAction,
    },
    /// Warehouse status report: load ledger, integrity, headline figures.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// National daily-load and storage estimate.
    Estimate {
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time cube materialization strategies on synthetic tables.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [100_000u64, 200_000, 500_000, 1_000_000])]
        rows: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 4])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a deterministic synthetic source corpus plus matching config.
    Generate {
        #[arg(long, default_value_t = 100_000)]
        rows: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        months: usize,
        #[arg(long, default_value_t = 30)]
        geos: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole pipeline end-to-end on generated data.
    Demo {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        rows: u64,
        #[arg(long, default_value_t = 30)]
        geos: usize,
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum MartAction {
    /// Copy the facts for a disease (and their ambient context) into a mart.
    Derive {
        #[arg(long)]
        name: String,
        /// File listing canonical test codes, one per line.
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Select every code filed under this diagnosis instead.
        #[arg(long)]
        diagnosis: Option<String>,
    },
    /// Emit the mart's CSV tables and self-contained HTML report.
    Report {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Outbreak threshold multiplier over the trailing-window deviation.
        #[arg(long, default_value_t = 1.5)]
        k: f64,
        /// Trailing window length in months.
        #[arg(long, default_value_t = 12)]
        window: usize,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let (path, explicit) = match &cli.config {
        Some(p) => (p.clone(), true),
        None => (PathBuf::from("ncdw.toml"), false),
    };
    let mut cfg = if path.exists() {
        Config::load(&path)?
    } else if explicit {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("config file {} not found", path.display()),
        )));
    } else {
        Config::built_in()
    };
    if let Some(w) = &cli.warehouse {
        cfg.warehouse_root = w.clone();
    }
    if let Some(k) = &cli.link_key_file {
        cfg.link_key_file = Some(k.clone());
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest { source, file } => {
            let cfg = load_config(cli)?;
            commands::ingest(&cfg, source, file.as_deref())
        }
        Command::Load { batch } => {
            let cfg = load_config(cli)?;
            commands::load(&cfg, *batch)
        }
        Command::Scan { fact, filter, limit } => {
            let cfg = load_config(cli)?;
            commands::scan(&cfg, fact, filter.as_deref(), *limit)
        }
        Command::Cube { fact, dims, measures, strategy, out } => {
            let cfg = load_config(cli)?;
            commands::cube(&cfg, fact, dims, measures, strategy, out)
        }
        Command::Mart { action } => {
            let cfg = load_config(cli)?;
            match action {
                MartAction::Derive { name, codes, diagnosis } => {
                    commands::mart_derive(&cfg, name, codes.as_deref(), diagnosis.as_deref())
                }
                MartAction::Report { name, out, k, window } => {
                    commands::mart_report(&cfg, name, out, *k, *window)
                }
            }
        }
        Command::Report { out } => {
            let cfg = load_config(cli)?;
            commands::warehouse_report(&cfg, out)
        }
        Command::Estimate { out } => {
            // The estimate config may be a bare capacity table, which the
            // full config grammar would reject; read it directly.
            let inputs = match &cli.config {
                Some(path) => config::load_capacity_file(path)?,
                None => load_config(cli)?.capacity,
            };
            commands::estimate(&inputs, out)
        }
        Command::Bench { rows, dims, reps, seed, out } => {
            commands::bench_run(rows, dims, *reps, *seed, out)
        }
        Command::Generate { rows, seed, months, geos, out } => {
            commands::generate(*rows, *seed, *months, *geos, out)
        }
        Command::Demo { seed, rows, geos, out } => commands::demo(*seed, *rows, *geos, out),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("ncdw: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
