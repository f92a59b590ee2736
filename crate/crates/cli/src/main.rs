use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use moodsense::ingest::{Format, RecordKind};
use moodsense::maplayer::MapFilter;
use moodsense::pipeline::Analysis;
use moodsense_cli::commands::{self, parse_time};
use moodsense_cli::config::Config;
use moodsense_cli::server::{serve, AppState};

#[derive(Parser)]
#[command(name = "moodsense", version, about = "Mood analytics from smartwatch sensing and experience sampling")]
struct Cli {
    /// Store directory (created on first use).
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
    /// Seed for every random choice; overrides `simulate.seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for reports and exports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Observations,
    Participants,
    Responses,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AnalysisArg {
    Correlations,
    Glmm,
    Forest,
}

#[derive(Subcommand)]
enum Command {
    /// Append a CSV or JSONL file to the store.
    Ingest {
        file: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
    },
    /// Generate a synthetic cohort with a known generating model.
    Simulate {
        #[arg(long)]
        participants: Option<usize>,
        #[arg(long)]
        days: Option<usize>,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        /// Also load the cohort into the store.
        #[arg(long)]
        ingest: bool,
    },
    /// Apply the heart-rate floor and write the assembled analysis rows.
    Clean,
    /// Run one analysis and write `<name>.txt` and `<name>.csv`.
    Analyze {
        #[arg(value_enum)]
        analysis: AnalysisArg,
    },
    /// Write mood-tagged GPS points as GeoJSON.
    ExportMap {
        #[arg(long)]
        participant: Option<String>,
        #[arg(long, value_parser = parse_time)]
        from: Option<DateTime<Utc>>,
        #[arg(long, value_parser = parse_time)]
        to: Option<DateTime<Utc>>,
    },
    /// Serve the HTTP API.
    Serve {
        /// Address to bind; defaults to `server.bind` from the config.
        #[arg(long)]
        bind: Option<String>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Ingest { file, kind } => {
            let kind = match kind {
                KindArg::Observations => RecordKind::Observations,
                KindArg::Participants => RecordKind::Participants,
                KindArg::Responses => RecordKind::Responses,
            };
            let report = commands::ingest(&cli.store, &file, kind)?;
            for r in &report.rejected {
                eprintln!("{}: rejected {r}", file.display());
            }
            println!("{}: {} accepted, {} rejected", report.kind, report.accepted, report.rejected.len());
        }
        Command::Simulate {
            participants,
            days,
            format,
            ingest,
        } => {
            let mut cohort = config.simulate.clone();
            if let Some(n) = participants {
                cohort.n_participants = n;
            }
            if let Some(d) = days {
                cohort.days = d;
            }
            if let Some(s) = cli.seed {
                cohort.seed = s;
            }
            let format = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Jsonl => Format::Jsonl,
            };
            let store = ingest.then_some(cli.store.as_path());
            let s = commands::simulate(&cohort, &cli.out_dir, format, store)?;
            println!(
                "simulated {} participants, {} observations, {} responses into {}",
                s.participants,
                s.observations,
                s.responses,
                s.dir.display()
            );
        }
        Command::Clean => {
            let s = commands::clean(&cli.store, &config.analysis, &cli.out_dir)?;
            println!(
                "{} of {} observations removed below {} bpm; {} analysis rows ({} responses skipped) written to {}",
                s.removed,
                s.observations,
                config.analysis.min_bpm,
                s.rows,
                s.skipped,
                s.path.display()
            );
        }
        Command::Analyze { analysis } => {
            let analysis = match analysis {
                AnalysisArg::Correlations => Analysis::Correlations,
                AnalysisArg::Glmm => Analysis::Glmm,
                AnalysisArg::Forest => Analysis::Forest,
            };
            let (txt, csv) = commands::analyze(&cli.store, analysis, &config.analysis, seed, &cli.out_dir)?;
            println!("wrote {} and {}", txt.display(), csv.display());
        }
        Command::ExportMap { participant, from, to } => {
            let filter = MapFilter { participant, from, to };
            let (path, n) = commands::export_map(&cli.store, &config.analysis, &filter, &cli.out_dir)?;
            println!("wrote {n} points to {}", path.display());
        }
        Command::Serve { bind } => {
            let store = commands::open_store(&cli.store)?;
            let bind = bind.unwrap_or(config.server.bind.clone());
            let state = AppState::new(store, config.polls.clone(), config.analysis.clone(), seed);
            tokio::runtime::Runtime::new()?.block_on(serve(state, &bind))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
