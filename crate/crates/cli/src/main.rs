use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use screengraph_cli::commands::{self, CliError};
use screengraph_cli::config::AppConfig;
use screengraph_cli::server;

#[derive(Parser)]
#[command(name = "screengraph", version, about = "Structural search over screen layouts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic manifest corpus.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_template: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_visual: bool,
    },
    /// Train the encoder on a manifest directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Manifest directory; defaults to `data_dir`.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Continue from the checkpoint's optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Add a manifest directory to the index.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Manifest directory; defaults to `data_dir`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Pairwise cosine spread of the structural embeddings.
    EvalSpread {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "spread")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Query latency percentiles per query kind.
    Bench {
        #[command(flatten)]
        common: Common,
        /// JSON suite `{"queries": [{"kind", "query"}], "repeats"}`.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Queries per kind in the generated suite when no file is given.
        #[arg(long, default_value_t = 20)]
        standard: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one query and print the response.
    Query {
        #[command(flatten)]
        common: Common,
        text: String,
        /// Force a strategy: vector-only, metadata-only, metadata-first, vector-first.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
    },
    /// Write the index to another file.
    SaveIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Rebuild the approximate index before saving.
        #[arg(long)]
        ann: bool,
    },
    /// Load and verify an index file.
    LoadIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        path: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Generate { common, .. }
            | Command::Train { common, .. }
            | Command::Ingest { common, .. }
            | Command::EvalSpread { common, .. }
            | Command::Bench { common, .. }
            | Command::Query { common, .. }
            | Command::Serve { common }
            | Command::SaveIndex { common, .. }
            | Command::LoadIndex { common, .. } => common,
        }
    }
}

fn print(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = AppConfig::load(cli.command.common().config.as_deref())?;
    let ansi = std::io::IsTerminal::is_terminal(&std::io::stderr());
    tracing_subscriber::fmt().with_max_level(cfg.log_level()).with_ansi(ansi).with_writer(std::io::stderr).init();
    match cli.command {
        Command::Generate { out, per_template, seed, no_visual, .. } => {
            let n = commands::generate(&out, per_template, seed, !no_visual)?;
            print(&serde_json::json!({ "written": n, "dir": out }));
        }
        Command::Train { corpus, resume, .. } => print(&commands::train(&cfg, corpus.as_deref(), resume)?),
        Command::Ingest { dir, .. } => print(&commands::ingest(&cfg, dir.as_deref())?),
        Command::EvalSpread { out, seed, .. } => print(&commands::eval_spread(&cfg, &out, seed)?),
        Command::Bench { suite, standard, seed, .. } => print(&commands::bench(&cfg, suite.as_deref(), standard, seed)?),
        Command::Query { text, strategy, .. } => print(&commands::query(&cfg, &text, strategy.as_deref())?),
        Command::Serve { .. } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(e.to_string()))?;
            rt.block_on(server::serve(cfg))?;
        }
        Command::SaveIndex { out, ann, .. } => print(&commands::save_index(&cfg, &out, ann)?),
        Command::LoadIndex { path, .. } => print(&commands::load_index(&cfg, path.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
