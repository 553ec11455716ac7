mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpfa_core::events::{CsvSchema, SplitMode};
use mpfa_core::train::SweepParam;

use config::{ModelKind, Task, TrainFlags};

#[derive(Parser)]
#[command(name = "mpfa", version, about = "Train and evaluate the MPFA dynamic-graph model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Interaction CSV (gzip when the name ends in .gz).
    #[arg(long)]
    data: Option<PathBuf>,
    /// CSV layout: plain, plain-labeled or jodie.
    #[arg(long)]
    schema: Option<CsvSchema>,
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model (or run a baseline) and report test metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// mpfa, edgebank or random.
        #[arg(long)]
        model: Option<ModelKind>,
        /// Number of runs with consecutive seeds; reports mean and std.
        #[arg(long)]
        repeats: Option<usize>,
        /// EdgeBank time window (unlimited when absent).
        #[arg(long)]
        window: Option<f64>,
    },
    /// Evaluate a checkpoint or a baseline.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        model: Option<ModelKind>,
        /// link or node.
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        window: Option<f64>,
    },
    /// Train every ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated split modes.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<SplitMode>>,
    },
    /// Train once per neighbor count.
    SweepNeighbors {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Train once per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// batch_size, embed_dim, dropout or k.
        #[arg(long)]
        param: Option<SweepParam>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Write a synthetic recurrent interaction stream.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        events: Option<usize>,
        #[arg(long)]
        recurrence_prob: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        /// Add a label column (1 when the destination is not the usual partner).
        #[arg(long)]
        labels: bool,
    },
    /// Dump source-side attention weights of the first events.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        /// Model to inspect; a freshly initialized one when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        max_events: Option<usize>,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "link" => Ok(Task::Link),
        "node" => Ok(Task::Node),
        _ => Err(format!("unknown task {s:?} (expected link or node)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numeric() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
