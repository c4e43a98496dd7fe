//! `latlm`: train, query and evaluate lattice back-off models.

mod commands;
mod config;
mod failure;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::failure::Failure;

#[derive(Parser)]
#[command(name = "latlm", version, about = "Factored back-off language models over lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, count, discount, train weights and save a model.
    Train(TrainArgs),
    /// Score one conditional query and explain the recursion.
    Query(QueryArgs),
    /// Evaluate a model on a test file.
    Eval(EvalArgs),
    /// Lattice utilities.
    Lattice {
        #[command(subcommand)]
        command: LatticeCommand,
    },
    /// Write a seeded synthetic corpus.
    GenSynth(GenSynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Ngram,
    Ppattach,
    Syncdep,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthTask {
    Ppattach,
    Syncdep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Mixture,
    MaxPath,
}

#[derive(Args, Default)]
pub struct TrainArgs {
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub lattice: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Recorded in the model's provenance.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct QueryArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    /// `outcome | context`, e.g. `w=c | h2=a h1=b`.
    pub query: String,
    /// Evaluate at this node instead of the root.
    #[arg(long)]
    pub node: Option<usize>,
    #[arg(long, value_enum, default_value = "mixture")]
    pub mode: Mode,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Defaults to the task recorded in the model.
    #[arg(long, value_enum)]
    pub task: Option<TaskKind>,
}

#[derive(Subcommand)]
enum LatticeCommand {
    /// Print a lattice as DOT (or as a JSON spec without `--dot`).
    Export(ExportArgs),
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub dot: bool,
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub spec: Option<PathBuf>,
    /// `chain:N`, `ppattach` or `sync:RxC`.
    #[arg(long, group = "source")]
    pub builder: Option<String>,
}

#[derive(Args)]
pub struct GenSynthArgs {
    #[arg(long, value_enum)]
    pub task: SynthTask,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub size: usize,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli, out: &mut impl Write) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => commands::train(a, out),
        Command::Query(a) => commands::query(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::Lattice {
            command: LatticeCommand::Export(a),
        } => commands::export(a, out),
        Command::GenSynth(a) => commands::gen_synth(a, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = out.flush();
            eprintln!("latlm: {f}");
            ExitCode::from(f.code())
        }
    }
}
