//! `coremech`: build scenario graphs, generate MCQA datasets, score model
//! responses and run layer sweeps from the command line.

mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coremech::patchlab::{PatchMode, PositionPolicy};

#[derive(Parser)]
#[command(name = "coremech", version, about = "Script-knowledge graphs, MCQA datasets and direct-effect patching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the compact scenario graph of a corpus.
    BuildGraph(BuildGraphArgs),
    /// Graph statistics as CSV (one row per graph).
    Stats(StatsArgs),
    /// Sample trajectories and export an MCQA dataset with its manifest.
    GenQueries(GenQueriesArgs),
    /// Pair dataset queries with conjugate queries.
    GenConjugates(GenConjugatesArgs),
    /// Score model responses against a dataset.
    Score(ScoreArgs),
    /// Direct-effect layer sweep over conjugate pairs.
    PatchSweep(PatchSweepArgs),
    /// Write a seeded toy model in the binary model format.
    InitModel(InitModelArgs),
    /// Run every brute-force oracle suite.
    Selftest(SelftestArgs),
}

#[derive(Args)]
pub struct BuildGraphArgs {
    /// Corpus JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Graph JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop the lowest-support edge of each cycle instead of failing.
    #[arg(long)]
    pub break_cycles: bool,
}

#[derive(Args)]
pub struct StatsArgs {
    /// Graph JSON files.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report entropy in bits instead of nats.
    #[arg(long)]
    pub bits: bool,
    /// Only report the named scenario.
    #[arg(long)]
    pub scenario: Option<String>,
}

#[derive(Args)]
pub struct GenQueriesArgs {
    /// Graph JSON.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Dataset JSONL; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub traj: usize,
    #[arg(long)]
    pub seed: u64,
    /// Drop queries whose prompt text repeats.
    #[arg(long, default_value_t = true, num_args = 0..=1, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub dedup: bool,
    #[arg(long, default_value_t = 2)]
    pub min_distance: usize,
}

#[derive(Args)]
pub struct GenConjugatesArgs {
    /// Dataset JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Graph JSON the dataset was generated from.
    #[arg(long)]
    pub graph: PathBuf,
    /// Paired JSONL (clean record followed by its conjugate).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Stop after this many pairs.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Dataset JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Response JSONL.
    #[arg(long)]
    pub responses: PathBuf,
    /// Report JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub shots: Option<usize>,
}

#[derive(Args)]
pub struct PatchSweepArgs {
    /// Paired JSONL from gen-conjugates.
    #[arg(long = "in", required_unless_present = "merge")]
    pub input: Option<PathBuf>,
    /// Curves JSON (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Binary model file; a seeded model is built when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Seed for the built model and for random corruption.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "direct")]
    pub mode: PatchMode,
    /// `last` or `suffix:<k>`.
    #[arg(long, default_value = "last")]
    pub positions: PositionPolicy,
    /// Normalize the final residual before unembedding.
    #[arg(long)]
    pub final_norm: bool,
    /// Base run: the conjugate prompt or a random corruption of the clean one.
    #[arg(long, value_enum, default_value = "conjugate")]
    pub baseline: Baseline,
    /// Keep only pairs whose clean query the model answers correctly.
    #[arg(long)]
    pub only_correct: bool,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Average existing curve files instead of sweeping.
    #[arg(long, num_args = 1.., conflicts_with = "input")]
    pub merge: Vec<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Conjugate,
    Random,
}

#[derive(Args)]
pub struct InitModelArgs {
    /// Dataset or paired JSONL files whose prompts define the vocabulary.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long)]
    pub final_norm: bool,
}

#[derive(Args)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("COREMECH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildGraph(a) => commands::build_graph(a),
        Command::Stats(a) => commands::stats(a),
        Command::GenQueries(a) => commands::gen_queries(a),
        Command::GenConjugates(a) => commands::gen_conjugates(a),
        Command::Score(a) => commands::score(a),
        Command::PatchSweep(a) => commands::patch_sweep(a),
        Command::InitModel(a) => commands::init_model(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
