//! Command-line front end for the language-neutrality probes.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lngprobe::Error;

#[derive(Debug, Parser)]
#[command(
    name = "lngprobe",
    version,
    about = "Language-neutrality probes for multilingual embeddings"
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    /// Report (or primary output) path; reports go to stdout when omitted.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool token matrices into sentence vectors.
    Pool(commands::PoolArgs),
    /// Compute per-language centroids of sentence vectors.
    Centroids(commands::CentroidsArgs),
    /// Subtract language centroids from sentence vectors.
    Center(commands::CenterArgs),
    /// Fit a least-squares projection from one space into another.
    FitProjection(commands::FitProjectionArgs),
    /// Parallel sentence retrieval across languages.
    Retrieve(commands::RetrieveArgs),
    /// Word alignment of parallel token dumps.
    Align(commands::AlignArgs),
    /// Score predicted links against gold sure/possible links.
    AlignEval(commands::AlignEvalArgs),
    /// Pick the distortion weight with the best development F1.
    TuneDistortion(commands::TuneArgs),
    /// Train a language identification classifier.
    LangidTrain(commands::LangidTrainArgs),
    /// Evaluate a language identification classifier.
    LangidEval(commands::LangidEvalArgs),
    /// Cluster language centroids and score them against families.
    Cluster(commands::ClusterArgs),
    /// Quality estimation against HTER.
    Qe(commands::QeArgs),
    /// Generate additive-model synthetic dumps.
    Synth(commands::SynthArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Training(_) => 4,
        Error::Io(_)
        | Error::Format(_)
        | Error::Corruption(_)
        | Error::Validation(_)
        | Error::Json(_) => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let c = &cli.common;
    let result = match cli.command {
        Command::Pool(a) => commands::pool(c, a),
        Command::Centroids(a) => commands::centroids(c, a),
        Command::Center(a) => commands::center(c, a),
        Command::FitProjection(a) => commands::fit_projection(c, a),
        Command::Retrieve(a) => commands::retrieve(c, a),
        Command::Align(a) => commands::align(c, a),
        Command::AlignEval(a) => commands::align_eval(c, a),
        Command::TuneDistortion(a) => commands::tune_distortion(c, a),
        Command::LangidTrain(a) => commands::langid_train(c, a),
        Command::LangidEval(a) => commands::langid_eval(c, a),
        Command::Cluster(a) => commands::cluster(c, a),
        Command::Qe(a) => commands::qe(c, a),
        Command::Synth(a) => commands::synth(c, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let body = serde_json::json!({ "error": e.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
