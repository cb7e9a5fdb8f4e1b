//! `hashcont`: synthesize data, train encoders, encode, query and evaluate.
//!
//! Exit codes: 0 on success, 2 for usage, config, data or I/O errors, 3 when
//! training hits a numeric failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hashcont::config::Preset;
use hashcont::pairdata::SplitMode;
use hashcont::Variant;

/// Default output directory when neither the flag nor the config names one.
pub const OUT_ENV: &str = "HASHCONT_OUT";

#[derive(Parser, Debug)]
#[command(name = "hashcont", version, about = "Binary hash codes by continuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Gaussian-cluster feature file.
    Synth(SynthArgs),
    /// Split a feature file into train, database and query files.
    Split(SplitArgs),
    /// Train an encoder from a JSON run config.
    Train(TrainArgs),
    /// Encode a feature file into an HNBC code file plus manifest.
    Encode(EncodeArgs),
    /// Evaluate query codes against database codes.
    Eval(EvalArgs),
    /// Rank database codes for one query.
    Query(QueryArgs),
    /// Histogram of |g| for a checkpoint on a feature file.
    Histogram(HistogramArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PresetArg {
    ClusterBenchmark,
    Imbalanced,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::ClusterBenchmark => Preset::ClusterBenchmark,
            PresetArg::Imbalanced => Preset::Imbalanced,
        }
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Start from a preset; explicit flags override its fields.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    multilabel: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SplitModeArg {
    Standard,
    ZeroShot,
}

impl From<SplitModeArg> for SplitMode {
    fn from(m: SplitModeArg) -> Self {
        match m {
            SplitModeArg::Standard => SplitMode::Standard,
            SplitModeArg::ZeroShot => SplitMode::ZeroShot,
        }
    }
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    mode: SplitModeArg,
    #[arg(long, default_value_t = 0.8)]
    train: f64,
    #[arg(long, default_value_t = 0.1)]
    database: f64,
    /// Point fraction, or held-out class fraction in zero-shot mode.
    #[arg(long, default_value_t = 0.1)]
    query: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = OUT_ENV)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long, default_value = "hashnet", value_parser = parse_variant)]
    variant: Variant,
    /// Overrides the config's output directory, which in turn overrides
    /// the environment default.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: hashcont::Error| e.to_string())
}

#[derive(Args, Debug)]
struct EncodeArgs {
    /// Trained checkpoint; omit when using --lsh-bits.
    #[arg(long, required_unless_present = "lsh_bits")]
    checkpoint: Option<PathBuf>,
    /// Random-hyperplane baseline with this many bits instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    lsh_bits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    lsh_seed: u64,
    /// Feature files, concatenated in order; ids count records from 0.
    #[arg(short, long, required = true)]
    input: Vec<PathBuf>,
    /// Code file; the manifest is written next to it with a `.json` extension.
    #[arg(short, long)]
    output: PathBuf,
    /// Added to every record id, to keep ids of separate files distinct.
    #[arg(long, default_value_t = 0)]
    id_offset: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Query manifest (JSON written by `encode`).
    #[arg(long)]
    queries: PathBuf,
    /// Database manifest.
    #[arg(long)]
    database: PathBuf,
    #[arg(short, default_value_t = 100)]
    k: usize,
    /// Comma-separated subset of map, pr, p_h2, p_at_n.
    #[arg(long, value_delimiter = ',', default_value = "map,pr,p_h2,p_at_n")]
    metrics: Vec<String>,
    /// Divide AP by min(R, k) instead of the relevant items retrieved.
    #[arg(long)]
    ap_min_rk: bool,
    /// Keep database entries whose id equals the query's.
    #[arg(long)]
    keep_self: bool,
    #[arg(long, env = OUT_ENV)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct QueryArgs {
    #[arg(long)]
    database: PathBuf,
    /// Manifest holding the query code; defaults to the database.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Id of the query within the query manifest.
    #[arg(long, conflicts_with = "bits")]
    id: Option<u64>,
    /// Query code as a string of 0/1 characters, bit 0 first; 1 means +1.
    #[arg(long, required_unless_present = "id")]
    bits: Option<String>,
    #[arg(long, conflicts_with = "radius")]
    top_n: Option<usize>,
    #[arg(long)]
    radius: Option<u32>,
}

#[derive(Args, Debug)]
struct HistogramArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    input: PathBuf,
    /// Activation bandwidth; defaults to the checkpoint's.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    #[arg(short, long)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Encode(a) => commands::encode(a),
        Command::Eval(a) => commands::eval(a),
        Command::Query(a) => commands::query(a),
        Command::Histogram(a) => commands::histogram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(hashcont::Error::NumericFailure { .. })));
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}
