mod commands;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Overrides every output location when set.
pub const OUT_DIR_ENV: &str = "NPUKG_OUT_DIR";

#[derive(Parser, Debug)]
#[command(
    name = "npukg",
    version,
    about = "Noisy positive-unlabeled knowledge-graph reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Flip a fraction of links in a triple file and record the edits.
    Perturb(PerturbArgs),
    /// Randomly partition a triple file into train and valid parts.
    Split(SplitArgs),
    /// Train a model and write the best checkpoint, metrics and posteriors.
    Train(TrainArgs),
    /// Filtered ranking metrics, plus noise detection when a flip log is given.
    Eval(EvalArgs),
    /// Top-ranked completions for a single query.
    Predict(PredictArgs),
    /// Summarise a posterior dump.
    InspectPosterior(InspectArgs),
    /// Train and evaluate every point of a hyperparameter grid over several seeds.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct PerturbArgs {
    /// Input triples (TSV).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub ptb_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    pub removal_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbed triples (TSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Flip log; defaults to `<out>.fliplog.tsv`.
    #[arg(long)]
    pub fliplog: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Share of triples kept for training.
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving `train.tsv` and `valid.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat `key = value` config; `alpha` and `beta` are required.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    /// Extra known-true triples excluded from validation rankings.
    #[arg(long)]
    pub filter: Vec<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankBy {
    /// Positive-collection score.
    Positive,
    /// Labeled-triple posterior under the checkpoint's beta.
    Posterior,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ties {
    Optimistic,
    Pessimistic,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Known-true triples removed from the candidate lists.
    #[arg(long)]
    pub filter: Vec<PathBuf>,
    /// Hits cutoffs, comma separated.
    #[arg(long, default_value = "1,3,10")]
    pub ks: String,
    /// Flip log of the perturbation that produced the training data.
    #[arg(long, requires = "labeled")]
    pub fliplog: Option<PathBuf>,
    /// Labeled (training) triples scored for noise detection.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RankBy::Positive)]
    pub rank_by: RankBy,
    #[arg(long, value_enum, default_value_t = Ties::Optimistic)]
    pub ties: Ties,
    /// Directory for `eval.csv` and `detection.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Known head; omit to predict heads.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub relation: String,
    /// Known tail; omit to predict tails.
    #[arg(long)]
    pub tail: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Known triples left out of the listing.
    #[arg(long)]
    pub filter: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = RankBy::Positive)]
    pub rank_by: RankBy,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Posterior dump written by `train`.
    #[arg(long)]
    pub dump: PathBuf,
    /// Training triples, to name labeled rows.
    #[arg(long)]
    pub labeled: Option<PathBuf>,
    /// Rows listed per section.
    #[arg(long, default_value_t = 10)]
    pub lowest: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Flat `key = v1,v2,...` grid; single values are fixed settings.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub filter: Vec<PathBuf>,
    /// Seeds, comma separated.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long, default_value = "1,3,10")]
    pub ks: String,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// `--out` unless the override variable is set.
pub fn output_dir(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        Some(dir) => {
            let dir = PathBuf::from(dir);
            info!(
                "{OUT_DIR_ENV}={} overrides --out {}",
                dir.display(),
                flag.display()
            );
            dir
        }
        None => flag.to_path_buf(),
    }
}

/// Like [`output_dir`] for commands whose `--out` is optional.
pub fn optional_output_dir(flag: Option<&Path>) -> Option<PathBuf> {
    match (
        flag,
        std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()),
    ) {
        (Some(f), _) => Some(output_dir(f)),
        (None, Some(dir)) => {
            info!(
                "{OUT_DIR_ENV}={} used as output directory",
                PathBuf::from(&dir).display()
            );
            Some(PathBuf::from(dir))
        }
        (None, None) => None,
    }
}

/// Output file `flag`, relocated into the override directory when set.
pub fn output_file(flag: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        Some(dir) => {
            let path = PathBuf::from(dir).join(flag.file_name().unwrap_or(flag.as_os_str()));
            info!(
                "{OUT_DIR_ENV} relocates {} to {}",
                flag.display(),
                path.display()
            );
            path
        }
        None => flag.to_path_buf(),
    }
}

/// Comment lines stamped on every artifact.
pub fn artifact_header(seed: impl std::fmt::Display, config_hash: &str) -> Vec<String> {
    vec![format!(
        "npukg {VERSION} seed={seed} config_hash={config_hash}"
    )]
}

pub fn banner(command: &str, seed: impl std::fmt::Display, config_hash: &str) {
    info!("npukg {VERSION} {command}: seed={seed} config_hash={config_hash}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Perturb(a) => commands::perturb(&a),
        Command::Split(a) => commands::split(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::InspectPosterior(a) => commands::inspect_posterior(&a),
        Command::Sweep(a) => sweep::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
