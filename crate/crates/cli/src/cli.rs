use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coreset_ssl::trainer::SelectorKind;
use coreset_ssl::verify::CheckKind;

#[derive(Debug, Parser)]
#[command(name = "coreset-ssl", version, about = "Coreset selection for semi-supervised learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write labeled/unlabeled/test CSVs for a run config.
    Generate(GenerateArgs),
    /// Train one or more seeds and write result, metrics, trace and checkpoint files.
    Train(TrainArgs),
    /// Run a selector once on a checkpoint and write the coreset and its trace.
    Select(SelectArgs),
    /// Run the oracle suite; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Aggregate result files into a selector x budget x scenario table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Overrides shared by `train` and `select`.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub selector: Option<SelectorArg>,
    #[arg(long)]
    pub budget: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Number of consecutive seeds starting at the run seed; each gets `<out>/seed-<s>/`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Worker threads for running seeds concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// `checkpoint.json` written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum)]
    pub only: Option<CheckArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbs one analytic gradient so the finite-difference checks must fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `result.json` files or directories searched recursively for them.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Retrieve,
    Random,
    Craig,
    Gradmatch,
    Full,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::Retrieve => SelectorKind::Retrieve,
            SelectorArg::Random => SelectorKind::Random,
            SelectorArg::Craig => SelectorKind::Craig,
            SelectorArg::Gradmatch => SelectorKind::Gradmatch,
            SelectorArg::Full => SelectorKind::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckArg {
    Gradients,
    Taylor,
    Greedy,
    Optimality,
    Submodularity,
    Baselines,
}

impl From<CheckArg> for CheckKind {
    fn from(c: CheckArg) -> Self {
        match c {
            CheckArg::Gradients => CheckKind::Gradients,
            CheckArg::Taylor => CheckKind::Taylor,
            CheckArg::Greedy => CheckKind::Greedy,
            CheckArg::Optimality => CheckKind::Optimality,
            CheckArg::Submodularity => CheckKind::Submodularity,
            CheckArg::Baselines => CheckKind::Baselines,
        }
    }
}
