use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use layerwise_uq::experiment::SelectionMetric;
use layerwise_uq::DistanceKind;

#[derive(Debug, Parser)]
#[command(
    name = "layerwise-uq",
    version,
    about = "Nearest-neighbour uncertainty features for layered classifiers"
)]
pub struct Cli {
    /// Worker threads for retrieval and fitting (defaults to available parallelism).
    #[arg(long, global = true, env = "UQ_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a repository file and persist it as a searchable activation repository.
    BuildTar(BuildTarArgs),
    /// Retrieve neighbours for every query and emit PBATs plus feature vectors.
    Score(ScoreArgs),
    /// Detector quality of single raw features from a features CSV.
    Metrics(MetricsArgs),
    /// Validation sweep over neighbourhood sizes for the DC and LU detectors.
    Sweep(SweepArgs),
    /// Test-split comparison of None, SM, DC, LU, DC+LU and SM+DC+LU.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic repository and query set.
    Synth(SynthArgs),
    /// Print the tables of a finished run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BuildTarArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub tar: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "braycurtis", value_parser = parse_distance)]
    pub distance: DistanceKind,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// A features.csv written by `score`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by `sweep` and `evaluate`; flags override the config file.
#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub tar: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// TOML or JSON experiment configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighbourhood sizes to sweep, comma separated.
    #[arg(long = "k", value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_distance)]
    pub distance: Option<DistanceKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub selection_metric: Option<MetricArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Neighbourhood size for DC features (requires --k-lu).
    #[arg(long, requires = "k_lu", conflicts_with = "sweep")]
    pub k_dc: Option<usize>,
    /// Neighbourhood size for LU features (requires --k-dc).
    #[arg(long, requires = "k_dc", conflicts_with = "sweep")]
    pub k_lu: Option<usize>,
    /// Take the selected sizes from an earlier sweep.json.
    #[arg(long)]
    pub sweep: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML or JSON generator specification; the benchmark scenario if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_query: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `sweep` or `evaluate`.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricArg {
    Auroc,
    AuprPos,
    AuprNeg,
}

impl From<MetricArg> for SelectionMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Auroc => SelectionMetric::Auroc,
            MetricArg::AuprPos => SelectionMetric::AuprPos,
            MetricArg::AuprNeg => SelectionMetric::AuprNeg,
        }
    }
}

fn parse_distance(s: &str) -> Result<DistanceKind, String> {
    s.parse().map_err(|e: layerwise_uq::Error| e.to_string())
}
