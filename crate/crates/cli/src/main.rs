//! `biascorpus`: the dataset pipeline from document ingestion to evaluation.

mod adapters;
mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adapters::AdapterArgs;

#[derive(Debug, Parser)]
#[command(
    name = "biascorpus",
    version,
    about = "Build, split and evaluate linguistic-bias datasets"
)]
pub struct Cli {
    /// Master seed; every stage derives a named sub-seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `key = value` configuration file. BIASCORPUS_* variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (or directory for split and holdout).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Refuse to run when inputs recorded in the output's manifest changed.
    #[arg(long, global = true)]
    pub verify: bool,
    /// Lexicon TSV file; defaults to the bundled lexicon.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    /// Also match forms with the suffixes -e, -en, -s and -'s.
    #[arg(long, global = true)]
    pub suffix_expansion: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch, normalize, segment and deduplicate documents into sentences.jsonl.
    Ingest(IngestArgs),
    /// Keep sentences with at least one lexicon match (candidates.jsonl).
    Extract(ExtractArgs),
    /// Draw an annotation batch from the candidates.
    Sample(SampleArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
    /// Open or export annotation sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Fleiss' kappa over exported annotation records.
    Iaa(IaaArgs),
    /// Resolve annotations into a labelled dataset.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// In-domain train/val/test split.
    Split(SplitArgs),
    /// Out-of-domain split holding out rare terms.
    Holdout(HoldoutArgs),
    /// Resample a training split to a target size and class ratio.
    Resample(ResampleArgs),
    /// Run a classifier over a dataset file.
    Classify(ClassifyArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Explain single predictions by token masking.
    Explain(ExplainArgs),
    /// Evaluate several runs and render comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Local directory of .txt/.json documents or an http(s) search endpoint.
    #[arg(long)]
    pub source: Option<String>,
    /// First publication date included (YYYY-MM-DD).
    #[arg(long)]
    pub from: Option<String>,
    /// First publication date excluded (YYYY-MM-DD); defaults to today.
    #[arg(long)]
    pub to: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub sentences: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Random,
    TermDiversity,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(short = 'n', long)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub strategy: StrategyArg,
    /// Annotation records whose items are already labelled.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory holding the event log and snapshots.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Debug, Subcommand)]
pub enum SessionCommand {
    /// Create a session from a batch file.
    Open(SessionOpenArgs),
    /// Write every annotation record as JSONL.
    Export(SessionExportArgs),
}

#[derive(Debug, Args)]
pub struct SessionOpenArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub batch: PathBuf,
    #[arg(long = "session")]
    pub session_id: String,
    /// Comma-separated annotator ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub annotators: Vec<String>,
    /// Fraction of the batch labelled by every annotator.
    #[arg(long, conflicts_with = "overlap_count")]
    pub overlap: Option<f64>,
    /// Number of batch items labelled by every annotator.
    #[arg(long)]
    pub overlap_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub round: u32,
}

#[derive(Debug, Args)]
pub struct SessionExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Limit the export to one session.
    #[arg(long = "session")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IaaMode {
    FourWay,
    Binary,
}

#[derive(Debug, Args)]
pub struct IaaArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "four-way")]
    pub mode: IaaMode,
    /// Only records of this round.
    #[arg(long)]
    pub round: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Resolve annotation records into dataset.jsonl.
    Build(DatasetBuildArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    ExpertQueue,
    Majority,
}

#[derive(Debug, Args)]
pub struct DatasetBuildArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value = "expert-queue")]
    pub policy: PolicyArg,
    /// Annotator whose 0/1 label overrides the panel.
    #[arg(long)]
    pub expert: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub max_rounds: u32,
    /// Also write a text,label CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the dataset even while items await the expert.
    #[arg(long)]
    pub allow_pending: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Dataset as JSONL or a CSV with text and label columns.
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub proportions: String,
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Args)]
pub struct HoldoutArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Terms matched this many times or fewer are held out.
    #[arg(long, default_value_t = 10)]
    pub threshold: usize,
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub proportions: String,
    /// Split the remainder train/val/test and append held-out items to test.
    #[arg(long)]
    pub append_to_test: bool,
    #[arg(long)]
    pub stratify: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResampleStrategyArg {
    None,
    Undersample,
    Oversample,
    Balanced,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// undersample, oversample or balanced with their bundled targets.
    #[arg(long, conflicts_with_all = ["strategy", "ratio", "size"])]
    pub preset: Option<String>,
    #[arg(long, value_enum, requires_all = ["ratio", "size"])]
    pub strategy: Option<ResampleStrategyArg>,
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub adapter: AdapterArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    InDomain,
    OutOfDomain,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    /// Leave abstained items out instead of scoring them NotBiased.
    #[arg(long)]
    pub drop_abstain: bool,
    #[arg(long, value_enum, default_value = "in-domain")]
    pub regime: RegimeArg,
    #[arg(long, value_enum, default_value = "none")]
    pub strategy: ResampleStrategyArg,
    /// Defaults to the model id recorded in the predictions.
    #[arg(long)]
    pub model_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Item ids to explain; all items when omitted.
    #[arg(long = "item")]
    pub items: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 8)]
    pub top_k: usize,
    /// Defaults to 0.75 * sqrt(token count).
    #[arg(long)]
    pub kernel_width: Option<f64>,
    /// Also write a static HTML rendering.
    #[arg(long)]
    pub html: Option<PathBuf>,
    #[command(flatten)]
    pub adapter: AdapterArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSON list of {model_id, regime, strategy, predictions, gold}; paths
    /// are relative to this file.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub drop_abstain: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e);
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::CliError;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_name_the_flag() {
        let err = Cli::try_parse_from(["biascorpus", "split", "--dataset", "d.jsonl", "--bogus"]).unwrap_err();
        assert!(err.to_string().contains("--bogus"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn errors_map_to_exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        let op: CliError = biascorpus_core::Error::from(biascorpus_core::EvalError::Empty).into();
        assert_eq!(op.exit_code(), 1);
    }
}
