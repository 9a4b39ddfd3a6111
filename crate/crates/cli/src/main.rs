mod analyze;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use cloze_bench::analysis::PointGrouping;

use config::{ScorerKind, ScorerSection};

/// Bad flags or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "cloze-bench", version, about = "Cloze-style knowledge probing of masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mine template-free prompts from a dated abstract corpus.
    BuildDataset(BuildArgs),
    /// Convert PubMed XML to corpus JSONL.
    ConvertPubmed(ConvertArgs),
    /// Generate parallel template-based and template-free prompts from triples.
    GenPrompts(PromptArgs),
    /// Rank the candidate pool for every prompt and report Acc@k.
    Evaluate(EvalArgs),
    /// Pseudo-perplexity of every prompt in a dataset.
    Ppl(PplArgs),
    /// Rank tables, parallel-score reports, overconfidence and correlations.
    Analyze(AnalyzeArgs),
    /// Render an analysis as text tables, CSV and Vega-Lite specs.
    Report(ReportArgs),
}

#[derive(Debug, Clone)]
pub enum PolicyArg {
    Default,
    None,
    File(PathBuf),
}

fn parse_policy(s: &str) -> Result<PolicyArg, String> {
    Ok(match s {
        "default" => PolicyArg::Default,
        "none" => PolicyArg::None,
        path => PolicyArg::File(path.into()),
    })
}

#[derive(Args)]
pub struct BuildArgs {
    /// Corpus JSONL file or directory of *.jsonl files ({doc_id, text, date}).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Entity lexicon, one surface form per line.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Keep documents dated strictly after this day (YYYY-MM-DD).
    #[arg(long)]
    pub cutoff: NaiveDate,
    /// Output dataset; the manifest and rejection report are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// `default`, `none`, or a file with one forbidden substring per line.
    #[arg(long, default_value = "default", value_parser = parse_policy)]
    pub policy: PolicyArg,
    #[arg(long)]
    pub case_insensitive: bool,
    #[arg(long, default_value = "entity")]
    pub label: String,
    /// Dataset name; defaults to the output file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub min_tokens: usize,
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
}

#[derive(Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PromptArgs {
    /// Triples JSONL ({subject, relation, object, evidence_text?}).
    #[arg(long)]
    pub triples: PathBuf,
    /// Templates JSONL ({template_id, relation, pattern}); built-in set by default.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Default)]
pub struct ScorerFlags {
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Base URL of a remote scorer.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Whitespace-tokenised corpus for the reference unigram scorer.
    #[arg(long)]
    pub ref_corpus: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl ScorerFlags {
    fn to_section(&self) -> ScorerSection {
        ScorerSection {
            kind: self.scorer,
            endpoint: self.endpoint.clone(),
            corpus: self.ref_corpus.clone(),
            alpha: self.alpha,
            ..ScorerSection::default()
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    /// Run configuration (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// TOML file with the scorer table only.
    #[arg(long)]
    pub scorer_config: Option<PathBuf>,
    #[command(flatten)]
    pub scorer: ScorerFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated cutoffs, e.g. 1,5,10.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long)]
    pub top_k_stored: Option<usize>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Candidate pool file replacing the dataset's gold entities.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct PplArgs {
    #[command(flatten)]
    pub run: EvalArgs,
    /// Score the stored prompt with its placeholder instead of the gold-filled sentence.
    #[arg(long)]
    pub placeholder: bool,
    /// Leave values above this out of the mean.
    #[arg(long)]
    pub outlier_threshold: Option<f64>,
}

fn parse_grouping(s: &str) -> Result<PointGrouping, String> {
    match s {
        "per-dataset" => Ok(PointGrouping::PerDataset),
        "per-model" => Ok(PointGrouping::PerModel),
        _ => Err(format!("expected per-dataset or per-model, got {s:?}")),
    }
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Directories searched recursively for runs and PPL summaries.
    pub inputs: Vec<PathBuf>,
    /// Analyse the bundled published result tables instead.
    #[arg(long, conflicts_with = "inputs")]
    pub published: bool,
    /// Pair datasets as TEMPLATE_FREE=TEMPLATE_BASED for a parallel-score report.
    #[arg(long)]
    pub parallel: Vec<String>,
    /// One correlation point per dataset or per model.
    #[arg(long, default_value = "per-dataset", value_parser = parse_grouping)]
    pub grouping: PointGrouping,
    /// Perplexities above this are left out of the correlation.
    #[arg(long)]
    pub outlier_threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// An analysis directory or analysis.json file.
    #[arg(long)]
    pub analysis: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(&a).map(|_| 0),
        Command::ConvertPubmed(a) => commands::convert_pubmed(&a).map(|_| 0),
        Command::GenPrompts(a) => commands::gen_prompts(&a).map(|_| 0),
        Command::Evaluate(a) => commands::evaluate_cmd(&a),
        Command::Ppl(a) => commands::ppl_cmd(&a),
        Command::Analyze(a) => analyze::analyze(&a).map(|_| 0),
        Command::Report(a) => analyze::report(&a).map(|_| 0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
