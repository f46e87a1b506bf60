use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Watermark generation, detection and factuality-focused evaluation
/// against a local n-gram language model.
#[derive(Debug, Parser)]
#[command(name = "factmark", version, about, long_about = None)]
pub struct Cli {
    /// TOML configuration file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Omit timestamps from output headers so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// Worker threads for per-item work (default: config value, else 1).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a corpus and report held-out perplexity.
    TrainLm(TrainLmArgs),
    /// Write a synthetic clinical corpus (texts, QA pairs or summaries).
    SynthCorpus(SynthArgs),
    /// Build completion, QA or summarization tasks from raw records.
    BuildTasks(BuildTasksArgs),
    /// Generate one continuation per task, optionally watermarked.
    Generate(GenerateArgs),
    /// Score generations or plain texts with a detector.
    Detect(DetectArgs),
    /// Detection and quality metrics per method.
    Evaluate(EvaluateArgs),
    /// Entropy histograms, entity entropy and hallucination analysis.
    Analyze(AnalyzeArgs),
    /// Pairwise quality judgements from an external chat model (or a mock).
    Judge(JudgeArgs),
    /// Factuality-weighted scores, human correlation and rank tests.
    Fws(FwsArgs),
    /// ROC points over a grid of watermark hyperparameters.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    /// Plain text (one document per line) or JSONL with a `text`/`answer` field.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub order: Option<usize>,
    /// Additive smoothing constant.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub min_count: Option<u64>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    /// Fraction of documents (taken from the end) held out for perplexity.
    #[arg(long, default_value_t = 0.1)]
    pub heldout: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Text,
    Qa,
    Summary,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Text)]
    pub kind: SynthKind,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum corpus size in bytes (texts only).
    #[arg(long, default_value_t = 1_200_000)]
    pub target_bytes: usize,
    /// Number of records (QA pairs and summaries only).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildTasksArgs {
    /// completion, qa or summarization.
    #[arg(long)]
    pub task: String,
    /// JSONL with `{text}`, `{question, answer}` or `{question, summary}` records.
    #[arg(long)]
    pub input: PathBuf,
    /// Number of items to keep.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Pick a seeded random subset instead of the first `n`.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Watermark key and hyperparameters; unset values come from the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct WatermarkArgs {
    /// Secret watermark key.
    #[arg(long)]
    pub key: Option<u64>,
    /// Green-list fraction (KGW, SWEET, DiPmark detection).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Green-logit bias (KGW, SWEET).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Entropy gate in nats (SWEET).
    #[arg(long)]
    pub entropy_threshold: Option<f64>,
    /// Reweighting strength (DiPmark).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Key sequence length (EXP-edit).
    #[arg(long)]
    pub pseudo_length: Option<usize>,
    /// Insertion/deletion penalty of the alignment (EXP-edit).
    #[arg(long)]
    pub gamma_edit: Option<f64>,
    /// Random keys in the permutation test (EXP-edit).
    #[arg(long)]
    pub num_permutations: Option<usize>,
    /// Scored block length (EXP-edit).
    #[arg(long)]
    pub block_len: Option<usize>,
    /// z threshold (KGW, SWEET, DiPmark).
    #[arg(long)]
    pub z_threshold: Option<f64>,
    /// p-value threshold (EXP-edit).
    #[arg(long)]
    pub p_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    /// none, kgw, sweet, dipmark or expedit.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[command(flatten)]
    pub wm: WatermarkArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Generation records written by `generate`.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub input: Option<PathBuf>,
    /// Plain texts: one per line, or JSONL with `id`/`text` fields.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Source label recorded for plain-text inputs.
    #[arg(long, default_value = "human")]
    pub source_label: String,
    /// kgw, sweet, dipmark, expedit, logrank or detectgpt.
    #[arg(long)]
    pub method: String,
    #[command(flatten)]
    pub wm: WatermarkArgs,
    /// Decision threshold for the post-hoc detectors.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub num_perturbations: Option<usize>,
    #[arg(long)]
    pub perturb_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    /// Generation files, one per method (include the `none` baseline).
    #[arg(long, num_args = 1.., required = true)]
    pub gen: Vec<PathBuf>,
    /// Detection score files.
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Comma-separated subset of tpr,auroc,ppl,similarity,rouge2,rougel,f1.
    #[arg(long, default_value = "tpr,auroc,ppl,similarity,rouge2,rougel,f1")]
    pub metrics: String,
    /// Precomputed embeddings (`{text_hash, vector}` JSONL) for similarity.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the plain-text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    pub gen: Vec<PathBuf>,
    /// One term per line; defaults to the bundled list.
    #[arg(long)]
    pub gazetteer: Option<PathBuf>,
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct JudgeArgs {
    /// Pairs JSONL (`{id, task, prompt, watermarked, unwatermarked}`).
    #[arg(long, conflicts_with_all = ["watermarked", "unwatermarked"])]
    pub pairs: Option<PathBuf>,
    /// Watermarked generation file (pairs are built with `--unwatermarked` and `--tasks`).
    #[arg(long, requires_all = ["unwatermarked", "tasks"])]
    pub watermarked: Option<PathBuf>,
    #[arg(long)]
    pub unwatermarked: Option<PathBuf>,
    #[arg(long)]
    pub tasks: Option<PathBuf>,
    /// Answer with an offline mock instead of calling the service.
    #[arg(long)]
    pub mock: bool,
    /// Seed of the A/B position randomization.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub judge_model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FwsArgs {
    /// Judge output or aspect JSONL (`{id, method, coherence, relevance, factual_accuracy}`).
    #[arg(long)]
    pub aspects: PathBuf,
    /// Human ratings CSV (`item_id,rater_id,coherence,relevance,factual_accuracy`).
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Weightings as `alpha:beta` pairs, comma-separated (default: the five study configs).
    #[arg(long)]
    pub configs: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub tasks: PathBuf,
    /// kgw, sweet, dipmark or expedit.
    #[arg(long)]
    pub method: String,
    #[arg(long, value_delimiter = ',')]
    pub deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub pseudo_lengths: Option<Vec<usize>>,
    /// Use only the first `n` tasks.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[command(flatten)]
    pub wm: WatermarkArgs,
    /// ROC points CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-configuration TPR/AUROC CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
