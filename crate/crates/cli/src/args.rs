use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use seghash::align::{NegativeSource, Side};
use seghash::pipeline::Ablation;
use seghash::pretrain::Similarity;
use seghash::ternary::SegmentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "seghash",
    version,
    about = "Segmented ternary hashing: train, index, query, evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate clustered paired embeddings with train/val/test splits.
    Synth(SynthArgs),
    /// Pretrain both hash heads on the contrastive initial loss.
    Pretrain(PretrainArgs),
    /// Iteratively align the heads (or pass them through for NA_* modes).
    Align(AlignArgs),
    /// Encode a code corpus and write its segmented index.
    BuildIndex(BuildIndexArgs),
    /// Recall candidates for one or all queries, optionally re-ranked.
    Query(QueryArgs),
    /// Compute retrieval metrics for a query set.
    Eval(EvalArgs),
    /// Time table recall against a Hamming scan and LSH.
    Bench(BenchArgs),
    /// Re-run the command recorded in a manifest into a new output directory.
    Replay(ReplayArgs),
}

impl Cmd {
    pub fn name(&self) -> &'static str {
        match self {
            Cmd::Synth(_) => "synth",
            Cmd::Pretrain(_) => "pretrain",
            Cmd::Align(_) => "align",
            Cmd::BuildIndex(_) => "build-index",
            Cmd::Query(_) => "query",
            Cmd::Eval(_) => "eval",
            Cmd::Bench(_) => "bench",
            Cmd::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Cmd::Synth(a) => &mut a.out,
            Cmd::Pretrain(a) => &mut a.out,
            Cmd::Align(a) => &mut a.out,
            Cmd::BuildIndex(a) => &mut a.out,
            Cmd::Query(a) => &mut a.out,
            Cmd::Eval(a) => &mut a.out,
            Cmd::Bench(a) => &mut a.out,
            Cmd::Replay(a) => &mut a.out,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10_000)]
    pub train: usize,
    #[arg(long, default_value_t = 1_000)]
    pub val: usize,
    #[arg(long, default_value_t = 2_000)]
    pub test: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub clusters: usize,
    /// Per-modality noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub center_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    /// Keep raw vectors instead of scaling them to unit length.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct PairInputs {
    #[arg(long)]
    pub code_emb: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// Validation code embeddings, paired row by row with --val-query-emb.
    #[arg(long, requires = "val_query_emb")]
    pub val_code_emb: Option<PathBuf>,
    #[arg(long, requires = "val_code_emb")]
    pub val_query_emb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: PairInputs,
    /// Code length; 128 and 256 are the studied widths.
    #[arg(long, default_value_t = 128)]
    pub bits: usize,
    #[arg(long, default_value_t = seghash::hashnet::DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.2)]
    pub margin: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegArgs {
    #[arg(long, default_value_t = SegmentConfig::DEFAULT_SEG_LEN)]
    pub seg_len: usize,
    #[arg(long, default_value_t = SegmentConfig::DEFAULT_MAX_RELAXED)]
    pub max_relax: usize,
    #[arg(long, default_value_t = SegmentConfig::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Ablation mode: A/NA (iterative training on/off) by NR/SR/BR (relaxing).
    #[arg(long, default_value = "A_BR", value_parser = parse_mode)]
    pub mode: Ablation,
}

impl SegArgs {
    pub fn config(&self, bits: usize) -> seghash::Result<SegmentConfig> {
        let cfg = SegmentConfig::new(bits, self.seg_len, self.max_relax, self.threshold)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_mode(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: seghash::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NegativesArg {
    /// In-batch negatives from the frozen head.
    Fixed,
    /// In-batch negatives from the head being trained.
    Trainee,
}

impl From<NegativesArg> for NegativeSource {
    fn from(v: NegativesArg) -> Self {
        match v {
            NegativesArg::Fixed => NegativeSource::FixedModality,
            NegativesArg::Trainee => NegativeSource::TraineeModality,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Code,
    Query,
}

impl From<SideArg> for Side {
    fn from(v: SideArg) -> Self {
        match v {
            SideArg::Code => Side::Code,
            SideArg::Query => Side::Query,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimilarityArg {
    Cosine,
    Dot,
}

impl From<SimilarityArg> for Similarity {
    fn from(v: SimilarityArg) -> Self {
        match v {
            SimilarityArg::Cosine => Similarity::Cosine,
            SimilarityArg::Dot => Similarity::Dot,
        }
    }
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub code_head: PathBuf,
    #[arg(long)]
    pub query_head: PathBuf,
    #[command(flatten)]
    pub data: PairInputs,
    #[command(flatten)]
    pub seg: SegArgs,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Epochs per head before the roles swap.
    #[arg(long, default_value_t = 5)]
    pub alt_period: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value_t = NegativesArg::Trainee)]
    pub negatives: NegativesArg,
    /// Head trained in the first period.
    #[arg(long, value_enum, default_value_t = SideArg::Query)]
    pub first: SideArg,
    #[arg(long, default_value_t = 1e-3)]
    pub min_improvement: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub code_head: PathBuf,
    #[arg(long)]
    pub code_emb: PathBuf,
    #[command(flatten)]
    pub seg: SegArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub query_head: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// Code embeddings for dense re-ranking.
    #[arg(long, required_if_eq("rerank", "true"))]
    pub code_emb: Option<PathBuf>,
    /// Re-rank recalled candidates by dense similarity.
    #[arg(long)]
    pub rerank: bool,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Cosine)]
    pub similarity: SimilarityArg,
    /// Run only this query row; all rows otherwise.
    #[arg(long)]
    pub query_id: Option<usize>,
    #[arg(long, default_value_t = seghash::index::DEFAULT_MAX_CANDIDATES)]
    pub top: usize,
    #[command(flatten)]
    pub seg: SegArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub code_head: PathBuf,
    #[arg(long)]
    pub query_head: PathBuf,
    #[arg(long)]
    pub code_emb: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// `query<TAB>code` pairs; identity pairing when absent.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Pretrained code head for the Hamming-scan comparison.
    #[arg(long, requires = "ref_query_head")]
    pub ref_code_head: Option<PathBuf>,
    #[arg(long, requires = "ref_code_head")]
    pub ref_query_head: Option<PathBuf>,
    #[arg(long, default_value_t = seghash::index::DEFAULT_MAX_CANDIDATES)]
    pub top: usize,
    #[arg(long, value_enum, default_value_t = SimilarityArg::Cosine)]
    pub similarity: SimilarityArg,
    /// Also write per-query ranks.
    #[arg(long)]
    pub per_query: bool,
    #[command(flatten)]
    pub seg: SegArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [50_000usize, 100_000, 200_000, 400_000])]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256])]
    pub bits: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub queries: usize,
    #[arg(long, default_value_t = seghash::index::DEFAULT_MAX_CANDIDATES)]
    pub top: usize,
    #[arg(long, default_value_t = 0.3)]
    pub query_noise: f64,
    #[arg(long)]
    pub no_lsh: bool,
    /// Timed passes per method; the median is reported.
    #[arg(long, default_value_t = 9)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
