use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use protoclust::capture::OsiLayer;
use protoclust::features::AlignmentScoring;
use protoclust::hybrid::{FeatureMethod, RunConfig, Strategy};

/// Clusters captured packets of unknown protocols by message format.
///
/// Every tuning flag can also be set through an environment variable named
/// `PROTOCLUST_<FLAG>`, e.g. `PROTOCLUST_SEED=7` or `PROTOCLUST_K_RANGE=2..12`.
#[derive(Debug, Parser)]
#[command(name = "protoclust", version)]
pub struct Cli {
    /// Worker threads for sweeps and benchmarks (default: all cores).
    #[arg(long, global = true, env = "PROTOCLUST_JOBS")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster one capture and write a JSON report.
    Analyze(AnalyzeArgs),
    /// Emit the topic-size or header-length sweep as CSV.
    Sweep(SweepArgs),
    /// Write a synthetic capture and its label sidecar.
    Generate(GenerateArgs),
    /// Run every strategy on every dataset of a manifest.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Capture file (pcap, micro- or nanosecond timestamps).
    pub pcap: PathBuf,

    /// `packet_index,label` sidecar with ground truth.
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// Layer whose messages are clustered.
    #[arg(long, value_parser = parse_layer)]
    pub layer: OsiLayer,

    /// Packet cap; labeled captures are sampled per class, unlabeled ones
    /// truncated. 0 disables the cap.
    #[arg(long, default_value_t = protoclust::capture::DEFAULT_DATASET_CAP, env = "PROTOCLUST_CAP")]
    pub cap: usize,

    /// Dataset name used in outputs (default: the file stem).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub input: InputArgs,

    #[arg(long, default_value = "hybrid", value_parser = parse_strategy)]
    pub strategy: Strategy,

    /// Report path (default: `<pcap>.report.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Exit with status 2 unless ground-truth labels are available.
    #[arg(long)]
    pub require_eval: bool,

    /// Also write the UPGMA merge list as CSV.
    #[arg(long)]
    pub dendrogram_csv: Option<PathBuf>,

    /// Also write the cluster × label confusion matrix as CSV.
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Topics,
    Header,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: SweepKind,

    #[command(flatten)]
    pub input: InputArgs,

    /// CSV path; a `.meta.json` with the effective config is written next to it.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["spec", "preset", "suite"]))]
pub struct GenerateArgs {
    /// JSON synthetic spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,

    /// Built-in spec: link, transport, app_text, app_binary, tcp_types,
    /// sctp_chunks, icmp_types, http_methods, dns_types or planted_header.
    #[arg(long)]
    pub preset: Option<String>,

    /// Write every preset plus a benchmark manifest into this directory.
    #[arg(long)]
    pub suite: Option<PathBuf>,

    /// Output capture (required with --spec/--preset unless printing).
    #[arg(long, required_unless_present_any = ["suite", "print_spec"])]
    pub out: Option<PathBuf>,

    /// Label sidecar (default: `<out>.labels.csv`).
    #[arg(long)]
    pub labels: Option<PathBuf>,

    /// Rescale class supports to this many packets.
    #[arg(long)]
    pub total: Option<usize>,

    #[arg(long, default_value_t = 0, env = "PROTOCLUST_SEED")]
    pub seed: u64,

    /// Print the resolved spec as JSON instead of generating.
    #[arg(long)]
    pub print_spec: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// JSON manifest listing datasets (and optionally strategies).
    pub manifest: PathBuf,

    /// Grid CSV path.
    #[arg(long)]
    pub out: PathBuf,

    /// Comma-separated strategies; overrides the manifest.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,

    #[arg(long, default_value_t = protoclust::capture::DEFAULT_DATASET_CAP, env = "PROTOCLUST_CAP")]
    pub cap: usize,

    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Run configuration overrides; anything unset keeps the library default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    #[arg(long, env = "PROTOCLUST_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "PROTOCLUST_GRAM_BYTES")]
    pub gram_bytes: Option<usize>,
    /// NEMESYS smoothing width.
    #[arg(long, env = "PROTOCLUST_SIGMA")]
    pub sigma: Option<f64>,
    /// Longest NEMESYS field kept, in bytes.
    #[arg(long, env = "PROTOCLUST_MAX_FIELD")]
    pub max_field: Option<usize>,
    #[arg(long, env = "PROTOCLUST_UPGMA_THRESHOLD")]
    pub upgma_threshold: Option<f64>,
    #[arg(long, env = "PROTOCLUST_LDA_ALPHA")]
    pub lda_alpha: Option<f64>,
    #[arg(long, env = "PROTOCLUST_LDA_ETA")]
    pub lda_eta: Option<f64>,
    #[arg(long, env = "PROTOCLUST_LDA_ITERS")]
    pub lda_iters: Option<usize>,
    /// Topic counts to try: `2..12`, `2..20:2` or `3,5,8` (ranges inclusive).
    #[arg(long, env = "PROTOCLUST_K_RANGE", value_parser = parse_range)]
    pub k_range: Option<Grid>,
    /// Header lengths to try, same syntax as --k-range.
    #[arg(long, env = "PROTOCLUST_LEN_RANGE", value_parser = parse_range)]
    pub len_range: Option<Grid>,
    #[arg(long, env = "PROTOCLUST_FREX_OMEGA")]
    pub frex_omega: Option<f64>,
    #[arg(long, env = "PROTOCLUST_COHERENCE_M")]
    pub coherence_m: Option<usize>,
    /// Printable-byte share above which application payloads count as text.
    #[arg(long, env = "PROTOCLUST_TEXT_THRESHOLD")]
    pub text_threshold: Option<f64>,
    /// Fixed header length (skips the header-length sweep).
    #[arg(long, env = "PROTOCLUST_HEADER_LEN")]
    pub header_len: Option<usize>,
    /// Fixed topic count (skips the topic-size sweep).
    #[arg(long, env = "PROTOCLUST_TOPIC_SIZE")]
    pub topic_size: Option<usize>,
    /// Fixed k-means K (skips the elbow search).
    #[arg(long, env = "PROTOCLUST_KMEANS_K")]
    pub kmeans_k: Option<usize>,
    /// Feature extractor on the hybrid's textual path: tf or lda.
    #[arg(long, env = "PROTOCLUST_TEXT_FEATURES", value_parser = parse_features)]
    pub text_features: Option<FeatureMethod>,
    #[arg(long, env = "PROTOCLUST_ALIGN_MATCH")]
    pub align_match: Option<i64>,
    #[arg(long, env = "PROTOCLUST_ALIGN_MISMATCH", allow_hyphen_values = true)]
    pub align_mismatch: Option<i64>,
    #[arg(long, env = "PROTOCLUST_ALIGN_GAP", allow_hyphen_values = true)]
    pub align_gap: Option<i64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> RunConfig {
        let d = RunConfig::default();
        let a = AlignmentScoring::default();
        RunConfig {
            seed: self.seed.unwrap_or(d.seed),
            gram_bytes: self.gram_bytes.unwrap_or(d.gram_bytes),
            sigma: self.sigma.unwrap_or(d.sigma),
            max_field: self.max_field.unwrap_or(d.max_field),
            upgma_threshold: self.upgma_threshold.unwrap_or(d.upgma_threshold),
            lda_alpha: self.lda_alpha.or(d.lda_alpha),
            lda_eta: self.lda_eta.unwrap_or(d.lda_eta),
            lda_iters: self.lda_iters.unwrap_or(d.lda_iters),
            k_range: self.k_range.clone().map_or(d.k_range, |g| g.0),
            len_range: self.len_range.clone().map_or(d.len_range, |g| g.0),
            frex_omega: self.frex_omega.unwrap_or(d.frex_omega),
            coherence_m: self.coherence_m.unwrap_or(d.coherence_m),
            text_threshold: self.text_threshold.unwrap_or(d.text_threshold),
            header_len: self.header_len.or(d.header_len),
            topic_size: self.topic_size.or(d.topic_size),
            kmeans_k: self.kmeans_k.or(d.kmeans_k),
            text_features: self.text_features.unwrap_or(d.text_features),
            alignment: AlignmentScoring {
                match_score: self.align_match.unwrap_or(a.match_score),
                mismatch: self.align_mismatch.unwrap_or(a.mismatch),
                gap: self.align_gap.unwrap_or(a.gap),
            },
        }
    }
}

fn parse_layer(s: &str) -> Result<OsiLayer, String> {
    s.parse().map_err(|e: protoclust::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: protoclust::Error| e.to_string())
}

fn parse_features(s: &str) -> Result<FeatureMethod, String> {
    s.parse().map_err(|e: protoclust::Error| e.to_string())
}

/// Parsed `--k-range` / `--len-range` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid(pub Vec<usize>);

fn parse_range(s: &str) -> Result<Grid, String> {
    parse_values(s).map(Grid)
}

/// `a..b` (inclusive), `a..b:step`, or a comma list.
pub fn parse_values(s: &str) -> Result<Vec<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a non-negative integer"));
    let out: Vec<usize> = if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1),
        };
        let lo = num(lo)?;
        if step == 0 {
            return Err("range step must be positive".into());
        }
        if lo > hi {
            return Err(format!("range {lo}..{hi} is empty"));
        }
        (lo..=hi).step_by(step).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if out.is_empty() {
        return Err("range is empty".into());
    }
    Ok(out)
}
