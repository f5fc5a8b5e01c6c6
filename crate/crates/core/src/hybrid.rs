//! End-to-end pipeline: strip → header length → tokenize → features →
//! topic size → cluster → metrics, for the four baseline strategies and the
//! auto-selecting hybrid.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{detect_text_protocol, extract_header, strip_lower_layers, Dataset, OsiLayer, PayloadClass};
use crate::cluster::{
    cosine_dissimilarity, kmeans, select_k_kmeans, upgma, ClusterAssignment, ClusterMethod, Dendrogram,
    DEFAULT_KMEANS_MAX_ITERS, DEFAULT_UPGMA_THRESHOLD,
};
use crate::error::{Error, Result, Stage};
use crate::features::{
    alignment_distance, build_tf_matrix, doc_topic_features, fit_lda, nwsa_matrix, AlignmentScoring, FeatureMatrix,
    LdaConfig,
};
use crate::metrics::{evaluate, EvaluationScores};
use crate::optimize::{
    job_seed, select_header_length, select_topic_size, sub_seed, HeaderLengthScore, TopicScoring, TopicSizeScore,
    DEFAULT_OMEGA, DEFAULT_TOP_M,
};
use crate::tokenize::{
    tokenize_headers, TokenCorpus, TokenMethod, TokenizerConfig, DEFAULT_GRAM_BYTES, DEFAULT_MAX_FIELD, DEFAULT_SIGMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    Ngram3,
    Nemesys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMethod {
    Tf,
    Lda,
    Nwsa,
}

impl FromStr for FeatureMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tf" => Ok(FeatureMethod::Tf),
            "lda" => Ok(FeatureMethod::Lda),
            "nwsa" => Ok(FeatureMethod::Nwsa),
            other => Err(Error::invalid(format!("unknown feature method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyName {
    #[serde(rename = "NETZOB-like")]
    NetzobLike,
    #[serde(rename = "LDA+KMEANS")]
    LdaKmeans,
    #[serde(rename = "LDA+UPGMA")]
    LdaUpgma,
    #[serde(rename = "TF+UPGMA")]
    TfUpgma,
    #[serde(rename = "HYBRID")]
    Hybrid,
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyName::NetzobLike => "NETZOB-like",
            StrategyName::LdaKmeans => "LDA+KMEANS",
            StrategyName::LdaUpgma => "LDA+UPGMA",
            StrategyName::TfUpgma => "TF+UPGMA",
            StrategyName::Hybrid => "HYBRID",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub name: StrategyName,
    pub tokenizer: Tokenizer,
    pub features: FeatureMethod,
    pub clusterer: ClusterMethod,
}

impl Strategy {
    pub const NETZOB_LIKE: Strategy = Strategy {
        name: StrategyName::NetzobLike,
        tokenizer: Tokenizer::Ngram3,
        features: FeatureMethod::Nwsa,
        clusterer: ClusterMethod::Upgma,
    };
    pub const LDA_KMEANS: Strategy = Strategy {
        name: StrategyName::LdaKmeans,
        tokenizer: Tokenizer::Ngram3,
        features: FeatureMethod::Lda,
        clusterer: ClusterMethod::Kmeans,
    };
    pub const LDA_UPGMA: Strategy = Strategy {
        name: StrategyName::LdaUpgma,
        tokenizer: Tokenizer::Ngram3,
        features: FeatureMethod::Lda,
        clusterer: ClusterMethod::Upgma,
    };
    pub const TF_UPGMA: Strategy = Strategy {
        name: StrategyName::TfUpgma,
        tokenizer: Tokenizer::Ngram3,
        features: FeatureMethod::Tf,
        clusterer: ClusterMethod::Upgma,
    };
    /// Unresolved hybrid; the concrete triple comes from [`method_for`].
    pub const HYBRID: Strategy = Strategy {
        name: StrategyName::Hybrid,
        tokenizer: Tokenizer::Ngram3,
        features: FeatureMethod::Tf,
        clusterer: ClusterMethod::Upgma,
    };

    pub const ALL: [Strategy; 5] = [
        Strategy::NETZOB_LIKE,
        Strategy::LDA_KMEANS,
        Strategy::LDA_UPGMA,
        Strategy::TF_UPGMA,
        Strategy::HYBRID,
    ];

    pub fn validate(&self) -> Result<()> {
        if self.features == FeatureMethod::Nwsa && self.clusterer == ClusterMethod::Kmeans {
            return Err(Error::invalid("alignment similarities cannot be clustered with k-means"));
        }
        let netzob_shape = self.features == FeatureMethod::Nwsa && self.clusterer == ClusterMethod::Upgma;
        if (self.name == StrategyName::NetzobLike) != netzob_shape && self.name != StrategyName::Hybrid {
            return Err(Error::invalid("NETZOB-like is exactly alignment features with UPGMA"));
        }
        Ok(())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "netzoblike" | "netzob" | "nwsa" => Ok(Strategy::NETZOB_LIKE),
            "ldakmeans" => Ok(Strategy::LDA_KMEANS),
            "ldaupgma" => Ok(Strategy::LDA_UPGMA),
            "tfupgma" => Ok(Strategy::TF_UPGMA),
            "hybrid" => Ok(Strategy::HYBRID),
            _ => Err(Error::invalid(format!("unknown strategy '{s}'"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.name.fmt(f)
    }
}

/// Every tunable of a run. Defaults follow the published settings where
/// they exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub gram_bytes: usize,
    pub sigma: f64,
    pub max_field: usize,
    pub upgma_threshold: f64,
    /// `None` means `1 / K`.
    pub lda_alpha: Option<f64>,
    pub lda_eta: f64,
    pub lda_iters: usize,
    pub k_range: Vec<usize>,
    pub len_range: Vec<usize>,
    pub frex_omega: f64,
    pub coherence_m: usize,
    pub text_threshold: f64,
    /// Fixed header length; skips the header-length sweep.
    pub header_len: Option<usize>,
    /// Fixed LDA topic count; skips the topic-size sweep.
    pub topic_size: Option<usize>,
    /// Fixed k-means K; skips the elbow search.
    pub kmeans_k: Option<usize>,
    /// Feature extractor used on the hybrid's textual path.
    pub text_features: FeatureMethod,
    pub alignment: AlignmentScoring,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            gram_bytes: DEFAULT_GRAM_BYTES,
            sigma: DEFAULT_SIGMA,
            max_field: DEFAULT_MAX_FIELD,
            upgma_threshold: DEFAULT_UPGMA_THRESHOLD,
            lda_alpha: LdaConfig::default().alpha,
            lda_eta: LdaConfig::default().eta,
            lda_iters: LdaConfig::default().iters,
            k_range: (2..=20).collect(),
            len_range: (4..=64).step_by(2).collect(),
            frex_omega: DEFAULT_OMEGA,
            coherence_m: DEFAULT_TOP_M,
            text_threshold: crate::capture::DEFAULT_TEXT_THRESHOLD,
            header_len: None,
            topic_size: None,
            kmeans_k: None,
            text_features: FeatureMethod::Tf,
            alignment: AlignmentScoring::default(),
        }
    }
}

impl RunConfig {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            gram_bytes: self.gram_bytes,
            sigma: self.sigma,
            max_field: self.max_field,
        }
    }

    pub fn topic_scoring(&self) -> TopicScoring {
        TopicScoring {
            lda: LdaConfig {
                alpha: self.lda_alpha,
                eta: self.lda_eta,
                iters: self.lda_iters,
            },
            omega: self.frex_omega,
            top_m: self.coherence_m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gram_bytes == 0 {
            return Err(Error::invalid("gram_bytes must be positive"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        if self.max_field == 0 {
            return Err(Error::invalid("max_field must be positive"));
        }
        if !(0.0..=1.0).contains(&self.upgma_threshold) {
            return Err(Error::invalid("upgma_threshold must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.frex_omega) {
            return Err(Error::invalid("frex_omega must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.text_threshold) {
            return Err(Error::invalid("text_threshold must lie in [0, 1]"));
        }
        if self.header_len == Some(0) {
            return Err(Error::invalid("header_len must be positive"));
        }
        if self.text_features == FeatureMethod::Nwsa {
            return Err(Error::invalid("text_features must be tf or lda"));
        }
        self.alignment.validate()
    }
}

/// The hybrid's choice for a dataset: TF+UPGMA over 3-grams by default, LDA
/// for binary application payloads, NEMESYS fields for textual ones.
pub fn method_for(d: &Dataset, cfg: &RunConfig) -> Strategy {
    let (tokenizer, features) = match d.osi_target {
        OsiLayer::Link | OsiLayer::Transport => (Tokenizer::Ngram3, FeatureMethod::Tf),
        OsiLayer::Application => match detect_text_protocol(d, cfg.text_threshold) {
            PayloadClass::Binary => (Tokenizer::Ngram3, FeatureMethod::Lda),
            PayloadClass::Textual => (Tokenizer::Nemesys, cfg.text_features),
        },
    };
    Strategy {
        name: StrategyName::Hybrid,
        tokenizer,
        features,
        clusterer: ClusterMethod::Upgma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSource {
    Config,
    /// Chosen by the header-length sweep.
    HeaderSweep,
    /// Chosen by the topic-size sweep.
    TopicSweep,
    /// Chosen at the k-means WSS elbow.
    Elbow,
    /// Application layer: the whole payload is the header.
    FullPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chosen {
    pub value: usize,
    pub source: ParamSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub packets_in: usize,
    pub packets_clustered: usize,
    /// Packets dropped because stripping failed or left no bytes.
    pub excluded: Vec<usize>,
    pub vocab_size: Option<usize>,
    pub alignments: Option<usize>,
    pub payload_class: Option<PayloadClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweeps {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header: Option<Vec<HeaderLengthScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topics: Option<Vec<TopicSizeScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmeans_wss: Option<Vec<f64>>,
}

/// Result of one run. Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: String,
    pub osi_target: OsiLayer,
    pub strategy: Strategy,
    pub seed: u64,
    pub header_len: Chosen,
    pub topic_size: Option<Chosen>,
    pub kmeans_k: Option<Chosen>,
    /// Cluster ids aligned with `packet_indices`.
    pub assignment: ClusterAssignment,
    pub packet_indices: Vec<usize>,
    pub dendrogram: Option<Dendrogram>,
    pub scores: Option<EvaluationScores>,
    pub stats: RunStats,
    pub sweeps: Sweeps,
    pub config: RunConfig,
    pub seconds: f64,
}

impl AnalysisReport {
    /// Stable JSON (struct-field key order).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with the wall-clock field zeroed, for determinism checks.
    pub fn to_json_without_clock(&self) -> Result<String> {
        let mut r = self.clone();
        r.seconds = 0.0;
        r.to_json()
    }
}

fn stage<T>(r: Result<T>, s: Stage, packets: &[usize]) -> Result<T> {
    r.map_err(|e| e.at(s, packets.to_vec()))
}

fn kmeans_candidates(cfg: &RunConfig, p: usize) -> Vec<usize> {
    let hi = cfg.k_range.iter().copied().max().unwrap_or(20).max(3);
    (1..=hi.min(p)).collect()
}

/// Runs `strategy` on `d`. Truth labels come from the dataset when every
/// packet carries one.
pub fn run_pipeline(d: &Dataset, strategy: Strategy, cfg: &RunConfig) -> Result<AnalysisReport> {
    let start = Instant::now();
    cfg.validate().map_err(|e| e.at(Stage::Pipeline, vec![]))?;
    strategy.validate().map_err(|e| e.at(Stage::Pipeline, vec![]))?;
    if d.is_empty() {
        return Err(Error::invalid("dataset has no packets").at(Stage::Capture, vec![]));
    }

    let mut payload_class = None;
    let s = if strategy.name == StrategyName::Hybrid {
        let s = method_for(d, cfg);
        if d.osi_target == OsiLayer::Application {
            payload_class = Some(detect_text_protocol(d, cfg.text_threshold));
        }
        info!("hybrid resolved to {:?}/{:?}/{:?}", s.tokenizer, s.features, s.clusterer);
        s
    } else {
        strategy
    };

    let Stripped {
        kept,
        payloads,
        excluded,
    } = strip_all(d)?;

    // header length
    let scoring = cfg.topic_scoring();
    let mut sweeps = Sweeps {
        header: None,
        topics: None,
        kmeans_wss: None,
    };
    let mut sweep_k = None;
    let header_len = if d.osi_target == OsiLayer::Application {
        if cfg.header_len.is_some() {
            warn!("header_len ignored: application-layer analysis uses the full payload");
        }
        Chosen {
            value: 0,
            source: ParamSource::FullPayload,
        }
    } else if let Some(l) = cfg.header_len {
        Chosen {
            value: l,
            source: ParamSource::Config,
        }
    } else {
        let hs = stage(
            select_header_length(
                &payloads,
                d.osi_target,
                &cfg.len_range,
                &cfg.k_range,
                &scoring,
                cfg.gram_bytes,
                cfg.seed,
            ),
            Stage::Optimize,
            &kept,
        )?;
        info!("header length {} (K {})", hs.best_len, hs.best_k);
        sweep_k = Some(hs.best_k);
        sweeps.header = Some(hs.rows);
        Chosen {
            value: hs.best_len,
            source: ParamSource::HeaderSweep,
        }
    };

    let headers = kept
        .iter()
        .zip(&payloads)
        .map(|(&i, p)| {
            let len = if header_len.value == 0 { p.len() } else { header_len.value };
            extract_header(p, len, d.osi_target, i).map_err(|e| e.at(Stage::Extract, vec![i]))
        })
        .collect::<Result<Vec<_>>>()?;

    // features
    let mut stats = RunStats {
        packets_in: d.len(),
        packets_clustered: kept.len(),
        excluded,
        vocab_size: None,
        alignments: None,
        payload_class,
    };
    let mut topic_size = None;
    let (features, distances): (Option<FeatureMatrix>, Vec<f64>) = match s.features {
        FeatureMethod::Nwsa => {
            let seqs: Vec<Vec<u8>> = headers.iter().map(|h| h.bytes.clone()).collect();
            let out = stage(nwsa_matrix(&seqs, &cfg.alignment), Stage::Features, &kept)?;
            stats.alignments = Some(out.alignments);
            let dist = alignment_distance(&out.similarity);
            (None, dist)
        }
        FeatureMethod::Tf | FeatureMethod::Lda => {
            let method = match s.tokenizer {
                Tokenizer::Ngram3 => TokenMethod::Ngram,
                Tokenizer::Nemesys => TokenMethod::Field,
            };
            let corpus = stage(tokenize_headers(&headers, method, &cfg.tokenizer()), Stage::Tokenize, &kept)?;
            stats.vocab_size = Some(corpus.vocab.len());
            let f = if s.features == FeatureMethod::Tf {
                stage(build_tf_matrix(&corpus), Stage::Features, &kept)?
            } else {
                let (k, src) = choose_topic_size(&corpus, cfg, &scoring, header_len.value, sweep_k, &kept, &mut sweeps)?;
                topic_size = Some(Chosen { value: k, source: src });
                let lda = &scoring.lda;
                let m = stage(
                    fit_lda(&corpus, k, lda.alpha_for(k), lda.eta, lda.iters, job_seed(cfg.seed, header_len.value, k)),
                    Stage::Features,
                    &kept,
                )?;
                doc_topic_features(&m)
            };
            let dist = if s.clusterer == ClusterMethod::Upgma {
                cosine_dissimilarity(&f)
            } else {
                Vec::new()
            };
            (Some(f), dist)
        }
    };

    // cluster
    let p = kept.len();
    let mut kmeans_k = None;
    let (assignment, dendrogram) = match s.clusterer {
        ClusterMethod::Upgma => {
            let (a, dg) = stage(upgma(&distances, p, cfg.upgma_threshold), Stage::Cluster, &kept)?;
            (a, Some(dg))
        }
        ClusterMethod::Kmeans => {
            let f = features.as_ref().expect("k-means needs a feature matrix");
            let seed = sub_seed(cfg.seed, "kmeans");
            let k = match cfg.kmeans_k {
                Some(k) => {
                    kmeans_k = Some(Chosen { value: k, source: ParamSource::Config });
                    k
                }
                None => {
                    let (k, wss) = stage(select_k_kmeans(f, &kmeans_candidates(cfg, p), seed), Stage::Cluster, &kept)?;
                    sweeps.kmeans_wss = Some(wss);
                    kmeans_k = Some(Chosen { value: k, source: ParamSource::Elbow });
                    k
                }
            };
            let r = stage(kmeans(f, k, seed, DEFAULT_KMEANS_MAX_ITERS), Stage::Cluster, &kept)?;
            (r.assignment, None)
        }
    };

    // metrics
    let scores = match d.truth() {
        Some((truth, _)) => {
            let t: Vec<usize> = kept.iter().map(|&i| truth[i]).collect();
            Some(stage(evaluate(&assignment.labels, &t), Stage::Metrics, &kept)?)
        }
        None => None,
    };

    Ok(AnalysisReport {
        dataset: d.name.clone(),
        osi_target: d.osi_target,
        strategy: s,
        seed: cfg.seed,
        header_len,
        topic_size,
        kmeans_k,
        assignment,
        packet_indices: kept,
        dendrogram,
        scores,
        stats,
        sweeps,
        config: cfg.clone(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn choose_topic_size(
    corpus: &TokenCorpus,
    cfg: &RunConfig,
    scoring: &TopicScoring,
    header_len: usize,
    sweep_k: Option<usize>,
    kept: &[usize],
    sweeps: &mut Sweeps,
) -> Result<(usize, ParamSource)> {
    if let Some(k) = cfg.topic_size {
        return Ok((k, ParamSource::Config));
    }
    if let Some(k) = sweep_k {
        return Ok((k, ParamSource::HeaderSweep));
    }
    let ts = stage(
        select_topic_size(corpus, &cfg.k_range, scoring, cfg.seed, header_len),
        Stage::Optimize,
        kept,
    )?;
    sweeps.topics = Some(ts.scores);
    Ok((ts.best_k, ParamSource::TopicSweep))
}

/// Packets that survive stripping, with their payloads.
struct Stripped {
    kept: Vec<usize>,
    payloads: Vec<Vec<u8>>,
    excluded: Vec<usize>,
}

fn strip_all(d: &Dataset) -> Result<Stripped> {
    let mut out = Stripped {
        kept: Vec::new(),
        payloads: Vec::new(),
        excluded: Vec::new(),
    };
    for (i, p) in d.packets.iter().enumerate() {
        match strip_lower_layers(p, d.osi_target) {
            Ok(b) if !b.is_empty() => {
                out.kept.push(i);
                out.payloads.push(b);
            }
            Ok(_) => {
                warn!("packet {i}: nothing left above the {} layer; excluded", d.osi_target);
                out.excluded.push(i);
            }
            Err(e) => {
                warn!("packet {i}: {e}; excluded");
                out.excluded.push(i);
            }
        }
    }
    if out.kept.len() < 2 {
        return Err(Error::invalid(format!("only {} packet(s) survived stripping", out.kept.len()))
            .at(Stage::Strip, out.excluded));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSweepRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_exclusivity: f64,
    pub mean_coherence: f64,
    pub norm_excl: f64,
    pub norm_coh: f64,
    pub origin_distance: f64,
    /// LDA+UPGMA ARI at this K, when the dataset is labeled.
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSweepTable {
    pub header_len: Chosen,
    pub best_k: usize,
    pub rows: Vec<TopicSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderSweepRow {
    pub length: usize,
    pub best_k: usize,
    pub isolation: f64,
    /// LDA+UPGMA ARI at this length and its best K, when labeled.
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderSweepTable {
    pub best_len: usize,
    pub best_k: usize,
    pub rows: Vec<HeaderSweepRow>,
}

fn write_rows<W: std::io::Write, R: Serialize>(rows: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl TopicSweepTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

impl HeaderSweepTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(&self.rows, out)
    }
}

fn lda_ari(d: &Dataset, cfg: &RunConfig, header_len: Option<usize>, k: usize) -> Result<Option<f64>> {
    let c = RunConfig {
        header_len,
        topic_size: Some(k),
        ..cfg.clone()
    };
    Ok(run_pipeline(d, Strategy::LDA_UPGMA, &c)?.scores.map(|s| s.ari))
}

/// Topic-size sweep over `cfg.k_range` on 3-gram tokens. Link and transport
/// data need a fixed `cfg.header_len`; application data use the full
/// payload. Labeled datasets get an ARI per K.
pub fn sweep_topics(d: &Dataset, cfg: &RunConfig) -> Result<TopicSweepTable> {
    cfg.validate()?;
    let st = strip_all(d)?;
    let header_len = match (d.osi_target, cfg.header_len) {
        (OsiLayer::Application, _) => Chosen {
            value: 0,
            source: ParamSource::FullPayload,
        },
        (_, Some(l)) => Chosen {
            value: l,
            source: ParamSource::Config,
        },
        (layer, None) => {
            return Err(Error::invalid(format!(
                "a topic sweep on {layer}-layer data needs a fixed header length"
            )))
        }
    };
    let headers = st
        .kept
        .iter()
        .zip(&st.payloads)
        .map(|(&i, p)| {
            let len = if header_len.value == 0 { p.len() } else { header_len.value };
            extract_header(p, len, d.osi_target, i)
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = tokenize_headers(&headers, TokenMethod::Ngram, &cfg.tokenizer())?;
    let sweep = stage(
        select_topic_size(&corpus, &cfg.k_range, &cfg.topic_scoring(), cfg.seed, header_len.value),
        Stage::Optimize,
        &st.kept,
    )?;
    let fixed_len = (header_len.value > 0).then_some(header_len.value);
    let rows = sweep
        .scores
        .iter()
        .map(|s| {
            let ari = if d.is_labeled() { lda_ari(d, cfg, fixed_len, s.k)? } else { None };
            Ok(TopicSweepRow {
                k: s.k,
                mean_exclusivity: s.mean_exclusivity,
                mean_coherence: s.mean_coherence,
                norm_excl: s.norm_excl,
                norm_coh: s.norm_coh,
                origin_distance: s.origin_distance,
                ari,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TopicSweepTable {
        header_len,
        best_k: sweep.best_k,
        rows,
    })
}

/// Header-length sweep over `cfg.len_range` × `cfg.k_range`. Labeled
/// datasets get the LDA+UPGMA ARI at each length's best K.
pub fn sweep_header(d: &Dataset, cfg: &RunConfig) -> Result<HeaderSweepTable> {
    cfg.validate()?;
    let st = strip_all(d)?;
    let hs = stage(
        select_header_length(
            &st.payloads,
            d.osi_target,
            &cfg.len_range,
            &cfg.k_range,
            &cfg.topic_scoring(),
            cfg.gram_bytes,
            cfg.seed,
        ),
        Stage::Optimize,
        &st.kept,
    )?;
    let rows = hs
        .rows
        .iter()
        .map(|r| {
            let ari = if d.is_labeled() { lda_ari(d, cfg, Some(r.length), r.best_k)? } else { None };
            Ok(HeaderSweepRow {
                length: r.length,
                best_k: r.best_k,
                isolation: r.isolation,
                ari,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeaderSweepTable {
        best_len: hs.best_len,
        best_k: hs.best_k,
        rows,
    })
}

/// One (dataset, strategy) cell; `None` fields mark a failed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub dataset: String,
    pub strategy: StrategyName,
    pub ari: Option<f64>,
    pub fms: Option<f64>,
    pub ami: Option<f64>,
    pub voting_accuracy: Option<f64>,
    pub k: Option<usize>,
    pub header_len: Option<usize>,
    pub topic_size: Option<usize>,
    pub seconds: Option<f64>,
    #[serde(skip)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkGrid {
    /// Dataset-major, strategies in the order given.
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkCell {
    fn from_report(r: &AnalysisReport, name: StrategyName) -> Self {
        let s = r.scores.as_ref();
        BenchmarkCell {
            dataset: r.dataset.clone(),
            strategy: name,
            ari: s.map(|s| s.ari),
            fms: s.map(|s| s.fms),
            ami: s.map(|s| s.ami),
            voting_accuracy: s.map(|s| s.voting_accuracy),
            k: Some(r.assignment.k),
            header_len: Some(r.header_len.value),
            topic_size: r.topic_size.map(|c| c.value),
            seconds: Some(r.seconds),
            error: None,
        }
    }

    fn failed(dataset: &str, name: StrategyName, e: &Error) -> Self {
        BenchmarkCell {
            dataset: dataset.to_string(),
            strategy: name,
            ari: None,
            fms: None,
            ami: None,
            voting_accuracy: None,
            k: None,
            header_len: None,
            topic_size: None,
            seconds: None,
            error: Some(e.to_string()),
        }
    }
}

/// Runs every (dataset, strategy) pair. A failing cell is recorded with
/// empty scores and the run continues.
pub fn run_benchmark(datasets: &[Dataset], strategies: &[Strategy], cfg: &RunConfig) -> Result<BenchmarkGrid> {
    if datasets.is_empty() || strategies.is_empty() {
        return Err(Error::invalid("benchmark needs at least one dataset and one strategy"));
    }
    if let Some(d) = datasets.iter().find(|d| !d.is_labeled()) {
        return Err(Error::invalid(format!("dataset '{}' is not fully labeled", d.name)));
    }
    let jobs: Vec<(&Dataset, Strategy)> = datasets
        .iter()
        .flat_map(|d| strategies.iter().map(move |&s| (d, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(d, s)| match run_pipeline(d, s, cfg) {
            Ok(r) => BenchmarkCell::from_report(&r, s.name),
            Err(e) => {
                warn!("benchmark cell {}/{} failed: {e}", d.name, s.name);
                BenchmarkCell::failed(&d.name, s.name, &e)
            }
        })
        .collect();
    Ok(BenchmarkGrid { cells })
}

/// Best strategy per dataset by ARI; ties go to the earlier strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Winner {
    pub dataset: String,
    pub strategy: Option<StrategyName>,
    pub ari: Option<f64>,
}

impl BenchmarkGrid {
    pub const CSV_HEADER: [&'static str; 10] = [
        "dataset",
        "strategy",
        "ari",
        "fms",
        "ami",
        "voting_accuracy",
        "k",
        "header_len",
        "topic_size",
        "seconds",
    ];

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for c in &self.cells {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn winners(&self) -> Vec<Winner> {
        let mut out: Vec<Winner> = Vec::new();
        for c in &self.cells {
            let slot = match out.iter().position(|w| w.dataset == c.dataset) {
                Some(i) => i,
                None => {
                    out.push(Winner {
                        dataset: c.dataset.clone(),
                        strategy: None,
                        ari: None,
                    });
                    out.len() - 1
                }
            };
            let w = &mut out[slot];
            if let Some(a) = c.ari {
                if w.ari.is_none_or(|best| a > best) {
                    w.ari = Some(a);
                    w.strategy = Some(c.strategy);
                }
            }
        }
        out
    }

    /// Datasets where HYBRID reaches the best ARI (ties count as wins).
    pub fn hybrid_wins(&self) -> usize {
        self.winners()
            .iter()
            .filter(|w| {
                w.ari.is_some_and(|best| {
                    self.cells.iter().any(|c| {
                        c.dataset == w.dataset && c.strategy == StrategyName::Hybrid && c.ari == Some(best)
                    })
                })
            })
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{build, LinkType, RawPacket};

    fn udp_app(payloads: &[(&[u8], &str)]) -> Dataset {
        let packets = payloads
            .iter()
            .map(|(p, l)| {
                RawPacket::new(build::eth_ipv4(17, &build::udp(1000, 2000, p)), LinkType::Ethernet).with_label(*l)
            })
            .collect();
        Dataset::new("t", OsiLayer::Application, packets)
    }

    #[test]
    fn method_for_routes_by_layer_and_payload() {
        let cfg = RunConfig::default();
        let text = udp_app(&[(b"GET / HTTP/1.1", "a"), (b"USER bob", "b"), (b"PASS x", "b")]);
        let s = method_for(&text, &cfg);
        assert_eq!((s.tokenizer, s.features), (Tokenizer::Nemesys, FeatureMethod::Tf));
        let bin = udp_app(&[(&[0, 1, 2, 200], "a"), (&[9, 0, 0, 255], "b"), (&[1, 1, 1, 1], "b")]);
        let s = method_for(&bin, &cfg);
        assert_eq!((s.tokenizer, s.features), (Tokenizer::Ngram3, FeatureMethod::Lda));
        let mut t = bin.clone();
        t.osi_target = OsiLayer::Transport;
        assert_eq!(method_for(&t, &cfg).features, FeatureMethod::Tf);
        assert_eq!(method_for(&text, &RunConfig { text_features: FeatureMethod::Lda, ..cfg }).features, FeatureMethod::Lda);
    }

    #[test]
    fn strategy_invariants() {
        for s in Strategy::ALL {
            s.validate().unwrap();
        }
        let bad = Strategy {
            clusterer: ClusterMethod::Kmeans,
            ..Strategy::NETZOB_LIKE
        };
        assert!(bad.validate().is_err());
        let mislabeled = Strategy {
            name: StrategyName::NetzobLike,
            ..Strategy::TF_UPGMA
        };
        assert!(mislabeled.validate().is_err());
        assert_eq!("tf+upgma".parse::<Strategy>().unwrap(), Strategy::TF_UPGMA);
        assert_eq!("NETZOB-like".parse::<Strategy>().unwrap(), Strategy::NETZOB_LIKE);
        assert!("svm".parse::<Strategy>().is_err());
    }

    #[test]
    fn strategy_names_serialize_verbatim() {
        let j = serde_json::to_string(&StrategyName::LdaKmeans).unwrap();
        assert_eq!(j, "\"LDA+KMEANS\"");
        assert_eq!(StrategyName::NetzobLike.to_string(), "NETZOB-like");
    }

    #[test]
    fn strip_failures_are_excluded_not_fatal() {
        let mut d = udp_app(&[(b"aaaa", "x"), (b"aaab", "x"), (b"zzzz", "y")]);
        d.packets.push(RawPacket::new(vec![0u8; 10], LinkType::Ethernet).with_label("y"));
        let cfg = RunConfig {
            header_len: Some(4),
            ..RunConfig::default()
        };
        let r = run_pipeline(&d, Strategy::TF_UPGMA, &cfg).unwrap();
        assert_eq!(r.stats.excluded, vec![3]);
        assert_eq!(r.packet_indices, vec![0, 1, 2]);
        assert_eq!(r.assignment.labels.len(), 3);
    }

    #[test]
    fn errors_name_the_stage() {
        let d = udp_app(&[(b"a", "x")]);
        let e = run_pipeline(&d, Strategy::TF_UPGMA, &RunConfig::default()).unwrap_err();
        assert!(matches!(e, Error::AtStage { stage: Stage::Strip, .. }), "{e}");
    }

    #[test]
    fn winners_take_argmax_with_nulls() {
        let cell = |d: &str, s, a: Option<f64>| BenchmarkCell {
            dataset: d.into(),
            strategy: s,
            ari: a,
            fms: None,
            ami: None,
            voting_accuracy: None,
            k: None,
            header_len: None,
            topic_size: None,
            seconds: None,
            error: None,
        };
        let g = BenchmarkGrid {
            cells: vec![
                cell("a", StrategyName::TfUpgma, Some(0.5)),
                cell("a", StrategyName::Hybrid, Some(0.7)),
                cell("b", StrategyName::TfUpgma, Some(0.9)),
                cell("b", StrategyName::Hybrid, None),
                cell("c", StrategyName::TfUpgma, Some(0.3)),
                cell("c", StrategyName::Hybrid, Some(0.3)),
            ],
        };
        let w = g.winners();
        assert_eq!(w[0].strategy, Some(StrategyName::Hybrid));
        assert_eq!(w[1].strategy, Some(StrategyName::TfUpgma));
        assert_eq!(w[2].strategy, Some(StrategyName::TfUpgma));
        assert_eq!(g.hybrid_wins(), 2);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dataset,strategy,ari,fms,ami,voting_accuracy,k,header_len,topic_size,seconds\n"));
        assert!(text.contains("b,HYBRID,,,,,,,,\n"), "{text}");
    }
}
