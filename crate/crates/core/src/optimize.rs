//! Hyperparameter selection: LDA topic size from mean exclusivity (FREX) and
//! mean semantic coherence, header length from how isolated the best topic
//! size is, and K-means K from the Kneedle elbow.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{extract_header, OsiLayer};
use crate::error::{Error, Result};
use crate::features::{fit_lda, LdaConfig, LdaModel};
use crate::tokenize::{ngram_tokenize, TokenCorpus, TokenMethod};

pub const DEFAULT_OMEGA: f64 = 0.7;
pub const DEFAULT_TOP_M: usize = 10;
const SCORE_EPS: f64 = 1e-12;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the Gibbs chain of sweep point (header length, topic count).
/// Header length 0 stands for "whole payload".
pub fn job_seed(base: u64, header_len: usize, k: usize) -> u64 {
    mix(mix(mix(base) ^ header_len as u64) ^ (k as u64).rotate_left(32))
}

/// Named sub-seed derived from the run seed.
pub fn sub_seed(base: u64, name: &str) -> u64 {
    name.bytes().fold(mix(base), |acc, b| mix(acc ^ b as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicScoring {
    pub lda: LdaConfig,
    pub omega: f64,
    pub top_m: usize,
}

impl Default for TopicScoring {
    fn default() -> Self {
        TopicScoring {
            lda: LdaConfig::default(),
            omega: DEFAULT_OMEGA,
            top_m: DEFAULT_TOP_M,
        }
    }
}

/// ECDF of each entry of `values` using average ranks for ties.
fn ecdf(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank ((i+1)+(j+1))/2
        let rank = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            out[o] = rank / n as f64;
        }
        i = j + 1;
    }
    out
}

/// FREX scores of every token in topic `k`.
fn frex_row(phi: &[f64], k: usize, topics: usize, v: usize, omega: f64) -> Vec<f64> {
    let row = &phi[k * v..(k + 1) * v];
    let excl: Vec<f64> = (0..v)
        .map(|w| {
            let col: f64 = (0..topics).map(|j| phi[j * v + w]).sum();
            row[w] / col
        })
        .collect();
    let e_excl = ecdf(&excl);
    let e_freq = ecdf(row);
    e_excl
        .iter()
        .zip(&e_freq)
        .map(|(e, f)| 1.0 / (omega / e + (1.0 - omega) / f))
        .collect()
}

/// Weighted harmonic mean of the exclusivity and frequency ECDF ranks of
/// token `v` in topic `k`.
pub fn frex(m: &LdaModel, k: usize, v: usize, omega: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid("omega must lie in [0, 1]"));
    }
    if k >= m.k || v >= m.vocab_size {
        return Err(Error::invalid("topic or token index out of range"));
    }
    Ok(frex_row(&m.topic_word(), k, m.k, m.vocab_size, omega)[v])
}

/// Indices of the `m` highest-weight tokens of a β row, ties by vocab order.
fn top_tokens(row: &[f64], m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(m);
    idx
}

/// Document membership bitsets per token for co-occurrence counting.
pub struct CooccurrenceIndex {
    words: usize,
    sets: Vec<Vec<u64>>,
}

impl CooccurrenceIndex {
    pub fn new(c: &TokenCorpus) -> Self {
        let words = c.docs.len().div_ceil(64).max(1);
        let mut sets = vec![vec![0u64; words]; c.vocab.len()];
        for (d, doc) in c.doc_ids().iter().enumerate() {
            for &t in doc {
                sets[t][d / 64] |= 1 << (d % 64);
            }
        }
        CooccurrenceIndex { words, sets }
    }

    pub fn docs_with(&self, v: usize) -> u32 {
        self.sets[v].iter().map(|w| w.count_ones()).sum()
    }

    pub fn docs_with_both(&self, a: usize, b: usize) -> u32 {
        (0..self.words)
            .map(|i| (self.sets[a][i] & self.sets[b][i]).count_ones())
            .sum()
    }
}

fn coherence_of(top: &[usize], index: &CooccurrenceIndex) -> Result<f64> {
    let mut c = 0.0;
    for i in 1..top.len() {
        for j in 0..i {
            let dj = index.docs_with(top[j]);
            if dj == 0 {
                return Err(Error::invalid(format!(
                    "token {} appears in no document",
                    top[j]
                )));
            }
            c += ((index.docs_with_both(top[i], top[j]) as f64 + 1.0) / dj as f64).ln();
        }
    }
    Ok(c)
}

/// Co-occurrence coherence of the `top_m` highest-β tokens of topic `k`.
pub fn semantic_coherence(m: &LdaModel, k: usize, top_m: usize, corpus: &TokenCorpus) -> Result<f64> {
    if top_m < 2 || top_m > m.vocab_size {
        return Err(Error::invalid(format!(
            "coherence needs 2 ≤ M ≤ {}, got {top_m}",
            m.vocab_size
        )));
    }
    if k >= m.k {
        return Err(Error::invalid("topic index out of range"));
    }
    let index = CooccurrenceIndex::new(corpus);
    coherence_of(&top_tokens(m.beta_row(k), top_m), &index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSizeScore {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_exclusivity: f64,
    pub mean_coherence: f64,
    pub norm_excl: f64,
    pub norm_coh: f64,
    pub origin_distance: f64,
}

/// Mean top-M FREX and mean coherence over the topics of a fitted model.
pub fn score_model(m: &LdaModel, index: &CooccurrenceIndex, scoring: &TopicScoring) -> Result<TopicSizeScore> {
    let top_m = scoring.top_m;
    if top_m < 2 {
        return Err(Error::invalid("coherence needs M ≥ 2"));
    }
    if top_m > m.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary of {} tokens is smaller than M = {top_m}",
            m.vocab_size
        )));
    }
    let phi = m.topic_word();
    let mut excl = 0.0;
    let mut coh = 0.0;
    for k in 0..m.k {
        let top = top_tokens(m.beta_row(k), top_m);
        let fr = frex_row(&phi, k, m.k, m.vocab_size, scoring.omega);
        excl += top.iter().map(|&v| fr[v]).sum::<f64>() / top_m as f64;
        coh += coherence_of(&top, index)?;
    }
    Ok(TopicSizeScore {
        k: m.k,
        mean_exclusivity: excl / m.k as f64,
        mean_coherence: coh / m.k as f64,
        norm_excl: 0.0,
        norm_coh: 0.0,
        origin_distance: 0.0,
    })
}

/// Fits LDA at `k` and returns the un-normalized score.
pub fn score_topic_size(c: &TokenCorpus, k: usize, scoring: &TopicScoring, seed: u64) -> Result<TopicSizeScore> {
    let index = CooccurrenceIndex::new(c);
    score_topic_size_indexed(c, &index, k, scoring, seed)
}

fn score_topic_size_indexed(
    c: &TokenCorpus,
    index: &CooccurrenceIndex,
    k: usize,
    scoring: &TopicScoring,
    seed: u64,
) -> Result<TopicSizeScore> {
    let lda = &scoring.lda;
    let m = fit_lda(c, k, lda.alpha_for(k), lda.eta, lda.iters, seed)?;
    score_model(&m, index, scoring)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSweep {
    pub best_k: usize,
    pub best_index: usize,
    /// Scores ordered by K.
    pub scores: Vec<TopicSizeScore>,
}

impl TopicSweep {
    /// One row per K: exclusivity, coherence, their normalized values and
    /// the distance from the origin.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.scores {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Min-max normalizes both criteria and picks the K furthest from the
/// origin, preferring the smaller K on ties.
pub fn normalize_and_select(mut scores: Vec<TopicSizeScore>) -> Result<TopicSweep> {
    if scores.is_empty() {
        return Err(Error::invalid("no topic sizes scored"));
    }
    scores.sort_by_key(|s| s.k);
    let range = |f: &dyn Fn(&TopicSizeScore) -> f64| {
        let lo = scores.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = scores.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (elo, ehi) = range(&|s| s.mean_exclusivity);
    let (clo, chi) = range(&|s| s.mean_coherence);
    let norm = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
    for s in &mut scores {
        s.norm_excl = norm(s.mean_exclusivity, elo, ehi);
        s.norm_coh = norm(s.mean_coherence, clo, chi);
        s.origin_distance = s.norm_excl.hypot(s.norm_coh);
    }
    if ehi <= elo && chi <= clo {
        warn!("all topic sizes scored identically; using K={}", scores[0].k);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.origin_distance > scores[best].origin_distance + SCORE_EPS {
            best = i;
        }
    }
    Ok(TopicSweep {
        best_k: scores[best].k,
        best_index: best,
        scores,
    })
}

fn clean_k_range(k_range: &[usize]) -> Result<Vec<usize>> {
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return Err(Error::invalid("topic-size selection needs at least 3 candidate sizes"));
    }
    if ks[0] < 2 {
        return Err(Error::invalid("topic sizes must be at least 2"));
    }
    Ok(ks)
}

/// Sweeps `k_range` (order irrelevant) and selects the topic size.
/// `header_len` only salts the per-job seeds.
pub fn select_topic_size(
    c: &TokenCorpus,
    k_range: &[usize],
    scoring: &TopicScoring,
    seed: u64,
    header_len: usize,
) -> Result<TopicSweep> {
    let ks = clean_k_range(k_range)?;
    let index = CooccurrenceIndex::new(c);
    let scores = ks
        .par_iter()
        .map(|&k| score_topic_size_indexed(c, &index, k, scoring, job_seed(seed, header_len, k)))
        .collect::<Result<Vec<_>>>()?;
    normalize_and_select(scores)
}

/// Mean drop in origin distance from the optimum to its neighbours in the
/// K ordering (one neighbour at an endpoint).
pub fn isolation(distances: &[f64], opt_index: usize) -> Result<f64> {
    if distances.len() < 2 {
        return Err(Error::invalid("isolation needs at least two sweep points"));
    }
    if opt_index >= distances.len() {
        return Err(Error::invalid("optimum index out of range"));
    }
    let d = distances[opt_index];
    let mut gaps = Vec::with_capacity(2);
    if opt_index > 0 {
        gaps.push(d - distances[opt_index - 1]);
    }
    if opt_index + 1 < distances.len() {
        gaps.push(d - distances[opt_index + 1]);
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderLengthScore {
    pub length: usize,
    pub best_k: usize,
    pub isolation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderSweep {
    pub best_len: usize,
    pub best_k: usize,
    pub rows: Vec<HeaderLengthScore>,
    pub topic_sweeps: Vec<TopicSweep>,
}

/// N-gram corpus of the first `len` bytes of every payload.
pub fn header_corpus(payloads: &[Vec<u8>], len: usize, layer: OsiLayer, gram_bytes: usize) -> Result<TokenCorpus> {
    let docs = payloads
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let h = extract_header(p, len, layer, i)?;
            ngram_tokenize(&h.bytes, gram_bytes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenCorpus::from_docs(docs, TokenMethod::Ngram))
}

/// Runs a topic-size sweep for every candidate header length and keeps the
/// length whose optimum stands out most from its neighbours.
///
/// `payloads` are the stripped link- or transport-layer bytes; each sweep is
/// normalized on its own.
pub fn select_header_length(
    payloads: &[Vec<u8>],
    layer: OsiLayer,
    len_range: &[usize],
    k_range: &[usize],
    scoring: &TopicScoring,
    gram_bytes: usize,
    seed: u64,
) -> Result<HeaderSweep> {
    if layer == OsiLayer::Application {
        return Err(Error::invalid(
            "header length is not optimized for application-layer data (full payload is used)",
        ));
    }
    let mut lens = len_range.to_vec();
    lens.sort_unstable();
    lens.dedup();
    if lens.is_empty() || lens[0] == 0 {
        return Err(Error::invalid("header length range must be non-empty and positive"));
    }
    let ks = clean_k_range(k_range)?;
    let corpora = lens
        .par_iter()
        .map(|&l| header_corpus(payloads, l, layer, gram_bytes))
        .collect::<Result<Vec<_>>>()?;
    let indices: Vec<CooccurrenceIndex> = corpora.par_iter().map(CooccurrenceIndex::new).collect();

    let jobs: Vec<(usize, usize)> = (0..lens.len())
        .flat_map(|li| ks.iter().map(move |&k| (li, k)))
        .collect();
    let scores: Vec<Result<TopicSizeScore>> = jobs
        .par_iter()
        .map(|&(li, k)| {
            score_topic_size_indexed(&corpora[li], &indices[li], k, scoring, job_seed(seed, lens[li], k))
        })
        .collect();

    let mut rows = Vec::with_capacity(lens.len());
    let mut sweeps = Vec::with_capacity(lens.len());
    let mut last_err = None;
    let mut scores = scores.into_iter();
    for li in 0..lens.len() {
        // a length whose corpus cannot support every K (e.g. one distinct
        // token) is skipped rather than failing the whole sweep
        let chunk: Vec<Result<TopicSizeScore>> = scores.by_ref().take(ks.len()).collect();
        let chunk = match chunk.into_iter().collect::<Result<Vec<_>>>() {
            Ok(c) => c,
            Err(e) => {
                warn!("header length {} skipped: {e}", lens[li]);
                last_err = Some(e);
                continue;
            }
        };
        let sweep = normalize_and_select(chunk)?;
        let dists: Vec<f64> = sweep.scores.iter().map(|s| s.origin_distance).collect();
        rows.push(HeaderLengthScore {
            length: lens[li],
            best_k: sweep.best_k,
            isolation: isolation(&dists, sweep.best_index)?,
        });
        sweeps.push(sweep);
    }
    if rows.is_empty() {
        return Err(last_err.unwrap_or_else(|| Error::invalid("no header length could be scored")));
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.isolation > rows[best].isolation + SCORE_EPS {
            best = i;
        }
    }
    Ok(HeaderSweep {
        best_len: rows[best].length,
        best_k: rows[best].best_k,
        rows,
        topic_sweeps: sweeps,
    })
}

/// Knee of a monotone curve: both axes are scaled to [0, 1] (a decreasing
/// curve is flipped) and the index maximizing `y − x` is returned.
pub fn kneedle_elbow(xs: &[f64], ys: &[f64]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    if xs.len() < 3 {
        return Err(Error::invalid("knee detection needs at least 3 points"));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("x values must be strictly increasing"));
    }
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let ylo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let yhi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(yhi > ylo) {
        return Err(Error::invalid("flat curve has no knee"));
    }
    let decreasing = ys[0] > ys[ys.len() - 1];
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let xn = (x - x0) / (x1 - x0);
        let mut yn = (y - ylo) / (yhi - ylo);
        if decreasing {
            yn = 1.0 - yn;
        }
        let diff = yn - xn;
        if diff > best.1 + SCORE_EPS {
            best = (i, diff);
        }
    }
    if best.1 <= SCORE_EPS {
        return Err(Error::invalid("difference curve has no maximum above zero"));
    }
    Ok(best.0)
}
