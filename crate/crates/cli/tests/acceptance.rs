//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail. Every tolerance and threshold is pinned below.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use protoclust::capture::{strip_lower_layers, OsiLayer};
use protoclust::cluster::upgma;
use protoclust::features::{nwsa_matrix, nwsa_score, AlignmentScoring, LdaModel};
use protoclust::hybrid::{run_pipeline, sweep_header, RunConfig, Strategy};
use protoclust::metrics::{adjusted_mutual_information, adjusted_rand_index, fowlkes_mallows, SATISFACTORY_ARI};
use protoclust::optimize::{frex, select_header_length, select_topic_size, semantic_coherence, TopicScoring};
use protoclust::synth::presets;
use protoclust::tokenize::{TokenCorpus, TokenMethod};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METRIC_TOL: f64 = 1e-9;
const METRIC_INSTANCES: usize = 200;
const METRIC_MAX_ITEMS: usize = 30;
const METRIC_BUDGET: Duration = Duration::from_secs(5);

const NWSA_ALPHABET: u8 = 3;
const NWSA_MAX_LEN: usize = 6;
/// Lengths up to this are also checked against full enumeration of alignments.
const NWSA_ENUM_LEN: usize = 4;
const NWSA_PACKETS: usize = 200;

const UPGMA_MATRICES: usize = 100;
const UPGMA_N: usize = 10;
const UPGMA_TIE_EPS: f64 = 1e-12;
const UPGMA_DIST_TOL: f64 = 1e-9;

const FORMULA_TOL: f64 = 1e-12;

const TOPIC_SEEDS: u64 = 10;
const TOPIC_PASS: usize = 8;
const TOPIC_ACCEPT: [usize; 3] = [3, 4, 5];

const HEADER_SEEDS: u64 = 10;
const HEADER_PASS: usize = 8;
const HEADER_WINDOW: (usize, usize) = (6, 12);
/// Reduced grid for runtime: lengths 2..=24, topic sizes 2..=12.
const HEADER_LENS: (usize, usize) = (2, 24);
const HEADER_KS: (usize, usize) = (2, 12);

const HYBRID_SEED: u64 = 1;
const HYBRID_BUDGET: Duration = Duration::from_secs(360);

const HARNESS_RUNS: usize = 500;
const HARNESS_ACCURACY: f64 = 0.6;

const DETERMINISM_SEED: &str = "7";

const TOKENIZER_SEEDS: [u64; 3] = [1, 2, 3];

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("metric oracles", metric_oracles),
        ("alignment oracle", alignment_oracle),
        ("average-linkage oracle", average_linkage_oracle),
        ("exclusivity/coherence fixtures", formula_fixtures),
        ("topic-size selection", topic_size_selection),
        ("header-length selection", header_length_selection),
        ("end-to-end hybrid", end_to_end_hybrid),
        ("ARI/accuracy relationship", ari_accuracy_harness),
        ("determinism", determinism),
        ("tokenization regression", tokenization_regression),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let outcome = check();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// ---- 1. metrics -----------------------------------------------------------

/// (both, pred only, truth only, neither) by enumerating item pairs.
fn pair_agreement(pred: &[usize], truth: &[usize]) -> [f64; 4] {
    let mut c = [0.0; 4];
    for i in 0..pred.len() {
        for j in (i + 1)..pred.len() {
            let (p, t) = (pred[i] == pred[j], truth[i] == truth[j]);
            c[match (p, t) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            }] += 1.0;
        }
    }
    c
}

fn oracle_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let [a, b, c, d] = pair_agreement(pred, truth);
    let denom = (a + b) * (b + d) + (a + c) * (c + d);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (a * d - b * c) / denom
}

fn oracle_fms(pred: &[usize], truth: &[usize]) -> f64 {
    let [a, b, c, _] = pair_agreement(pred, truth);
    if a + b == 0.0 || a + c == 0.0 {
        return 0.0;
    }
    a / ((a + b) * (a + c)).sqrt()
}

fn binom(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn counts(xs: &[usize]) -> BTreeMap<usize, u64> {
    let mut m = BTreeMap::new();
    for &x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

fn plogp_entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// AMI with the arithmetic-mean normalizer; MI from joint entropies, the
/// expectation by summing hypergeometric probabilities over every cell value.
fn oracle_ami(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as u64;
    let nf = n as f64;
    let (rows, cols) = (counts(pred), counts(truth));
    let joint = counts(
        &pred
            .iter()
            .zip(truth)
            .map(|(&p, &t)| p * 1000 + t)
            .collect::<Vec<_>>(),
    );
    if (rows.len() == 1 && cols.len() == 1) || (rows.len() as u64 == n && cols.len() as u64 == n) {
        return 1.0;
    }
    let hu = plogp_entropy(rows.values().copied(), nf);
    let hv = plogp_entropy(cols.values().copied(), nf);
    let huv = plogp_entropy(joint.values().copied(), nf);
    let mi = hu + hv - huv;
    let mut emi = 0.0;
    for &a in rows.values() {
        for &b in cols.values() {
            for k in 1..=a.min(b) {
                let p = binom(a, k) * binom(n - a, b - k) / binom(n, b);
                if p > 0.0 {
                    let kf = k as f64;
                    emi += p * kf / nf * (nf * kf / (a as f64 * b as f64)).ln();
                }
            }
        }
    }
    (mi - emi) / ((hu + hv) / 2.0 - emi)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for case in 0..METRIC_INSTANCES {
        let n = rng.gen_range(2..=METRIC_MAX_ITEMS);
        let (kp, kt) = (rng.gen_range(1..=n.min(8)), rng.gen_range(1..=n.min(8)));
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kp)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kt)).collect();
        let pairs = [
            ("ARI", adjusted_rand_index(&pred, &truth), oracle_ari(&pred, &truth)),
            ("FMS", fowlkes_mallows(&pred, &truth), oracle_fms(&pred, &truth)),
            ("AMI", adjusted_mutual_information(&pred, &truth), oracle_ami(&pred, &truth)),
        ];
        for (name, got, want) in pairs {
            let got = got.map_err(|e| format!("case {case}: {name} failed: {e}"))?;
            let diff = (got - want).abs();
            worst = worst.max(diff);
            if !(diff <= METRIC_TOL) {
                return Err(format!("case {case}: {name} {got} vs oracle {want}"));
            }
        }
    }
    let elapsed = t.elapsed();
    if elapsed > METRIC_BUDGET {
        return Err(format!("took {elapsed:?}, budget {METRIC_BUDGET:?}"));
    }
    Ok(format!("{METRIC_INSTANCES} instances, max |diff| {worst:.1e} (tol {METRIC_TOL:e})"))
}

// ---- 2. alignment ---------------------------------------------------------

/// Best score over every alignment, by recursion without memoization.
fn enumerate_alignments(a: &[u8], b: &[u8], s: &AlignmentScoring) -> i64 {
    match (a.split_first(), b.split_first()) {
        (None, None) => 0,
        (None, Some(_)) => b.len() as i64 * s.gap,
        (Some(_), None) => a.len() as i64 * s.gap,
        (Some((x, ra)), Some((y, rb))) => {
            let pair = if x == y { s.match_score } else { s.mismatch };
            (pair + enumerate_alignments(ra, rb, s))
                .max(s.gap + enumerate_alignments(ra, b, s))
                .max(s.gap + enumerate_alignments(a, rb, s))
        }
    }
}

/// Textbook full-table global alignment.
fn table_alignment(a: &[u8], b: &[u8], s: &AlignmentScoring) -> i64 {
    let mut t = vec![vec![0i64; b.len() + 1]; a.len() + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i as i64 * s.gap;
    }
    for j in 0..=b.len() {
        t[0][j] = j as i64 * s.gap;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let pair = if a[i - 1] == b[j - 1] { s.match_score } else { s.mismatch };
            t[i][j] = (t[i - 1][j - 1] + pair).max(t[i - 1][j] + s.gap).max(t[i][j - 1] + s.gap);
        }
    }
    t[a.len()][b.len()]
}

fn all_words(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let next: Vec<Vec<u8>> = frontier
            .iter()
            .flat_map(|w: &Vec<u8>| {
                (0..NWSA_ALPHABET).map(move |c| {
                    let mut w = w.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn alignment_oracle() -> Outcome {
    let schemes = [
        AlignmentScoring::default(),
        AlignmentScoring {
            match_score: 2,
            mismatch: -1,
            gap: -2,
        },
    ];
    let small = all_words(NWSA_ENUM_LEN);
    for s in &schemes {
        for a in &small {
            for b in &small {
                if table_alignment(a, b, s) != enumerate_alignments(a, b, s) {
                    return Err(format!("table oracle disagrees with enumeration on {a:?}/{b:?}"));
                }
            }
        }
    }
    let words = all_words(NWSA_MAX_LEN);
    let mut pairs = 0usize;
    for s in &schemes {
        for a in &words {
            for b in &words {
                let (got, want) = (nwsa_score(a, b, s), table_alignment(a, b, s));
                if got != want {
                    return Err(format!("{a:?} vs {b:?}: {got}, oracle {want}"));
                }
                pairs += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let packets: Vec<Vec<u8>> = (0..NWSA_PACKETS)
        .map(|_| (0..rng.gen_range(1..=12)).map(|_| rng.gen()).collect())
        .collect();
    let out = nwsa_matrix(&packets, &AlignmentScoring::default()).map_err(|e| e.to_string())?;
    let expected = NWSA_PACKETS * (NWSA_PACKETS - 1) / 2;
    if out.alignments != expected {
        return Err(format!("{} alignments for {NWSA_PACKETS} packets, expected {expected}", out.alignments));
    }
    Ok(format!(
        "{pairs} pairs (length ≤ {NWSA_MAX_LEN}, {NWSA_ALPHABET} symbols) exact; {expected} alignments"
    ))
}

// ---- 3. average linkage ---------------------------------------------------

/// (a, b, linkage, size) per merge, scipy numbering.
fn oracle_linkage(d: &[f64], n: usize, threshold: f64) -> Vec<(usize, usize, f64, usize)> {
    // clusters as (member list, node id); linkage recomputed from scratch
    let mut clusters: Vec<(Vec<usize>, usize)> = (0..n).map(|i| (vec![i], i)).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let link = |x: &[usize], y: &[usize]| {
            let s: f64 = x.iter().flat_map(|&i| y.iter().map(move |&j| d[i * n + j])).sum();
            s / (x.len() * y.len()) as f64
        };
        let mut cands = Vec::new();
        for p in 0..clusters.len() {
            for q in (p + 1)..clusters.len() {
                cands.push((p, q, link(&clusters[p].0, &clusters[q].0)));
            }
        }
        let min = cands.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
        // smallest member of each side, lexicographically
        let key = |p: usize| *clusters[p].0.iter().min().unwrap();
        let &(p, q, l) = cands
            .iter()
            .filter(|c| c.2 <= min + UPGMA_TIE_EPS)
            .min_by_key(|c| {
                let (a, b) = (key(c.0), key(c.1));
                (a.min(b), a.max(b))
            })
            .unwrap();
        if l > threshold + UPGMA_TIE_EPS {
            break;
        }
        let (lo, hi) = if key(p) < key(q) { (p, q) } else { (q, p) };
        let id = n + out.len();
        out.push((clusters[lo].1, clusters[hi].1, l, clusters[p].0.len() + clusters[q].0.len()));
        let mut members = clusters[p].0.clone();
        members.extend(&clusters[q].0);
        clusters.remove(q);
        clusters.remove(p);
        clusters.push((members, id));
    }
    out
}

fn average_linkage_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = UPGMA_N;
    let mut tied = 0;
    for m in 0..UPGMA_MATRICES {
        // every other matrix draws from a coarse grid to force ties
        let coarse = m % 2 == 0;
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if coarse {
                    rng.gen_range(1..=5) as f64 / 5.0
                } else {
                    rng.gen::<f64>()
                };
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        tied += coarse as usize;
        for threshold in [f64::INFINITY, 0.5] {
            let want = oracle_linkage(&d, n, threshold);
            let (_, dendro) = upgma(&d, n, threshold).map_err(|e| e.to_string())?;
            if dendro.merges.len() != want.len() {
                return Err(format!("matrix {m}: {} merges, oracle {}", dendro.merges.len(), want.len()));
            }
            for (s, (got, w)) in dendro.merges.iter().zip(&want).enumerate() {
                if (got.cluster_a, got.cluster_b, got.size) != (w.0, w.1, w.3)
                    || !close(got.dissimilarity, w.2, UPGMA_DIST_TOL)
                {
                    return Err(format!("matrix {m} step {s}: {got:?} vs oracle {w:?}"));
                }
            }
        }
    }
    Ok(format!("{UPGMA_MATRICES} matrices ({tied} with heavy ties), full and thresholded merge lists equal"))
}

// ---- 4. exclusivity / coherence -------------------------------------------

fn fixture_model() -> LdaModel {
    LdaModel {
        k: 2,
        vocab_size: 5,
        docs: 0,
        beta: vec![0.30, 0.25, 0.20, 0.15, 0.10, 0.10, 0.40, 0.05, 0.25, 0.20],
        theta: Vec::new(),
        alpha: 0.5,
        eta: 0.01,
        seed: 0,
        iters: 1,
    }
}

fn corpus(docs: &[&[&str]]) -> TokenCorpus {
    TokenCorpus::from_docs(
        docs.iter().map(|d| d.iter().map(|t| t.to_string()).collect()).collect(),
        TokenMethod::Ngram,
    )
}

fn formula_fixtures() -> Outcome {
    let m = fixture_model();
    let h = |e: f64, f: f64| 1.0 / (0.7 / e + 0.3 / f);
    // ECDF ranks worked out by hand from the β rows above
    let want = [
        [h(0.8, 1.0), h(0.6, 0.8), h(1.0, 0.6), h(0.4, 0.4), h(0.2, 0.2)],
        [h(0.4, 0.4), h(0.6, 1.0), h(0.2, 0.2), h(0.8, 0.8), h(1.0, 0.6)],
    ];
    for (k, row) in want.iter().enumerate() {
        for (v, &w) in row.iter().enumerate() {
            let got = frex(&m, k, v, 0.7).map_err(|e| e.to_string())?;
            if !close(got, w, FORMULA_TOL) {
                return Err(format!("frex(k={k}, v={v}) = {got}, expected {w}"));
            }
        }
    }
    let c = corpus(&[
        &["t0", "t1", "t2", "t3", "t4"],
        &["t0", "t1"],
        &["t0", "t2"],
        &["t1", "t3"],
        &["t4", "t3"],
        &["t0"],
    ]);
    let coh = [
        2.0 * (3.0f64 / 4.0).ln() + (2.0f64 / 3.0).ln(),
        (2.0f64 / 3.0).ln(),
    ];
    for (k, &w) in coh.iter().enumerate() {
        let got = semantic_coherence(&m, k, 3, &c).map_err(|e| e.to_string())?;
        if !close(got, w, FORMULA_TOL) {
            return Err(format!("coherence(k={k}) = {got}, expected {w}"));
        }
    }
    // two-token closed forms
    let pair = LdaModel {
        k: 2,
        vocab_size: 3,
        beta: vec![0.6, 0.3, 0.1, 0.1, 0.3, 0.6],
        ..fixture_model()
    };
    for d in 1..=6usize {
        let together: Vec<Vec<String>> = (0..d)
            .map(|_| vec!["x".into(), "y".into()])
            .chain(std::iter::once(vec!["z".into()]))
            .collect();
        let got = semantic_coherence(&pair, 0, 2, &TokenCorpus::from_docs(together, TokenMethod::Ngram))
            .map_err(|e| e.to_string())?;
        if got != ((d + 1) as f64 / d as f64).ln() {
            return Err(format!("co-occurring pair, d={d}: {got}"));
        }
        let apart: Vec<Vec<String>> = (0..d)
            .map(|_| vec!["x".into()])
            .chain(std::iter::once(vec!["y".into(), "z".into()]))
            .collect();
        let got = semantic_coherence(&pair, 0, 2, &TokenCorpus::from_docs(apart, TokenMethod::Ngram))
            .map_err(|e| e.to_string())?;
        if got != (1.0 / d as f64).ln() {
            return Err(format!("disjoint pair, d={d}: {got}"));
        }
    }
    Ok(format!("10 frex and 2 coherence values within {FORMULA_TOL:e}; closed forms exact for d=1..6"))
}

// ---- 5. topic size --------------------------------------------------------

/// 200 documents of 20 tokens; each document draws 90% of its tokens from
/// one of four disjoint 30-word vocabularies.
fn planted_topics(seed: u64) -> TokenCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs = (0..200)
        .map(|i| {
            let t = i % 4;
            (0..20)
                .map(|_| {
                    let topic = if rng.gen::<f64>() < 0.9 { t } else { rng.gen_range(0..4) };
                    format!("t{topic}w{}", rng.gen_range(0..30))
                })
                .collect()
        })
        .collect();
    TokenCorpus::from_docs(docs, TokenMethod::Ngram)
}

fn topic_size_selection() -> Outcome {
    let ks: Vec<usize> = (2..=12).collect();
    let mut chosen = Vec::new();
    for seed in 0..TOPIC_SEEDS {
        let sweep =
            select_topic_size(&planted_topics(seed), &ks, &TopicScoring::default(), seed, 0).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).map_err(|e| e.to_string())?;
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let hdr = rdr.headers().map_err(|e| e.to_string())?.clone();
        let col = |name: &str| hdr.iter().position(|h| h == name).ok_or(format!("no '{name}' column"));
        let (kc, dc) = (col("K")?, col("origin_distance")?);
        let mut best: Option<(usize, f64)> = None;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let k: usize = rec[kc].parse().map_err(|_| "bad K")?;
            let dist: f64 = rec[dc].parse().map_err(|_| "bad distance")?;
            if best.is_none_or(|(_, b)| dist > b) {
                best = Some((k, dist));
            }
        }
        let csv_k = best.ok_or("empty sweep CSV")?.0;
        if csv_k != sweep.best_k {
            return Err(format!("seed {seed}: chose K={} but CSV argmax is K={csv_k}", sweep.best_k));
        }
        chosen.push(sweep.best_k);
    }
    let hits = chosen.iter().filter(|k| TOPIC_ACCEPT.contains(k)).count();
    let detail = format!("K* per seed {chosen:?}; {hits}/{TOPIC_SEEDS} in {TOPIC_ACCEPT:?} (need {TOPIC_PASS})");
    if hits >= TOPIC_PASS {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 6. header length -----------------------------------------------------

fn header_length_selection() -> Outcome {
    let spec = presets::by_name("planted_header").map_err(|e| e.to_string())?;
    let cfg = |seed| RunConfig {
        seed,
        len_range: (HEADER_LENS.0..=HEADER_LENS.1).collect(),
        k_range: (HEADER_KS.0..=HEADER_KS.1).collect(),
        ..RunConfig::default()
    };
    let in_window = |l: usize| (HEADER_WINDOW.0..=HEADER_WINDOW.1).contains(&l);
    let mut chosen = Vec::new();
    let mut ari_peak = None;
    for seed in 0..HEADER_SEEDS {
        let d = spec.dataset(seed).map_err(|e| e.to_string())?;
        let c = cfg(seed);
        if seed == 0 {
            // labeled sweep: selection plus the ARI at each length
            let t = sweep_header(&d, &c).map_err(|e| e.to_string())?;
            let max = t.rows.iter().filter_map(|r| r.ari).fold(f64::NEG_INFINITY, f64::max);
            let peaks: Vec<usize> = t.rows.iter().filter(|r| r.ari == Some(max)).map(|r| r.length).collect();
            ari_peak = Some((max, peaks));
            chosen.push(t.best_len);
        } else {
            let payloads = d
                .packets
                .iter()
                .map(|p| strip_lower_layers(p, d.osi_target))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let s = select_header_length(&payloads, d.osi_target, &c.len_range, &c.k_range, &c.topic_scoring(), c.gram_bytes, seed)
                .map_err(|e| e.to_string())?;
            chosen.push(s.best_len);
        }
    }
    let hits = chosen.iter().filter(|&&l| in_window(l)).count();
    let (max, peaks) = ari_peak.unwrap();
    let peak_ok = peaks.iter().any(|&l| in_window(l));
    let detail = format!(
        "L* per seed {chosen:?}; {hits}/{HEADER_SEEDS} in {HEADER_WINDOW:?} (need {HEADER_PASS}); \
         LDA ARI peak {max:.3} at L={peaks:?}"
    );
    if hits >= HEADER_PASS && peak_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 7. hybrid on transport -------------------------------------------------

fn end_to_end_hybrid() -> Outcome {
    let d = presets::by_name("transport")
        .and_then(|s| s.dataset(HYBRID_SEED))
        .map_err(|e| e.to_string())?;
    let t = Instant::now();
    let cfg = RunConfig {
        seed: HYBRID_SEED,
        ..RunConfig::default()
    };
    let r = run_pipeline(&d, Strategy::HYBRID, &cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let ari = r.scores.ok_or("no scores")?.ari;
    let detail = format!(
        "{} packets, L={}, ARI {ari:.4} (need ≥ {SATISFACTORY_ARI}), {:.1}s (budget {}s)",
        d.len(),
        r.header_len.value,
        elapsed.as_secs_f64(),
        HYBRID_BUDGET.as_secs()
    );
    if ari >= SATISFACTORY_ARI && elapsed < HYBRID_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---- 8. ARI vs accuracy -----------------------------------------------------

fn ari_accuracy_harness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut above, mut errors, mut violations) = (0, 0, Vec::new());
    for run in 0..HARNESS_RUNS {
        let name = *presets::NAMES.choose(&mut rng).unwrap();
        let total = rng.gen_range(40..=120);
        let spec = presets::by_name(name).and_then(|s| s.scaled(total)).map_err(|e| e.to_string())?;
        let d = spec.dataset(rng.gen()).map_err(|e| e.to_string())?;
        let strategy = *Strategy::ALL.choose(&mut rng).unwrap();
        let cfg = RunConfig {
            seed: rng.gen(),
            header_len: Some(rng.gen_range(2..=16) * 2),
            topic_size: Some(rng.gen_range(2..=8)),
            kmeans_k: Some(rng.gen_range(2..=8)),
            ..RunConfig::default()
        };
        match run_pipeline(&d, strategy, &cfg) {
            Ok(r) => {
                let s = r.scores.ok_or("labeled run without scores")?;
                if s.ari > SATISFACTORY_ARI {
                    above += 1;
                    if s.voting_accuracy < HARNESS_ACCURACY {
                        violations.push(format!("run {run} {name}/{strategy}: ARI {:.3} acc {:.3}", s.ari, s.voting_accuracy));
                    }
                }
            }
            Err(_) => errors += 1,
        }
    }
    let detail = format!(
        "{HARNESS_RUNS} runs, {above} with ARI > {SATISFACTORY_ARI}, {} below accuracy {HARNESS_ACCURACY}, {errors} errored",
        violations.len()
    );
    if violations.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}: {}", violations.join("; ")))
    }
}

// ---- 9. determinism ---------------------------------------------------------

fn protoclust(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_protoclust"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("protoclust {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(p: &Path) -> Result<String, String> {
    std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn without_clock_line(json: &str) -> String {
    json.lines().filter(|l| !l.trim_start().starts_with("\"seconds\"")).collect::<Vec<_>>().join("\n")
}

fn without_seconds_column(grid: &str) -> Result<Vec<Vec<String>>, String> {
    let mut rdr = csv::Reader::from_reader(grid.as_bytes());
    let hdr = rdr.headers().map_err(|e| e.to_string())?.clone();
    let skip = hdr.iter().position(|h| h == "seconds").ok_or("grid has no seconds column")?;
    let mut rows = vec![hdr.iter().map(String::from).collect::<Vec<_>>()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, v)| v.to_string()).collect());
    }
    Ok(rows)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |f: &str| dir.path().join(f);
    let s = |f: &str| p(f).to_string_lossy().into_owned();
    protoclust(&["generate", "--preset", "transport", "--out", &s("t.pcap"), "--seed", "4"])?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = s(&format!("{run}.json"));
        protoclust(&[
            "analyze", &s("t.pcap"), "--labels", &s("t.labels.csv"), "--layer", "transport",
            "--strategy", "hybrid", "--seed", DETERMINISM_SEED, "--len-range", "4..16:4", "--out", &out,
        ])?;
        reports.push(read(&p(&format!("{run}.json")))?);
    }
    if without_clock_line(&reports[0]) != without_clock_line(&reports[1]) {
        return Err("analyze reports differ between identical runs".into());
    }

    protoclust(&["generate", "--suite", &s("suite"), "--total", "60", "--seed", "5"])?;
    let manifest = p("suite").join("manifest.json");
    let mut grids = Vec::new();
    for jobs in ["1", "3"] {
        let out = s(&format!("grid{jobs}.csv"));
        protoclust(&[
            "--jobs", jobs, "benchmark", &manifest.to_string_lossy(), "--out", &out,
            "--header-len", "8", "--topic-size", "4", "--kmeans-k", "4",
        ])?;
        grids.push(without_seconds_column(&read(&p(&format!("grid{jobs}.csv")))?)?);
    }
    if grids[0] != grids[1] {
        return Err("benchmark grids differ between --jobs 1 and --jobs 3".into());
    }
    Ok(format!(
        "report byte-identical apart from the clock; {}-row grid identical across --jobs 1/3",
        grids[0].len() - 1
    ))
}

// ---- 10. tokenizers on textual application data ---------------------------

fn tokenization_regression() -> Outcome {
    let spec = presets::by_name("app_text").map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    let mut ok = true;
    for seed in TOKENIZER_SEEDS {
        let d = spec.dataset(seed).map_err(|e| e.to_string())?;
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let ari = |s: Strategy| -> Result<f64, String> {
            run_pipeline(&d, s, &cfg)
                .map_err(|e| e.to_string())?
                .scores
                .map(|x| x.ari)
                .ok_or_else(|| "no scores".to_string())
        };
        let hybrid = run_pipeline(&d, Strategy::HYBRID, &cfg).map_err(|e| e.to_string())?;
        if hybrid.strategy.tokenizer != protoclust::hybrid::Tokenizer::Nemesys || d.osi_target != OsiLayer::Application {
            return Err(format!("seed {seed}: hybrid resolved to {:?}", hybrid.strategy));
        }
        let (h, t) = (hybrid.scores.ok_or("no scores")?.ari, ari(Strategy::TF_UPGMA)?);
        ok &= h >= t;
        rows.push(format!("seed {seed}: NEMESYS {h:.3} vs n-gram {t:.3}"));
    }
    if ok {
        Ok(rows.join("; "))
    } else {
        Err(rows.join("; "))
    }
}
