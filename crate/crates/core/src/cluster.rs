//! UPGMA agglomerative clustering over a dissimilarity matrix, and k-means
//! with k-means++ seeding.

use log::warn;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::optimize::kneedle_elbow;

pub const DEFAULT_UPGMA_THRESHOLD: f64 = 0.5;
pub const DEFAULT_KMEANS_MAX_ITERS: usize = 300;

/// Linkage values closer than this are treated as ties.
pub const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Upgma,
    Kmeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub method: ClusterMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Renumbers arbitrary ids to `0..k` by order of first appearance.
pub fn relabel(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let labels = ids
        .iter()
        .map(|id| {
            let next = map.len();
            *map.entry(*id).or_insert(next)
        })
        .collect();
    (labels, map.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub cluster_a: usize,
    pub cluster_b: usize,
    pub dissimilarity: f64,
    pub size: usize,
}

/// Merge list in scipy numbering: leaves are `0..n`, the cluster formed by
/// merge `s` is `n + s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cluster_a", "cluster_b", "dissimilarity", "size"])?;
        for m in &self.merges {
            w.write_record([
                m.cluster_a.to_string(),
                m.cluster_b.to_string(),
                m.dissimilarity.to_string(),
                m.size.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "vector dimensions differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Pairwise `1 − cosine` dissimilarities between matrix rows. Zero rows get
/// dissimilarity 1 to everything else.
pub fn cosine_dissimilarity(f: &FeatureMatrix) -> Vec<f64> {
    use rayon::prelude::*;
    let p = f.rows;
    let norms: Vec<f64> = f
        .row_iter()
        .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    let zero_rows = norms.iter().filter(|&&n| n == 0.0).count();
    if zero_rows > 0 {
        warn!("{zero_rows} packets have all-zero feature vectors; using dissimilarity 1");
    }
    let rows: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        0.0
                    } else if norms[i] == 0.0 || norms[j] == 0.0 {
                        1.0
                    } else {
                        let dot: f64 = f.row(i).iter().zip(f.row(j)).map(|(a, b)| a * b).sum();
                        (1.0 - dot / (norms[i] * norms[j])).max(0.0)
                    }
                })
                .collect()
        })
        .collect();
    rows.concat()
}

fn check_dissimilarity(d: &[f64], n: usize) -> Result<()> {
    if d.len() != n * n {
        return Err(Error::invalid(format!(
            "dissimilarity matrix has {} entries, expected {n}×{n}",
            d.len()
        )));
    }
    for i in 0..n {
        if d[i * n + i] != 0.0 {
            return Err(Error::invalid(format!("non-zero diagonal at {i}")));
        }
        for j in (i + 1)..n {
            let (a, b) = (d[i * n + j], d[j * n + i]);
            if !(a >= 0.0) || !(b >= 0.0) {
                return Err(Error::invalid(format!("negative or NaN entry at ({i},{j})")));
            }
            if (a - b).abs() > 1e-9 {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i},{j})")));
            }
        }
    }
    Ok(())
}

/// Average-linkage agglomeration that stops before the first merge whose
/// linkage exceeds `threshold` by more than [`TIE_EPS`].
///
/// Clusters are keyed by their smallest member; among pairs whose linkage
/// ties within [`TIE_EPS`], the lexicographically smallest key pair merges.
pub fn upgma(dissim: &[f64], n: usize, threshold: f64) -> Result<(ClusterAssignment, Dendrogram)> {
    check_dissimilarity(dissim, n)?;
    let mut d = dissim.to_vec();
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut node_id: Vec<usize> = (0..n).collect();
    // slot of the cluster each leaf currently belongs to
    let mut owner: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();

    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in ((i + 1)..n).filter(|&j| active[j]) {
                let v = d[i * n + j];
                if best.is_none_or(|(_, _, b)| v < b - TIE_EPS) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((a, b, link)) = best else { break };
        if link > threshold + TIE_EPS {
            break;
        }
        let (sa, sb) = (size[a] as f64, size[b] as f64);
        for c in (0..n).filter(|&c| active[c] && c != a && c != b) {
            let v = (sa * d[a * n + c] + sb * d[b * n + c]) / (sa + sb);
            d[a * n + c] = v;
            d[c * n + a] = v;
        }
        merges.push(Merge {
            cluster_a: node_id[a],
            cluster_b: node_id[b],
            dissimilarity: link,
            size: size[a] + size[b],
        });
        active[b] = false;
        size[a] += size[b];
        node_id[a] = n + step;
        for o in owner.iter_mut().filter(|o| **o == b) {
            *o = a;
        }
    }

    let (labels, k) = relabel(&owner);
    Ok((
        ClusterAssignment {
            labels,
            k,
            method: ClusterMethod::Upgma,
            threshold: Some(threshold),
            seed: None,
        },
        Dendrogram { leaves: n, merges },
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignment: ClusterAssignment,
    pub wss: f64,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wss_trace: Vec<f64>,
}

fn nearest(row: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(row, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(f: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let p = f.rows;
    let mut centers = vec![f.row(rng.gen_range(0..p)).to_vec()];
    let mut d2: Vec<f64> = f.row_iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a center already
            Err(_) => rng.gen_range(0..p),
        };
        centers.push(f.row(next).to_vec());
        let c = centers.last().unwrap();
        for (i, r) in f.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, c));
        }
    }
    centers
}

pub fn kmeans(f: &FeatureMatrix, k: usize, seed: u64, max_iters: usize) -> Result<KmeansResult> {
    let p = f.rows;
    if k == 0 || k > p {
        return Err(Error::invalid(format!("k-means with K={k} on {p} points")));
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("feature matrix has non-finite values"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(f, k, &mut rng);
    let mut assign = vec![usize::MAX; p];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut dist = vec![0.0; p];
        for (i, r) in f.row_iter().enumerate() {
            let (c, d) = nearest(r, &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            dist[i] = d;
        }
        // reseed empty clusters with the point farthest from its centroid
        for c in 0..k {
            if assign.iter().all(|&a| a != c) {
                let far = (0..p)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                assign[far] = c;
                dist[far] = 0.0;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; f.cols]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in f.row_iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let wss: f64 = f
            .row_iter()
            .enumerate()
            .map(|(i, r)| sq_dist(r, &centers[assign[i]]))
            .sum();
        trace.push(wss);
        if !changed {
            break;
        }
    }

    let wss = *trace.last().unwrap();
    let (labels, k_found) = relabel(&assign);
    Ok(KmeansResult {
        assignment: ClusterAssignment {
            labels,
            k: k_found,
            method: ClusterMethod::Kmeans,
            threshold: None,
            seed: Some(seed),
        },
        wss,
        iterations,
        wss_trace: trace,
    })
}

/// Picks K at the elbow of the within-cluster sum of squares curve. Falls
/// back to the smallest candidate when the curve has no knee.
pub fn select_k_kmeans(f: &FeatureMatrix, k_range: &[usize], seed: u64) -> Result<(usize, Vec<f64>)> {
    let mut ks: Vec<usize> = k_range.iter().copied().filter(|&k| k >= 1 && k <= f.rows).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return Err(Error::invalid("elbow selection needs at least 3 candidate K values"));
    }
    let wss = ks
        .iter()
        .map(|&k| kmeans(f, k, seed, DEFAULT_KMEANS_MAX_ITERS).map(|r| r.wss))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    match kneedle_elbow(&xs, &wss) {
        Ok(i) => Ok((ks[i], wss)),
        Err(e) => {
            warn!("no elbow in k-means WSS curve ({e}); using K={}", ks[0]);
            Ok((ks[0], wss))
        }
    }
}
