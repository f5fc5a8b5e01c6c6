//! Latent Dirichlet allocation fitted by collapsed Gibbs sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::TokenCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Symmetric doc-topic prior; `None` means `1 / K`.
    pub alpha: Option<f64>,
    pub eta: f64,
    pub iters: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            alpha: None,
            eta: 0.01,
            iters: 500,
        }
    }
}

impl LdaConfig {
    pub fn alpha_for(&self, k: usize) -> f64 {
        self.alpha.unwrap_or(1.0 / k as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub k: usize,
    pub vocab_size: usize,
    pub docs: usize,
    /// `K × V` topic-token weights `n_kv + eta`, row-major.
    pub beta: Vec<f64>,
    /// `docs × K` posteriors, row-major; each row sums to one.
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub eta: f64,
    pub seed: u64,
    pub iters: usize,
}

impl LdaModel {
    pub fn beta_row(&self, k: usize) -> &[f64] {
        &self.beta[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn theta_row(&self, d: usize) -> &[f64] {
        &self.theta[d * self.k..(d + 1) * self.k]
    }

    /// Per-topic token distributions (each β row normalized to sum one).
    pub fn topic_word(&self) -> Vec<f64> {
        let mut out = self.beta.clone();
        for row in out.chunks_mut(self.vocab_size) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        out
    }

    pub fn argmax_topics(&self) -> Vec<usize> {
        (0..self.docs)
            .map(|d| {
                let row = self.theta_row(d);
                let mut best = 0;
                for k in 1..self.k {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn fit_lda(c: &TokenCorpus, k: usize, alpha: f64, eta: f64, iters: usize, seed: u64) -> Result<LdaModel> {
    if k < 2 {
        return Err(Error::invalid(format!("topic count must be at least 2, got {k}")));
    }
    if iters == 0 {
        return Err(Error::invalid("LDA needs at least one sweep"));
    }
    if !(alpha > 0.0 && eta > 0.0) {
        return Err(Error::invalid("LDA priors must be positive"));
    }
    if let Some(d) = c.docs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("document {d} is empty")));
    }
    let total = c.total_tokens();
    if k > total {
        return Err(Error::invalid(format!(
            "{k} topics exceed the {total} token occurrences in the corpus"
        )));
    }

    let docs = c.doc_ids();
    let v = c.vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut n_dk = vec![0u32; docs.len() * k];
    let mut n_kv = vec![0u32; k * v];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<u32>> = Vec::with_capacity(docs.len());
    for (d, doc) in docs.iter().enumerate() {
        let zs: Vec<u32> = doc
            .iter()
            .map(|&w| {
                let t = rng.gen_range(0..k);
                n_dk[d * k + t] += 1;
                n_kv[t * v + w] += 1;
                n_k[t] += 1;
                t as u32
            })
            .collect();
        z.push(zs);
    }

    // word-major copy of n_kv so the topic loop reads contiguous memory
    let mut n_wk = vec![0u32; v * k];
    for t in 0..k {
        for w in 0..v {
            n_wk[w * k + t] = n_kv[t * v + w];
        }
    }
    let v_eta = v as f64 * eta;
    let mut inv_nk: Vec<f64> = n_k.iter().map(|&n| 1.0 / (n as f64 + v_eta)).collect();
    let mut cumulative = vec![0.0f64; k];
    for _ in 0..iters {
        for (d, doc) in docs.iter().enumerate() {
            let dk = &mut n_dk[d * k..(d + 1) * k];
            for (i, &w) in doc.iter().enumerate() {
                let old = z[d][i] as usize;
                let wk = &mut n_wk[w * k..(w + 1) * k];
                dk[old] -= 1;
                wk[old] -= 1;
                n_k[old] -= 1;
                inv_nk[old] = 1.0 / (n_k[old] as f64 + v_eta);

                let mut acc = 0.0;
                for t in 0..k {
                    acc += (dk[t] as f64 + alpha) * (wk[t] as f64 + eta) * inv_nk[t];
                    cumulative[t] = acc;
                }
                let u = rng.gen::<f64>() * acc;
                let new = cumulative.partition_point(|&c| c <= u).min(k - 1);

                dk[new] += 1;
                wk[new] += 1;
                n_k[new] += 1;
                inv_nk[new] = 1.0 / (n_k[new] as f64 + v_eta);
                z[d][i] = new as u32;
            }
        }
    }
    for t in 0..k {
        for w in 0..v {
            n_kv[t * v + w] = n_wk[w * k + t];
        }
    }

    let k_alpha = k as f64 * alpha;
    let mut theta = Vec::with_capacity(docs.len() * k);
    for (d, doc) in docs.iter().enumerate() {
        let denom = doc.len() as f64 + k_alpha;
        theta.extend((0..k).map(|t| (n_dk[d * k + t] as f64 + alpha) / denom));
    }
    let beta = n_kv.iter().map(|&n| n as f64 + eta).collect();

    Ok(LdaModel {
        k,
        vocab_size: v,
        docs: docs.len(),
        beta,
        theta,
        alpha,
        eta,
        seed,
        iters,
    })
}
