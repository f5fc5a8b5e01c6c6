//! External clustering scores against ground truth: ARI, Fowlkes-Mallows,
//! AMI (arithmetic-mean normalization, natural log) and majority-vote
//! accuracy.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SATISFACTORY_ARI: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `counts[i][j]`: items in predicted cluster `i` and truth class `j`.
    pub counts: Vec<Vec<u64>>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
    /// Original ids behind the row and column indices, ascending.
    pub pred_ids: Vec<usize>,
    pub truth_ids: Vec<usize>,
}

impl ContingencyTable {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::invalid(format!(
                "label lengths differ: {} predicted vs {} truth",
                pred.len(),
                truth.len()
            )));
        }
        if pred.len() < 2 {
            return Err(Error::invalid("need at least two items to compare partitions"));
        }
        let index = |ids: &[usize]| -> BTreeMap<usize, usize> {
            let mut m: BTreeMap<usize, usize> = ids.iter().map(|&i| (i, 0)).collect();
            for (pos, v) in m.values_mut().enumerate() {
                *v = pos;
            }
            m
        };
        let pi = index(pred);
        let ti = index(truth);
        let mut counts = vec![vec![0u64; ti.len()]; pi.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[pi[p]][ti[t]] += 1;
        }
        let row_sums = counts.iter().map(|r| r.iter().sum()).collect();
        let col_sums = (0..ti.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        Ok(ContingencyTable {
            counts,
            row_sums,
            col_sums,
            n: pred.len() as u64,
            pred_ids: pi.into_keys().collect(),
            truth_ids: ti.into_keys().collect(),
        })
    }
}

fn comb2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// (together in both, together in pred only, together in truth only) pair counts.
fn pair_counts(t: &ContingencyTable) -> (f64, f64, f64) {
    let both: f64 = t.counts.iter().flatten().map(|&c| comb2(c)).sum();
    let pred: f64 = t.row_sums.iter().map(|&c| comb2(c)).sum();
    let truth: f64 = t.col_sums.iter().map(|&c| comb2(c)).sum();
    (both, pred - both, truth - both)
}

pub fn adjusted_rand_index(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let (tp, fp, fneg) = pair_counts(&t);
    let sum_pred = tp + fp;
    let sum_truth = tp + fneg;
    let expected = sum_pred * sum_truth / comb2(t.n);
    let max_index = (sum_pred + sum_truth) / 2.0;
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((tp - expected) / denom)
}

pub fn fowlkes_mallows(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let (tp, fp, fneg) = pair_counts(&t);
    let denom = ((tp + fp) * (tp + fneg)).sqrt();
    if denom == 0.0 {
        warn!("Fowlkes-Mallows undefined without co-clustered pairs; reporting 0");
        return Ok(0.0);
    }
    Ok(tp / denom)
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n as usize + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Expected mutual information under the hypergeometric model with the
/// table's marginals fixed.
pub fn expected_mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n;
    let nf = n as f64;
    let lf = ln_factorials(n);
    let mut emi = 0.0;
    for &a in &t.row_sums {
        for &b in &t.col_sums {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (a as f64 * b as f64)).ln();
                let log_p = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize]
                    - lf[n as usize]
                    - lf[nij as usize]
                    - lf[(a - nij) as usize]
                    - lf[(b - nij) as usize]
                    - lf[(n + nij - a - b) as usize];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (t.row_sums[i] as f64 * t.col_sums[j] as f64)).ln();
            }
        }
    }
    mi
}

pub fn adjusted_mutual_information(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    let (r, c) = (t.row_sums.len(), t.col_sums.len());
    let n = t.n as usize;
    // both partitions trivial (single cluster, or all singletons)
    if (r == 1 && c == 1) || (r == n && c == n) {
        return Ok(1.0);
    }
    let mi = mutual_information(&t);
    let emi = expected_mutual_information(&t);
    let nf = t.n as f64;
    let h_pred = entropy(&t.row_sums, nf);
    let h_truth = entropy(&t.col_sums, nf);
    let denom = (h_pred + h_truth) / 2.0 - emi;
    let denom = if denom < 0.0 {
        denom.min(-f64::EPSILON)
    } else {
        denom.max(f64::EPSILON)
    };
    Ok((mi - emi) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingResult {
    pub accuracy: f64,
    /// Modal truth class of each predicted cluster, indexed like `pred_ids`.
    pub cluster_votes: Vec<usize>,
    /// `confusion[v][t]`: items voted class `v` with truth class `t`, over
    /// the sorted truth classes.
    pub confusion: Vec<Vec<u64>>,
    pub classes: Vec<usize>,
}

impl VotingResult {
    pub fn write_confusion_csv<W: std::io::Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let name = |c: usize| names.and_then(|n| n.get(c).cloned()).unwrap_or_else(|| c.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["voted\\truth".to_string()];
        header.extend(self.classes.iter().map(|&c| name(c)));
        w.write_record(&header)?;
        for (vi, row) in self.confusion.iter().enumerate() {
            let mut rec = vec![name(self.classes[vi])];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Labels each predicted cluster with its most common truth class (ties go
/// to the smaller class id) and scores the result as a classifier.
pub fn voting_accuracy(pred: &[usize], truth: &[usize]) -> Result<VotingResult> {
    let t = ContingencyTable::new(pred, truth)?;
    let classes = t.truth_ids.clone();
    let votes: Vec<usize> = t
        .counts
        .iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    let mut correct = 0u64;
    for (i, row) in t.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            confusion[votes[i]][j] += c;
        }
        correct += row[votes[i]];
    }
    Ok(VotingResult {
        accuracy: correct as f64 / t.n as f64,
        cluster_votes: votes.iter().map(|&v| classes[v]).collect(),
        confusion,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationScores {
    pub ari: f64,
    pub fms: f64,
    pub ami: f64,
    pub voting_accuracy: f64,
    pub satisfactory: bool,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<EvaluationScores> {
    let ari = adjusted_rand_index(pred, truth)?;
    Ok(EvaluationScores {
        ari,
        fms: fowlkes_mallows(pred, truth)?,
        ami: adjusted_mutual_information(pred, truth)?,
        voting_accuracy: voting_accuracy(pred, truth)?.accuracy,
        satisfactory: ari >= SATISFACTORY_ARI,
    })
}
