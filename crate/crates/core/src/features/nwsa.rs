//! Needleman-Wunsch global alignment with linear gap costs.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentScoring {
    #[serde(rename = "match")]
    pub match_score: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for AlignmentScoring {
    fn default() -> Self {
        AlignmentScoring {
            match_score: 1,
            mismatch: -1,
            gap: -1,
        }
    }
}

impl AlignmentScoring {
    pub fn validate(&self) -> Result<()> {
        if self.match_score <= self.mismatch || self.match_score <= self.gap {
            return Err(Error::invalid(
                "alignment match score must exceed both mismatch and gap scores",
            ));
        }
        Ok(())
    }
}

/// Global alignment score `D[|a|][|b|]`, computed with two rolling rows.
pub fn nwsa_score<T: PartialEq>(a: &[T], b: &[T], s: &AlignmentScoring) -> i64 {
    let mut prev: Vec<i64> = (0..=b.len() as i64).map(|j| j * s.gap).collect();
    let mut cur = vec![0i64; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = (i as i64 + 1) * s.gap;
        for (j, y) in b.iter().enumerate() {
            let diag = prev[j] + if x == y { s.match_score } else { s.mismatch };
            let up = prev[j + 1] + s.gap;
            let left = cur[j] + s.gap;
            cur[j + 1] = diag.max(up).max(left);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn self_score(a: &[u8], s: &AlignmentScoring) -> i64 {
    // Two gaps can never beat a match when 2·gap ≤ match.
    if 2 * s.gap <= s.match_score {
        a.len() as i64 * s.match_score
    } else {
        nwsa_score(a, a, s)
    }
}

#[derive(Debug, Clone)]
pub struct NwsaOutput {
    pub similarity: FeatureMatrix,
    /// Number of pairwise (off-diagonal) alignments performed.
    pub alignments: usize,
}

/// Symmetric matrix of pairwise alignment scores. Only the upper triangle is
/// aligned; the diagonal holds self-alignment scores.
pub fn nwsa_matrix(seqs: &[Vec<u8>], s: &AlignmentScoring) -> Result<NwsaOutput> {
    s.validate()?;
    let p = seqs.len();
    if p < 2 {
        return Err(Error::invalid("alignment matrix needs at least two sequences"));
    }
    if let Some(i) = seqs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("sequence {i} is empty")));
    }
    let counter = AtomicUsize::new(0);
    let upper: Vec<Vec<i64>> = (0..p)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..p)
                .map(|j| {
                    counter.fetch_add(1, Ordering::Relaxed);
                    nwsa_score(&seqs[i], &seqs[j], s)
                })
                .collect()
        })
        .collect();
    let mut values = vec![0.0; p * p];
    for i in 0..p {
        values[i * p + i] = self_score(&seqs[i], s) as f64;
        for (off, &v) in upper[i].iter().enumerate() {
            let j = i + 1 + off;
            values[i * p + j] = v as f64;
            values[j * p + i] = v as f64;
        }
    }
    Ok(NwsaOutput {
        similarity: FeatureMatrix {
            rows: p,
            cols: p,
            values,
            kind: FeatureKind::AlignmentSimilarity,
            column_names: (0..p).map(|j| format!("packet_{j}")).collect(),
        },
        alignments: counter.into_inner(),
    })
}

/// `1 − score(i,j) / max(score(i,i), score(j,j))`, clamped at zero.
pub fn alignment_distance(sim: &FeatureMatrix) -> Vec<f64> {
    let p = sim.rows;
    let mut d = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let norm = sim.get(i, i).max(sim.get(j, j));
            d[i * p + j] = if norm > 0.0 {
                (1.0 - sim.get(i, j) / norm).max(0.0)
            } else {
                1.0
            };
        }
    }
    d
}
