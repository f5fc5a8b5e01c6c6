//! Packet feature representations.

mod lda;
mod nwsa;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::TokenCorpus;

pub use lda::{fit_lda, LdaConfig, LdaModel};
pub use nwsa::{alignment_distance, nwsa_matrix, nwsa_score, AlignmentScoring, NwsaOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    TfCounts,
    LdaPosterior,
    AlignmentSimilarity,
}

/// Dense row-major matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub kind: FeatureKind,
    pub column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["packet".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.row_iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw token counts: one row per packet, one column per vocabulary entry.
pub fn build_tf_matrix(c: &TokenCorpus) -> Result<FeatureMatrix> {
    if c.docs.is_empty() {
        return Err(Error::invalid("corpus has no documents"));
    }
    let cols = c.vocab.len();
    let mut values = vec![0.0; c.docs.len() * cols];
    for (i, doc) in c.doc_ids().iter().enumerate() {
        for &v in doc {
            values[i * cols + v] += 1.0;
        }
    }
    Ok(FeatureMatrix {
        rows: c.docs.len(),
        cols,
        values,
        kind: FeatureKind::TfCounts,
        column_names: c.vocab.clone(),
    })
}

pub fn doc_topic_features(m: &LdaModel) -> FeatureMatrix {
    FeatureMatrix {
        rows: m.docs,
        cols: m.k,
        values: m.theta.clone(),
        kind: FeatureKind::LdaPosterior,
        column_names: (0..m.k).map(|k| format!("topic_{k}")).collect(),
    }
}
