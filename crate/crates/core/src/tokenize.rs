//! Header tokenization: overlapping byte n-grams, or fields found by
//! bit-congruence segmentation.
//!
//! Tokens are lowercase hex strings, two characters per byte.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::capture::HeaderSlice;
use crate::error::{Error, Result};

pub const DEFAULT_GRAM_BYTES: usize = 3;
pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_MAX_FIELD: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMethod {
    Ngram,
    Field,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenCorpus {
    pub docs: Vec<Vec<String>>,
    /// Distinct tokens in order of first appearance.
    pub vocab: Vec<String>,
    pub method: TokenMethod,
}

impl TokenCorpus {
    pub fn from_docs(docs: Vec<Vec<String>>, method: TokenMethod) -> Self {
        let mut seen = HashMap::new();
        let mut vocab = Vec::new();
        for t in docs.iter().flatten() {
            if !seen.contains_key(t) {
                seen.insert(t.clone(), vocab.len());
                vocab.push(t.clone());
            }
        }
        TokenCorpus { docs, vocab, method }
    }

    /// Documents as vocabulary indices.
    pub fn doc_ids(&self) -> Vec<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        self.docs
            .iter()
            .map(|d| d.iter().map(|t| index[t.as_str()]).collect())
            .collect()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

pub fn to_hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for &b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 0xf) as usize] as char);
    }
    s
}

pub fn from_hex(s: &str) -> Result<Vec<u8>> {
    if s.len() % 2 != 0 {
        return Err(Error::invalid(format!("odd-length hex string '{s}'")));
    }
    (0..s.len())
        .step_by(2)
        .map(|i| {
            u8::from_str_radix(&s[i..i + 2], 16)
                .map_err(|_| Error::invalid(format!("bad hex in '{s}'")))
        })
        .collect()
}

/// Sliding window of `gram_bytes` bytes with stride one. A header shorter
/// than the window becomes a single token.
pub fn ngram_tokenize(bytes: &[u8], gram_bytes: usize) -> Result<Vec<String>> {
    if gram_bytes == 0 {
        return Err(Error::invalid("gram size must be at least 1 byte"));
    }
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() < gram_bytes {
        return Ok(vec![to_hex(bytes)]);
    }
    Ok(bytes.windows(gram_bytes).map(to_hex).collect())
}

/// Fraction of equal bit positions between each pair of consecutive bytes.
pub fn bit_congruence(payload: &[u8]) -> Result<Vec<f64>> {
    if payload.len() < 2 {
        return Err(Error::invalid("bit congruence needs at least 2 bytes"));
    }
    Ok(payload
        .windows(2)
        .map(|w| (8 - (w[0] ^ w[1]).count_ones()) as f64 / 8.0)
        .collect())
}

/// Gaussian smoothing with a kernel truncated at radius ⌈3σ⌉; weights are
/// renormalized where the kernel overhangs the ends of the series.
pub fn gaussian_smooth(series: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let n = series.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (k, w) in (-radius..=radius).zip(&kernel) {
                let j = i + k;
                if (0..n).contains(&j) {
                    acc += w * series[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}

/// Field boundaries as exclusive end offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldBoundaries {
    pub cut_points: Vec<usize>,
}

impl FieldBoundaries {
    pub fn validate(&self, len: usize) -> Result<()> {
        let Some(&last) = self.cut_points.last() else {
            return Err(Error::invalid("boundary list is empty"));
        };
        if last != len {
            return Err(Error::invalid(format!(
                "last boundary {last} does not match payload length {len}"
            )));
        }
        let mut prev = 0;
        for &c in &self.cut_points {
            if c <= prev {
                return Err(Error::invalid("boundaries must be strictly increasing"));
            }
            prev = c;
        }
        Ok(())
    }
}

/// Segments a payload at local extrema of the smoothed bit-congruence delta.
///
/// With `c` the congruence series and `s` its smoothing, `delta[i] =
/// s[i+1] - s[i]` spans bytes `i..=i+2`. A field ends before byte `i + 1`
/// where the delta turns from non-negative to negative, or where `|delta[i]|`
/// exceeds the mean absolute delta. Fields longer than `max_field` are split.
pub fn nemesys_boundaries(payload: &[u8], sigma: f64, max_field: usize) -> Result<FieldBoundaries> {
    if payload.is_empty() {
        return Err(Error::invalid("cannot segment an empty payload"));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if max_field == 0 {
        return Err(Error::invalid("max field length must be at least 1"));
    }
    let n = payload.len();
    let mut cuts = Vec::new();
    if n >= 3 {
        let smoothed = gaussian_smooth(&bit_congruence(payload)?, sigma);
        let delta: Vec<f64> = smoothed.windows(2).map(|w| w[1] - w[0]).collect();
        let mean_abs = delta.iter().map(|d| d.abs()).sum::<f64>() / delta.len() as f64;
        for i in 0..delta.len() {
            let turns_down = i > 0 && delta[i - 1] >= 0.0 && delta[i] < 0.0;
            if turns_down || delta[i].abs() > mean_abs {
                cuts.push(i + 1);
            }
        }
    }
    cuts.push(n);
    cuts.dedup();

    let mut out = Vec::with_capacity(cuts.len());
    let mut start = 0;
    for c in cuts {
        while c - start > max_field {
            start += max_field;
            out.push(start);
        }
        out.push(c);
        start = c;
    }
    Ok(FieldBoundaries { cut_points: out })
}

/// One hex token per field.
pub fn field_tokenize(bytes: &[u8], b: &FieldBoundaries) -> Result<Vec<String>> {
    b.validate(bytes.len())?;
    let mut start = 0;
    Ok(b
        .cut_points
        .iter()
        .map(|&end| {
            let t = to_hex(&bytes[start..end]);
            start = end;
            t
        })
        .collect())
}

/// Tokenizer settings shared by the corpus builders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub gram_bytes: usize,
    pub sigma: f64,
    pub max_field: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            gram_bytes: DEFAULT_GRAM_BYTES,
            sigma: DEFAULT_SIGMA,
            max_field: DEFAULT_MAX_FIELD,
        }
    }
}

pub fn tokenize_headers(
    headers: &[HeaderSlice],
    method: TokenMethod,
    cfg: &TokenizerConfig,
) -> Result<TokenCorpus> {
    use rayon::prelude::*;
    let docs = headers
        .par_iter()
        .map(|h| match method {
            TokenMethod::Ngram => ngram_tokenize(&h.bytes, cfg.gram_bytes),
            TokenMethod::Field => {
                if h.bytes.is_empty() {
                    return Ok(Vec::new());
                }
                let b = nemesys_boundaries(&h.bytes, cfg.sigma, cfg.max_field)?;
                field_tokenize(&h.bytes, &b)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenCorpus::from_docs(docs, method))
}
