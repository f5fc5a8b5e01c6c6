//! Capture ingestion, lower-layer stripping, header extraction and dataset
//! construction.

pub mod build;
mod dissect;
mod pcap;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dissect::{
    extract_header, strip_lower_layers, ETHERTYPE_IPV4, ETHERTYPE_IPV6, IPPROTO_TCP, IPPROTO_UDP,
};
pub use pcap::{encode_pcap, load_pcap, parse_pcap, write_pcap, ByteOrder};

pub const DEFAULT_DATASET_CAP: usize = 200;
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkType {
    Ethernet,
    Ieee80211,
    Ppp,
    Raw,
}

impl LinkType {
    /// Maps a pcap `network` field. Unrecognised link types are treated as raw.
    pub fn from_dlt(dlt: u32) -> Self {
        match dlt {
            1 => LinkType::Ethernet,
            105 => LinkType::Ieee80211,
            9 => LinkType::Ppp,
            _ => LinkType::Raw,
        }
    }

    pub fn dlt(self) -> u32 {
        match self {
            LinkType::Ethernet => 1,
            LinkType::Ieee80211 => 105,
            LinkType::Ppp => 9,
            LinkType::Raw => 101,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OsiLayer {
    Link,
    Transport,
    Application,
}

impl std::str::FromStr for OsiLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "link" => Ok(OsiLayer::Link),
            "transport" => Ok(OsiLayer::Transport),
            "application" | "app" => Ok(OsiLayer::Application),
            other => Err(Error::invalid(format!("unknown layer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OsiLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OsiLayer::Link => "link",
            OsiLayer::Transport => "transport",
            OsiLayer::Application => "application",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub bytes: Vec<u8>,
    /// Microseconds since the epoch.
    pub capture_ts: u64,
    pub link_type: LinkType,
    pub truth_label: Option<String>,
}

impl RawPacket {
    pub fn new(bytes: Vec<u8>, link_type: LinkType) -> Self {
        RawPacket {
            bytes,
            capture_ts: 0,
            link_type,
            truth_label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.truth_label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub osi_target: OsiLayer,
    pub packets: Vec<RawPacket>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, osi_target: OsiLayer, packets: Vec<RawPacket>) -> Self {
        Dataset {
            name: name.into(),
            osi_target,
            packets,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        !self.packets.is_empty() && self.packets.iter().all(|p| p.truth_label.is_some())
    }

    /// Ground-truth labels as class indices (classes in lexicographic order),
    /// or `None` when any packet is unlabeled.
    pub fn truth(&self) -> Option<(Vec<usize>, Vec<String>)> {
        if !self.is_labeled() {
            return None;
        }
        let mut classes: Vec<String> = self
            .packets
            .iter()
            .filter_map(|p| p.truth_label.clone())
            .collect();
        classes.sort();
        classes.dedup();
        let idx = self
            .packets
            .iter()
            .map(|p| {
                let l = p.truth_label.as_ref().unwrap();
                classes.binary_search(l).unwrap()
            })
            .collect();
        Some((idx, classes))
    }
}

/// Candidate unknown-protocol header cut from a stripped payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderSlice {
    pub bytes: Vec<u8>,
    /// Index of the packet within its dataset.
    pub origin: usize,
    pub declared_len: usize,
}

/// Reads a `packet_index,label` sidecar and attaches labels in place.
pub fn attach_labels(packets: &mut [RawPacket], path: impl AsRef<Path>) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "packet_index" || &headers[1] != "label" {
        return Err(Error::invalid(
            "label file must have header row 'packet_index,label'",
        ));
    }
    for rec in rdr.records() {
        let rec = rec?;
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::invalid(format!("bad packet index '{}'", &rec[0])))?;
        let count = packets.len();
        let p = packets.get_mut(idx).ok_or_else(|| {
            Error::invalid(format!(
                "label for packet {idx} but capture has {count} packets"
            ))
        })?;
        p.truth_label = Some(rec[1].to_string());
    }
    Ok(())
}

pub fn write_labels(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["packet_index", "label"])?;
    for (i, p) in packets.iter().enumerate() {
        if let Some(l) = &p.truth_label {
            w.write_record([i.to_string().as_str(), l.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Largest-remainder apportionment of `cap` over the given supports with a
/// floor of one per stratum and a ceiling of the stratum's support.
pub fn apportion(supports: &[usize], cap: usize) -> Result<Vec<usize>> {
    let total: usize = supports.iter().sum();
    if supports.iter().any(|&s| s == 0) {
        return Err(Error::invalid("every stratum needs at least one member"));
    }
    if cap < supports.len() {
        return Err(Error::invalid(format!(
            "cap {cap} is smaller than the {} labels present",
            supports.len()
        )));
    }
    if total <= cap {
        return Ok(supports.to_vec());
    }
    let exact: Vec<f64> = supports
        .iter()
        .map(|&s| cap as f64 * s as f64 / total as f64)
        .collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(supports)
        .map(|(&q, &s)| (q.floor() as usize).max(1).min(s))
        .collect();
    let remainder = |i: usize| exact[i] - exact[i].floor();

    let mut order: Vec<usize> = (0..supports.len()).collect();
    let assigned: usize = quota.iter().sum();
    if assigned < cap {
        order.sort_by(|&a, &b| remainder(b).total_cmp(&remainder(a)).then(a.cmp(&b)));
        let mut left = cap - assigned;
        while left > 0 {
            let before = left;
            for &i in &order {
                if left == 0 {
                    break;
                }
                if quota[i] < supports[i] {
                    quota[i] += 1;
                    left -= 1;
                }
            }
            if before == left {
                break;
            }
        }
    } else if assigned > cap {
        // min-1 floors overshot; take back from the strata with the smallest
        // remainders that can spare one
        order.sort_by(|&a, &b| remainder(a).total_cmp(&remainder(b)).then(a.cmp(&b)));
        let mut excess = assigned - cap;
        while excess > 0 {
            let before = excess;
            for &i in &order {
                if excess == 0 {
                    break;
                }
                if quota[i] > 1 {
                    quota[i] -= 1;
                    excess -= 1;
                }
            }
            if before == excess {
                break;
            }
        }
    }
    Ok(quota)
}

/// Stratified sample of at most `cap` labeled packets. Output keeps the
/// original packet order.
pub fn stratified_sample(
    packets: &[RawPacket],
    cap: usize,
    seed: u64,
    name: &str,
    osi_target: OsiLayer,
) -> Result<Dataset> {
    if let Some(i) = packets.iter().position(|p| p.truth_label.is_none()) {
        return Err(Error::invalid(format!("packet {i} has no label")));
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in packets.iter().enumerate() {
        strata
            .entry(p.truth_label.as_deref().unwrap())
            .or_default()
            .push(i);
    }
    let supports: Vec<usize> = strata.values().map(Vec::len).collect();
    let quotas = apportion(&supports, cap)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(cap.min(packets.len()));
    for (members, &q) in strata.values().zip(&quotas) {
        if q == members.len() {
            chosen.extend_from_slice(members);
        } else {
            chosen.extend(index::sample(&mut rng, members.len(), q).iter().map(|j| members[j]));
        }
    }
    chosen.sort_unstable();
    Ok(Dataset::new(
        name,
        osi_target,
        chosen.into_iter().map(|i| packets[i].clone()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadClass {
    Textual,
    Binary,
}

fn is_text_byte(b: u8) -> bool {
    (0x20..=0x7e).contains(&b) || matches!(b, 0x09 | 0x0a | 0x0d)
}

pub fn printable_ratio(bytes: &[u8]) -> f64 {
    if bytes.is_empty() {
        return 0.0;
    }
    bytes.iter().filter(|&&b| is_text_byte(b)).count() as f64 / bytes.len() as f64
}

/// Classifies application payloads as textual when the median printable
/// ratio reaches `threshold`. Packets that fail to strip count as ratio 0.
pub fn detect_text_protocol(d: &Dataset, threshold: f64) -> PayloadClass {
    let mut ratios: Vec<f64> = d
        .packets
        .iter()
        .map(|p| {
            strip_lower_layers(p, d.osi_target)
                .map(|b| printable_ratio(&b))
                .unwrap_or(0.0)
        })
        .collect();
    if ratios.is_empty() {
        return PayloadClass::Binary;
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    let median = if n % 2 == 1 {
        ratios[n / 2]
    } else {
        (ratios[n / 2 - 1] + ratios[n / 2]) / 2.0
    };
    if median >= threshold {
        PayloadClass::Textual
    } else {
        PayloadClass::Binary
    }
}
