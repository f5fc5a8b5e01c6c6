use std::io;

use thiserror::Error;

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Capture,
    Strip,
    Extract,
    Tokenize,
    Features,
    Optimize,
    Cluster,
    Metrics,
    Pipeline,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Capture => "capture",
            Stage::Strip => "strip",
            Stage::Extract => "extract",
            Stage::Tokenize => "tokenize",
            Stage::Features => "features",
            Stage::Optimize => "optimize",
            Stage::Cluster => "cluster",
            Stage::Metrics => "metrics",
            Stage::Pipeline => "pipeline",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("pcap format error: {0}")]
    Format(String),

    #[error("pcap record {index} is truncated: {detail}")]
    TruncatedRecord { index: usize, detail: String },

    #[error("packet too short for {layer} header: need {needed} bytes, have {available}")]
    Strip {
        layer: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("unsupported encapsulation: {0}")]
    Unsupported(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{stage} stage failed{}: {source}", packet_note(packets))]
    AtStage {
        stage: Stage,
        packets: Vec<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Wraps `self` with the stage name and the packet indices involved.
    pub fn at(self, stage: Stage, packets: Vec<usize>) -> Self {
        match self {
            e @ Error::AtStage { .. } => e,
            e => Error::AtStage {
                stage,
                packets,
                source: Box::new(e),
            },
        }
    }
}

fn packet_note(packets: &[usize]) -> String {
    match packets.len() {
        0 => String::new(),
        1..=20 => format!(" (packets {packets:?})"),
        n => format!(" ({n} packets, first {:?})", &packets[..20]),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
