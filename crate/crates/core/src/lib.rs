//! Unsupervised clustering of packets from unknown protocols by message
//! format.
//!
//! The pipeline strips known lower layers from captured packets, cuts a
//! candidate header, tokenizes it (byte n-grams or bit-congruence fields),
//! builds features (term counts, LDA topic posteriors or pairwise alignment
//! scores) and clusters them with UPGMA or k-means. Header length and LDA
//! topic size are chosen automatically; results can be scored against
//! ground truth with ARI, FMS, AMI and majority-vote accuracy.

pub mod capture;
pub mod cluster;
pub mod error;
pub mod features;
pub mod hybrid;
pub mod metrics;
pub mod optimize;
pub mod synth;
pub mod tokenize;

pub use error::{Error, Result, Stage};
