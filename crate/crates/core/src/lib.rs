//! Open-set label discovery over precomputed embedding bundles.
//!
//! The engine clusters unlabelled target videos, mines per-cluster attribute
//! profiles with tf-idf, composes candidate class names from them, prunes the
//! candidates that match a known source class, and classifies target videos
//! zero-shot over the resulting extended label set. A linear adapter trained
//! with a symmetric KL contrastive loss stands in for encoder fine-tuning, and
//! the open-set metrics (ALL, OS*, UNK, HOS) score the result.
//!
//! Every stage works on a [`dataset::DatasetBundle`]; no model inference
//! happens here.

pub mod adapter;
pub mod clustering;
pub mod dataset;
pub mod discovery;
mod error;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod pseudolabel;
pub mod rng;
pub mod synth;
pub mod vector;
pub mod zeroshot;

pub use error::{Error, Result};
