//! Zero-shot classification over an extended label set, plus the three
//! baseline rejection protocols (similarity threshold, per-instance attribute
//! extension, oracle label names).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{l2_normalize, DatasetBundle, Matrix, DEGENERATE_NORM};
use crate::discovery::CandidateLabel;
use crate::error::{Error, Result};
use crate::synth::GroundTruth;
use crate::vector;

pub const DEFAULT_TEMPERATURE: f64 = 0.01;
/// Rejection threshold of the similarity-threshold baseline.
pub const DEFAULT_REJECTION_THRESHOLD: f64 = 0.9;
pub const UNKNOWN_LABEL: &str = "unknown";

pub fn cosine(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len(),
            found: w.len(),
        });
    }
    let (nv, nw) = (vector::norm(v), vector::norm(w));
    for norm in [nv, nw] {
        if norm <= DEGENERATE_NORM {
            return Err(Error::DegenerateVector { norm });
        }
    }
    Ok((vector::dot(v, w) / (nv * nw)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEmbedding {
    pub name: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateLabel {
    pub name: String,
    pub embedding: Vec<f64>,
    /// Cluster the candidate came from; `None` for oracle labels.
    pub source_cluster: Option<usize>,
    pub attributes: Vec<usize>,
}

/// Shared labels followed by private candidates. Label index `i < K` is
/// shared, `i >= K` is private.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedLabelSet {
    pub shared: Vec<LabelEmbedding>,
    pub private_candidates: Vec<PrivateLabel>,
    pub temperature: f64,
}

impl ExtendedLabelSet {
    pub fn shared_only(bundle: &DatasetBundle, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be positive")));
        }
        let shared = bundle
            .shared_labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(LabelEmbedding {
                    name: l.name.clone(),
                    embedding: l2_normalize(&bundle.label_embedding(i))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            shared,
            private_candidates: Vec::new(),
            temperature,
        })
    }

    /// Extends the shared labels with the surviving candidates. A candidate
    /// whose name repeats a shared label or an earlier candidate is dropped.
    pub fn from_candidates(bundle: &DatasetBundle, survivors: &[CandidateLabel], temperature: f64) -> Result<Self> {
        let mut set = Self::shared_only(bundle, temperature)?;
        let mut names: HashSet<String> = set.shared.iter().map(|l| l.name.clone()).collect();
        for cand in survivors {
            if !names.insert(cand.name.clone()) {
                log::debug!("candidate `{}` from cluster {} duplicates an existing label", cand.name, cand.source_cluster);
                continue;
            }
            let attributes = cand.profile.attributes();
            set.private_candidates.push(PrivateLabel {
                name: cand.name.clone(),
                embedding: compose_label_embedding(&attributes, &bundle.attribute_embeddings)?,
                source_cluster: Some(cand.source_cluster),
                attributes,
            });
        }
        Ok(set)
    }

    pub fn num_shared(&self) -> usize {
        self.shared.len()
    }

    pub fn len(&self) -> usize {
        self.shared.len() + self.private_candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self, index: usize) -> &str {
        let k = self.shared.len();
        if index < k {
            &self.shared[index].name
        } else {
            &self.private_candidates[index - k].name
        }
    }

    pub fn embedding(&self, index: usize) -> &[f64] {
        let k = self.shared.len();
        if index < k {
            &self.shared[index].embedding
        } else {
            &self.private_candidates[index - k].embedding
        }
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &[f64]> {
        self.shared
            .iter()
            .map(|l| l.embedding.as_slice())
            .chain(self.private_candidates.iter().map(|p| p.embedding.as_slice()))
    }

    /// Replaces candidate embeddings with externally computed rows (e.g.
    /// text-encoder outputs for the candidate names), one row per candidate.
    pub fn override_private_embeddings(&mut self, rows: &Matrix) -> Result<()> {
        if rows.rows() != self.private_candidates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.private_candidates.len(),
                found: rows.rows(),
            });
        }
        for (i, cand) in self.private_candidates.iter_mut().enumerate() {
            let row = vector::promote(rows.row(i));
            if row.len() != cand.embedding.len() {
                return Err(Error::DimensionMismatch {
                    expected: cand.embedding.len(),
                    found: row.len(),
                });
            }
            cand.embedding = l2_normalize(&row)?;
        }
        Ok(())
    }
}

/// Normalized mean of the given attribute embedding rows.
pub fn compose_label_embedding(attributes: &[usize], attribute_embeddings: &Matrix) -> Result<Vec<f64>> {
    if attributes.is_empty() {
        return Err(Error::EmptyProfile {
            context: "composing a label embedding".into(),
        });
    }
    let mut mean = vec![0.0; attribute_embeddings.cols()];
    for &a in attributes {
        if a >= attribute_embeddings.rows() {
            return Err(Error::InvalidConfig(format!(
                "attribute {a} outside vocabulary of {}",
                attribute_embeddings.rows()
            )));
        }
        for (m, &x) in mean.iter_mut().zip(attribute_embeddings.row(a)) {
            *m += f64::from(x);
        }
    }
    let n = attributes.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    l2_normalize(&mean)
}

fn cosines<'a>(v: &[f64], labels: impl Iterator<Item = &'a [f64]>) -> Result<Vec<f64>> {
    labels.map(|w| cosine(v, w)).collect()
}

fn softmax(cos: &[f64], temperature: f64) -> Vec<f64> {
    let max = cos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cos.iter().map(|c| ((c - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax over the cosine similarity to every label.
pub fn softmax_scores(video: &[f64], labels: &ExtendedLabelSet) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidConfig("empty label set".into()));
    }
    Ok(softmax(&cosines(video, labels.embeddings())?, labels.temperature))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub label_index: usize,
    pub label_name: String,
    pub confidence: f64,
    pub is_private: bool,
}

/// Most similar label; ties go to the lowest index.
pub fn predict(video_id: &str, video: &[f64], labels: &ExtendedLabelSet) -> Result<Prediction> {
    if labels.is_empty() {
        return Err(Error::InvalidConfig("empty label set".into()));
    }
    let cos = cosines(video, labels.embeddings())?;
    let best = argmax(&cos);
    let probs = softmax(&cos, labels.temperature);
    Ok(Prediction {
        video_id: video_id.to_string(),
        label_index: best,
        label_name: labels.name(best).to_string(),
        confidence: probs[best],
        is_private: best >= labels.num_shared(),
    })
}

/// Closed-set argmax over shared labels, rejected as unknown when the best
/// cosine falls below `threshold`. Rejections get label index `K`.
pub fn baseline_threshold_predict(
    video_id: &str,
    video: &[f64],
    shared: &ExtendedLabelSet,
    threshold: f64,
) -> Result<Prediction> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig(format!("threshold {threshold} is outside [-1, 1]")));
    }
    let cos = cosines(video, shared.shared.iter().map(|l| l.embedding.as_slice()))?;
    let best = argmax(&cos);
    let probs = softmax(&cos, shared.temperature);
    let rejected = cos[best] < threshold;
    Ok(Prediction {
        video_id: video_id.to_string(),
        label_index: if rejected { shared.num_shared() } else { best },
        label_name: if rejected {
            UNKNOWN_LABEL.to_string()
        } else {
            shared.shared[best].name.clone()
        },
        confidence: probs[best],
        is_private: rejected,
    })
}

/// Extends the shared labels with each of the video's own attributes as a
/// one-token candidate, then takes the argmax. With no usable attributes
/// this is the closed-set argmax.
pub fn baseline_instance_extension_predict(
    video_id: &str,
    video: &[f64],
    video_attributes: &[usize],
    bundle: &DatasetBundle,
    shared: &ExtendedLabelSet,
) -> Result<Prediction> {
    let mut labels = ExtendedLabelSet {
        shared: shared.shared.clone(),
        private_candidates: Vec::new(),
        temperature: shared.temperature,
    };
    let mut names: HashSet<&str> = labels.shared.iter().map(|l| l.name.as_str()).collect();
    for &a in video_attributes {
        let token = bundle.attribute_vocab[a].as_str();
        if !names.insert(token) {
            continue;
        }
        labels.private_candidates.push(PrivateLabel {
            name: token.to_string(),
            embedding: compose_label_embedding(&[a], &bundle.attribute_embeddings)?,
            source_cluster: None,
            attributes: vec![a],
        });
    }
    predict(video_id, video, &labels)
}

/// Shared labels plus the true private classes, embedded by their prototypes.
pub fn oracle_extend(
    shared: &ExtendedLabelSet,
    ground_truth: Option<&GroundTruth>,
) -> Result<ExtendedLabelSet> {
    let truth = ground_truth.ok_or(Error::GroundTruthUnavailable)?;
    if truth.private_prototypes.is_empty() {
        return Err(Error::GroundTruthUnavailable);
    }
    let mut set = ExtendedLabelSet {
        shared: shared.shared.clone(),
        private_candidates: Vec::new(),
        temperature: shared.temperature,
    };
    for (name, proto) in &truth.private_prototypes {
        set.private_candidates.push(PrivateLabel {
            name: name.clone(),
            embedding: l2_normalize(proto)?,
            source_cluster: None,
            attributes: truth.salient_attributes.get(name).cloned().unwrap_or_default(),
        });
    }
    Ok(set)
}
