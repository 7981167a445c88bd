//! Attribute documents, tf-idf filtered profiles and candidate label names.
//!
//! Source classes and target clusters are scored as two separate tf-idf
//! corpora. Within a corpus, `tf = count / document total` and
//! `idf = ln(N / document frequency)` with the natural logarithm.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::dataset::{DatasetBundle, VideoRecord};
use crate::error::{Error, Result};

pub const DEFAULT_TFIDF_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ARGTOP_K: usize = 20;

/// Who an attribute document or profile describes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Owner {
    Class(String),
    Cluster(usize),
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Owner::Class(name) => write!(f, "class `{name}`"),
            Owner::Cluster(c) => write!(f, "cluster {c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDocument {
    pub owner: Owner,
    pub counts: BTreeMap<usize, u32>,
}

impl AttributeDocument {
    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub attribute: usize,
    pub score: f64,
}

/// Distinct attributes of one owner, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub owner: Owner,
    pub entries: Vec<ProfileEntry>,
}

impl AttributeProfile {
    pub fn attributes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.attribute).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLabel {
    /// Profile tokens joined by single spaces.
    pub name: String,
    pub profile: AttributeProfile,
    pub source_cluster: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryParams {
    /// Attributes kept per video.
    pub m: usize,
    /// Maximum profile length.
    pub t: usize,
    /// Frequency cut applied before tf-idf.
    pub argtop_k: usize,
    pub threshold: f64,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        Self {
            m: 5,
            t: 3,
            argtop_k: DEFAULT_ARGTOP_K,
            threshold: DEFAULT_TFIDF_THRESHOLD,
        }
    }
}

impl DiscoveryParams {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.t == 0 || self.argtop_k == 0 {
            return Err(Error::InvalidConfig("m, t and argtop_k must be positive".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidConfig("tf-idf threshold must be finite".into()));
        }
        Ok(())
    }
}

/// The `m` most frequent attributes across a video's frames. Ties go to the
/// attribute with the best (lowest) rank in any frame, then the lower index.
pub fn video_attributes(record: &VideoRecord, m: usize) -> Vec<usize> {
    // attribute -> (count, best rank)
    let mut stats: HashMap<usize, (u32, usize)> = HashMap::new();
    for frame in &record.frames {
        for (rank, &a) in frame.iter().enumerate() {
            let entry = stats.entry(a).or_insert((0, rank));
            entry.0 += 1;
            entry.1 = entry.1.min(rank);
        }
    }
    let mut ranked: Vec<(usize, u32, usize)> = stats.into_iter().map(|(a, (c, r))| (a, c, r)).collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.2.cmp(&y.2)).then(x.0.cmp(&y.0)));
    ranked.into_iter().take(m).map(|(a, _, _)| a).collect()
}

/// How videos are grouped into documents.
#[derive(Debug, Clone, Copy)]
pub enum Grouping<'a> {
    /// One document per class name, membership by source label.
    Classes(&'a [String]),
    /// One document per cluster; `videos[i]` belongs to `assignments[i]`.
    Clusters(&'a ClusterModel),
}

/// Aggregates per-video attributes into one document per group. A group
/// with no members yields a document with empty counts.
pub fn build_documents(videos: &[&VideoRecord], grouping: Grouping<'_>, m: usize) -> Result<Vec<AttributeDocument>> {
    let mut docs: Vec<AttributeDocument>;
    match grouping {
        Grouping::Classes(names) => {
            docs = names
                .iter()
                .map(|n| AttributeDocument {
                    owner: Owner::Class(n.clone()),
                    counts: BTreeMap::new(),
                })
                .collect();
            let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            for v in videos {
                let label = v.source_label().ok_or_else(|| {
                    Error::InvalidConfig(format!("video `{}` has no source label to group by", v.id))
                })?;
                let &g = index.get(label).ok_or_else(|| {
                    Error::InvalidConfig(format!("video `{}` label `{label}` is not a grouping class", v.id))
                })?;
                add_video(&mut docs[g], v, m);
            }
        }
        Grouping::Clusters(model) => {
            if model.assignments.len() != videos.len() {
                return Err(Error::DimensionMismatch {
                    expected: model.assignments.len(),
                    found: videos.len(),
                });
            }
            docs = (0..model.num_clusters())
                .map(|c| AttributeDocument {
                    owner: Owner::Cluster(c),
                    counts: BTreeMap::new(),
                })
                .collect();
            for (v, &c) in videos.iter().zip(&model.assignments) {
                add_video(&mut docs[c], v, m);
            }
        }
    }
    Ok(docs)
}

fn add_video(doc: &mut AttributeDocument, video: &VideoRecord, m: usize) {
    for a in video_attributes(video, m) {
        *doc.counts.entry(a).or_insert(0) += 1;
    }
}

/// tf-idf of every attribute present in each document; entry `i` of the
/// result belongs to `documents[i]`. Absent attributes have no entry.
pub fn tfidf_scores(documents: &[AttributeDocument]) -> Vec<BTreeMap<usize, f64>> {
    let n = documents.len() as f64;
    let mut document_frequency: HashMap<usize, usize> = HashMap::new();
    for doc in documents {
        for &a in doc.counts.keys() {
            *document_frequency.entry(a).or_insert(0) += 1;
        }
    }
    documents
        .iter()
        .map(|doc| {
            let total = doc.total() as f64;
            doc.counts
                .iter()
                .map(|(&a, &count)| {
                    let tf = f64::from(count) / total;
                    let idf = (n / document_frequency[&a] as f64).ln();
                    (a, tf * idf)
                })
                .collect()
        })
        .collect()
}

fn profile_order(a: &(usize, u32, f64), b: &(usize, u32, f64)) -> Ordering {
    b.2.total_cmp(&a.2).then(b.1.cmp(&a.1)).then(a.0.cmp(&b.0))
}

/// Keeps the `argtop_k` most frequent attributes, then those scoring at least
/// `threshold`, ordered by (score desc, count desc, index asc) and cut to `t`.
/// When nothing clears the threshold the best `t` of the frequency cut are
/// kept instead, so a profile is never empty.
pub fn filter_profile(
    document: &AttributeDocument,
    scores: &BTreeMap<usize, f64>,
    threshold: f64,
    t: usize,
    argtop_k: usize,
) -> Result<AttributeProfile> {
    if document.counts.is_empty() {
        return Err(Error::EmptyDocument {
            owner: document.owner.to_string(),
        });
    }
    let mut frequent: Vec<(usize, u32, f64)> = document
        .counts
        .iter()
        .map(|(&a, &c)| (a, c, scores.get(&a).copied().unwrap_or(0.0)))
        .collect();
    frequent.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    frequent.truncate(argtop_k);

    let mut kept: Vec<_> = frequent.iter().copied().filter(|e| e.2 >= threshold).collect();
    if kept.is_empty() {
        kept = frequent;
    }
    kept.sort_by(profile_order);
    kept.truncate(t);
    Ok(AttributeProfile {
        owner: document.owner.clone(),
        entries: kept
            .into_iter()
            .map(|(attribute, _, score)| ProfileEntry { attribute, score })
            .collect(),
    })
}

pub fn candidate_name(profile: &AttributeProfile, vocab: &[String]) -> String {
    profile
        .entries
        .iter()
        .map(|e| vocab[e.attribute].as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub candidates: Vec<CandidateLabel>,
    /// Clusters skipped because their document was empty.
    pub skipped: Vec<usize>,
}

/// One candidate label per nonempty cluster, in cluster order.
pub fn discover_candidates(
    targets: &[&VideoRecord],
    model: &ClusterModel,
    vocab: &[String],
    params: &DiscoveryParams,
) -> Result<Discovery> {
    params.validate()?;
    let documents = build_documents(targets, Grouping::Clusters(model), params.m)?;
    let scores = tfidf_scores(&documents);
    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for (c, (doc, doc_scores)) in documents.iter().zip(&scores).enumerate() {
        match filter_profile(doc, doc_scores, params.threshold, params.t, params.argtop_k) {
            Ok(profile) => candidates.push(CandidateLabel {
                name: candidate_name(&profile, vocab),
                profile,
                source_cluster: c,
            }),
            Err(Error::EmptyDocument { .. }) => {
                log::warn!("cluster {c} has no attributes; no candidate label");
                skipped.push(c);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Discovery { candidates, skipped })
}

/// Profiles of every shared class, scored as their own corpus.
pub fn source_profiles(bundle: &DatasetBundle, params: &DiscoveryParams) -> Result<Vec<AttributeProfile>> {
    params.validate()?;
    let names = bundle.shared_label_names();
    let sources: Vec<&VideoRecord> = bundle.sources().collect();
    let documents = build_documents(&sources, Grouping::Classes(&names), params.m)?;
    let scores = tfidf_scores(&documents);
    documents
        .iter()
        .zip(&scores)
        .map(|(doc, s)| filter_profile(doc, s, params.threshold, params.t, params.argtop_k))
        .collect()
}
