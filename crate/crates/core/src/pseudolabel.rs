//! Per-class top-k% confident pseudo-label selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zeroshot::Prediction;

pub const DEFAULT_PERCENT: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub video_id: String,
    pub label_index: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// Sorted by label index, then confidence descending, then video id.
    pub pairs: Vec<PseudoLabel>,
    pub k_percent: f64,
}

/// `ceil(k/100 * n)`, computed so exact products such as 30% of 10 do not
/// round up past the integer.
pub fn quota(k_percent: f64, n: usize) -> usize {
    let exact = k_percent * n as f64 / 100.0;
    let floor = exact.floor();
    if exact - floor <= 1e-9 * exact.max(1.0) {
        floor as usize
    } else {
        floor as usize + 1
    }
}

/// Keeps the `quota(k, n)` most confident predictions of every predicted
/// label, shared and private alike.
pub fn select_pseudo_labels(predictions: &[Prediction], k_percent: f64) -> Result<PseudoLabelSet> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidPercent(k_percent));
    }
    let mut by_label: BTreeMap<usize, Vec<&Prediction>> = BTreeMap::new();
    for p in predictions {
        by_label.entry(p.label_index).or_default().push(p);
    }
    let mut pairs = Vec::new();
    for (label, mut group) in by_label {
        group.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.video_id.cmp(&b.video_id)));
        let keep = quota(k_percent, group.len());
        pairs.extend(group.into_iter().take(keep).map(|p| PseudoLabel {
            video_id: p.video_id.clone(),
            label_index: label,
            confidence: p.confidence,
        }));
    }
    Ok(PseudoLabelSet { pairs, k_percent })
}
