//! Open-set evaluation: ALL, OS*, UNK and HOS.
//!
//! This is the only module that reads the held-out labels of target videos.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::zeroshot::Prediction;

/// Sample counts behind the percentages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub total: usize,
    pub correct: usize,
    pub known: usize,
    pub known_correct: usize,
    pub unknown: usize,
    pub unknown_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetMetrics {
    pub all: f64,
    pub os_star: f64,
    pub unk: f64,
    pub hos: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    pub counts: MetricCounts,
}

/// Harmonic mean of OS* and UNK; 0 when both are 0.
pub fn hos(os_star: f64, unk: f64) -> f64 {
    let sum = os_star + unk;
    if sum > 0.0 {
        2.0 * os_star * unk / sum
    } else {
        0.0
    }
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

/// Scores predictions against true classes. Any class outside
/// `shared_names` counts as unknown, and an unknown sample is correct when it
/// was assigned any private label. UNK is 0 when there are no unknown samples.
pub fn evaluate(
    predictions: &[Prediction],
    ground_truth: &BTreeMap<String, String>,
    shared_names: &[String],
) -> Result<OpenSetMetrics> {
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let shared: HashSet<&str> = shared_names.iter().map(String::as_str).collect();
    let mut counts = MetricCounts::default();
    let mut per_class: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in predictions {
        let truth = ground_truth
            .get(&p.video_id)
            .ok_or_else(|| Error::MissingGroundTruth {
                video_id: p.video_id.clone(),
            })?;
        counts.total += 1;
        if shared.contains(truth.as_str()) {
            let correct = !p.is_private && p.label_name == *truth;
            counts.known += 1;
            counts.known_correct += usize::from(correct);
            counts.correct += usize::from(correct);
            let entry = per_class.entry(truth.as_str()).or_default();
            entry.0 += 1;
            entry.1 += usize::from(correct);
        } else {
            counts.unknown += 1;
            counts.unknown_correct += usize::from(p.is_private);
            counts.correct += usize::from(p.is_private);
        }
    }
    let per_class_accuracy: BTreeMap<String, f64> = per_class
        .iter()
        .map(|(name, &(n, c))| (name.to_string(), percent(c, n)))
        .collect();
    let os_star = if per_class_accuracy.is_empty() {
        0.0
    } else {
        per_class_accuracy.values().sum::<f64>() / per_class_accuracy.len() as f64
    };
    let unk = percent(counts.unknown_correct, counts.unknown);
    Ok(OpenSetMetrics {
        all: percent(counts.correct, counts.total),
        os_star,
        unk,
        hos: hos(os_star, unk),
        per_class_accuracy,
        counts,
    })
}

/// True classes of the bundle's target videos, for bundles that carry them.
pub fn ground_truth_from_bundle(bundle: &DatasetBundle) -> Option<BTreeMap<String, String>> {
    bundle
        .targets()
        .map(|v| v.held_out_label().map(|l| (v.id.clone(), l.to_string())))
        .collect()
}

/// Fixed-width table with columns ALL, OS*, UNK, HOS. `None` rows print n/a.
pub fn format_table(rows: &[(String, Option<OpenSetMetrics>)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$} {:>7} {:>7} {:>7} {:>7}\n", "method", "ALL", "OS*", "UNK", "HOS");
    for (name, metrics) in rows {
        match metrics {
            Some(m) => writeln!(
                out,
                "{name:<width$} {:>7.1} {:>7.1} {:>7.1} {:>7.1}",
                m.all, m.os_star, m.unk, m.hos
            ),
            None => writeln!(out, "{name:<width$} {:>7} {:>7} {:>7} {:>7}", "n/a", "n/a", "n/a", "n/a"),
        }
        .expect("writing to a String");
    }
    out
}
