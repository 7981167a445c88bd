//! Position-weighted attribute-set similarity and pruning of candidates that
//! duplicate a known source class.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::discovery::{AttributeProfile, CandidateLabel};
use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;

/// `n` weights falling linearly from 1 to 0; a single weight is 1.
pub fn position_weights(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let span = (n - 1) as f64;
            (0..n).map(|i| (n - 1 - i) as f64 / span).collect()
        }
    }
}

/// Similarity of `target` to `source`, in `[0, 1]`.
///
/// Each attribute the profiles share contributes the weight indexed by the
/// distance between its two positions, using weights sized to the source
/// profile. Distances past the last weight contribute 0. The sum is divided
/// by the source length, so the score is not symmetric.
pub fn attribute_sim(source: &AttributeProfile, target: &AttributeProfile) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyProfile {
            context: format!("comparing {} with {}", source.owner, target.owner),
        });
    }
    let weights = position_weights(source.len());
    let target_position: HashMap<usize, usize> = target
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.attribute, i))
        .collect();
    let score: f64 = source
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| target_position.get(&e.attribute).map(|&j| i.abs_diff(j)))
        .map(|distance| weights.get(distance).copied().unwrap_or(0.0))
        .sum();
    Ok(score / source.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    /// `values[i][j]`: source class `i` against candidate `j`.
    pub values: Vec<Vec<f64>>,
    pub row_labels: Vec<String>,
    /// Cluster index of each candidate column.
    pub col_labels: Vec<usize>,
}

pub fn build_similarity_matrix(
    source_profiles: &[AttributeProfile],
    candidates: &[CandidateLabel],
) -> Result<SimilarityMatrix> {
    if source_profiles.is_empty() {
        return Err(Error::InvalidConfig("no source profiles to match against".into()));
    }
    let values = source_profiles
        .iter()
        .enumerate()
        .map(|(i, source)| {
            candidates
                .iter()
                .enumerate()
                .map(|(j, cand)| {
                    attribute_sim(source, &cand.profile).map_err(|e| match e {
                        Error::EmptyProfile { context } => Error::EmptyProfile {
                            context: format!("row {i}, column {j}: {context}"),
                        },
                        other => other,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMatrix {
        values,
        row_labels: source_profiles.iter().map(|p| p.owner.to_string()).collect(),
        col_labels: candidates.iter().map(|c| c.source_cluster).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrunedPair {
    pub column: usize,
    pub row: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Candidates that matched no source class, in column order.
    pub survivors: Vec<CandidateLabel>,
    /// Every (candidate, source) pair at or above gamma.
    pub pruned: Vec<PrunedPair>,
}

/// A score matches when it reaches gamma. A zero score shares no weighted
/// attribute and never matches, even at gamma 0.
fn is_match(score: f64, gamma: f64) -> bool {
    score > 0.0 && score >= gamma
}

/// Survivor columns: candidate `j` is dropped iff some row matches.
pub fn surviving_columns(matrix: &SimilarityMatrix, gamma: f64) -> Vec<usize> {
    let cols = matrix.col_labels.len();
    (0..cols)
        .filter(|&j| !matrix.values.iter().any(|row| is_match(row[j], gamma)))
        .collect()
}

pub fn match_and_prune(matrix: &SimilarityMatrix, gamma: f64, candidates: &[CandidateLabel]) -> Result<MatchOutcome> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma {gamma} is outside [0, 1]")));
    }
    if candidates.len() != matrix.col_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: matrix.col_labels.len(),
            found: candidates.len(),
        });
    }
    let mut pruned = Vec::new();
    for (i, row) in matrix.values.iter().enumerate() {
        for (j, &score) in row.iter().enumerate() {
            if is_match(score, gamma) {
                pruned.push(PrunedPair { column: j, row: i, score });
            }
        }
    }
    pruned.sort_by_key(|p| (p.column, p.row));
    let survivors = surviving_columns(matrix, gamma)
        .into_iter()
        .map(|j| candidates[j].clone())
        .collect();
    Ok(MatchOutcome { survivors, pruned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::{Owner, ProfileEntry};

    fn profile(attrs: &[usize]) -> AttributeProfile {
        AttributeProfile {
            owner: Owner::Cluster(0),
            entries: attrs
                .iter()
                .map(|&attribute| ProfileEntry { attribute, score: 0.0 })
                .collect(),
        }
    }

    fn candidate(cluster: usize, attrs: &[usize]) -> CandidateLabel {
        CandidateLabel {
            name: format!("c{cluster}"),
            profile: profile(attrs),
            source_cluster: cluster,
        }
    }

    #[test]
    fn weights() {
        assert_eq!(position_weights(5), vec![1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(position_weights(1), vec![1.0]);
        assert_eq!(position_weights(2), vec![1.0, 0.0]);
    }

    #[test]
    fn sim_examples() {
        assert_eq!(attribute_sim(&profile(&[0, 1, 2]), &profile(&[0, 1, 2])).unwrap(), 1.0);
        assert_eq!(attribute_sim(&profile(&[0, 1]), &profile(&[1, 0])).unwrap(), 0.0);
        assert_eq!(attribute_sim(&profile(&[0, 1, 2]), &profile(&[5, 6, 7])).unwrap(), 0.0);
    }

    #[test]
    fn sim_is_asymmetric_and_handles_long_targets() {
        // Source of length 2 against a longer target: distance 3 has no weight.
        assert_eq!(attribute_sim(&profile(&[0, 1]), &profile(&[9, 8, 7, 0])).unwrap(), 0.0);
        let a = profile(&[0]);
        let b = profile(&[0, 1, 2, 3]);
        assert_eq!(attribute_sim(&a, &b).unwrap(), 1.0);
        assert_eq!(attribute_sim(&b, &a).unwrap(), 0.25);
    }

    #[test]
    fn empty_profile_rejected() {
        assert!(matches!(
            attribute_sim(&profile(&[]), &profile(&[1])),
            Err(Error::EmptyProfile { .. })
        ));
        let err = build_similarity_matrix(&[profile(&[1])], &[candidate(4, &[])]).unwrap_err();
        assert!(matches!(err, Error::EmptyProfile { ref context } if context.starts_with("row 0, column 0")));
    }

    #[test]
    fn duplicate_of_source_scores_one() {
        let sources = [profile(&[1, 2, 3]), profile(&[4, 5, 6])];
        let cands = [candidate(0, &[7, 8]), candidate(1, &[4, 5, 6])];
        let s = build_similarity_matrix(&sources, &cands).unwrap();
        assert_eq!(s.values[1][1], 1.0);
        assert_eq!(s.col_labels, vec![0, 1]);
    }

    #[test]
    fn pruning_boundaries() {
        let sources = [profile(&[1, 2, 3])];
        let cands = [candidate(0, &[1, 9, 8]), candidate(1, &[7, 8, 9]), candidate(2, &[1, 2, 3])];
        let s = build_similarity_matrix(&sources, &cands).unwrap();
        let at_zero = match_and_prune(&s, 0.0, &cands).unwrap();
        assert_eq!(
            at_zero.survivors.iter().map(|c| c.source_cluster).collect::<Vec<_>>(),
            vec![1],
            "gamma 0 prunes every column with a weighted common attribute"
        );
        let at_one = match_and_prune(&s, 1.0, &cands).unwrap();
        assert_eq!(
            at_one.survivors.iter().map(|c| c.source_cluster).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert_eq!(at_one.pruned, vec![PrunedPair { column: 2, row: 0, score: 1.0 }]);
        assert!(match_and_prune(&s, 1.5, &cands).is_err());
    }

    #[test]
    fn all_zero_matrix_keeps_everything() {
        let sources = [profile(&[1, 2])];
        let cands = [candidate(0, &[3]), candidate(1, &[4])];
        let s = build_similarity_matrix(&sources, &cands).unwrap();
        assert!(s.values.iter().flatten().all(|&v| v == 0.0));
        for gamma in [0.0, 0.1, 1.0] {
            assert_eq!(match_and_prune(&s, gamma, &cands).unwrap().survivors.len(), 2);
        }
    }
}
