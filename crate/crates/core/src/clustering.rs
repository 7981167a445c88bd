//! Deterministic k-means (Lloyd iterations, k-means++ seeding).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vector::squared_distance;

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Total within-cluster squared Euclidean distance of the final model.
    pub inertia: f64,
    pub iterations_run: usize,
    /// Inertia after every assignment step, in order.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// Nearest centroid; strict comparison so ties go to the lowest index.
fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(centroid, point);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn assign(model: &ClusterModel, points: &[Vec<f64>]) -> Result<Vec<usize>> {
    let dim = model.dim();
    points
        .iter()
        .map(|p| {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            Ok(nearest(&model.centroids, p).0)
        })
        .collect()
}

fn count_distinct(points: &[Vec<f64>], limit: usize) -> usize {
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| *q == p) {
            distinct.push(p);
            if distinct.len() >= limit {
                break;
            }
        }
    }
    distinct.len()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut closest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        let target = rng.next_f64() * total;
        let mut acc = 0.0;
        // Fallback: the last point with positive weight.
        let mut chosen = closest.iter().rposition(|&d| d > 0.0).unwrap_or(0);
        for (i, &d) in closest.iter().enumerate() {
            acc += d;
            if d > 0.0 && acc > target {
                chosen = i;
                break;
            }
        }
        let centroid = points[chosen].clone();
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(squared_distance(p, &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

fn assignment_step(centroids: &[Vec<f64>], points: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    points.iter().map(|p| nearest(centroids, p)).unzip()
}

/// Moves each empty cluster's centroid onto the point farthest from its own
/// centroid, then reassigns. Returns false if nothing was empty.
fn reseed_empty(
    centroids: &mut [Vec<f64>],
    points: &[Vec<f64>],
    assignments: &mut Vec<usize>,
    distances: &mut Vec<f64>,
) -> bool {
    let k = centroids.len();
    let mut reseeded = false;
    // Each pass fills one cluster; the cap only guards against cycling.
    for _ in 0..=k * points.len() {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return reseeded;
        };
        // Only points whose cluster keeps at least one member may move.
        let far = (0..points.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .max_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(b.cmp(&a)))
            .expect("k <= distinct points guarantees a donor cluster");
        centroids[empty] = points[far].clone();
        (*assignments, *distances) = assignment_step(centroids, points);
        reseeded = true;
    }
    reseeded
}

fn update_centroids(centroids: &mut [Vec<f64>], points: &[Vec<f64>], assignments: &[usize]) {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for ((centroid, sum), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *centroid = sum.into_iter().map(|s| s / n as f64).collect();
        }
    }
}

pub fn kmeans_fit(points: &[Vec<f64>], num_clusters: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    if num_clusters == 0 {
        return Err(Error::InvalidConfig("number of clusters must be positive".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
    }
    if num_clusters > points.len() {
        return Err(Error::TooFewPoints {
            points: points.len(),
            clusters: num_clusters,
        });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let distinct = count_distinct(points, num_clusters);
    if distinct < num_clusters {
        return Err(Error::TooFewPoints {
            points: distinct,
            clusters: num_clusters,
        });
    }

    let mut rng = SplitMix64::new(seed);
    let mut centroids = plus_plus_init(points, num_clusters, &mut rng);
    let mut history = Vec::new();
    let mut previous: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let (assignments, distances) = loop {
        iterations += 1;
        let (mut assignments, mut distances) = assignment_step(&centroids, points);
        reseed_empty(&mut centroids, points, &mut assignments, &mut distances);
        history.push(distances.iter().sum());
        let converged = previous.as_ref() == Some(&assignments);
        if converged || iterations >= max_iter {
            break (assignments, distances);
        }
        update_centroids(&mut centroids, points, &assignments);
        previous = Some(assignments);
    };

    Ok(ClusterModel {
        centroids,
        assignments,
        inertia: distances.iter().sum(),
        iterations_run: iterations,
        inertia_history: history,
    })
}
