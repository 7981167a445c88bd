//! Linear adapter over frozen video embeddings, trained with a symmetric KL
//! video-text contrastive loss.
//!
//! For a batch of `N` (video, label) pairs the adapter maps each video to
//! `v_i = normalize(W x_i + b)` and compares it with the batch's label
//! embeddings `w_j`. Row `i` of `C = [v_i · w_j] / τ` softmaxed gives the
//! video-to-text distribution, column `j` the text-to-video one. Both are
//! matched against `q`, uniform over the batch positions sharing a label and
//! smoothed as `(1 - ε) q + ε / N`. The loss averages
//! `KL(p || q) + KL(q || p)` over every row of both directions and halves it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{l2_normalize, read_matrix, write_matrix, Matrix, DEGENERATE_NORM};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vector;

pub const WEIGHT_FILE: &str = "adapter_weight.bin";
pub const BIAS_FILE: &str = "adapter_bias.bin";
pub const METADATA_FILE: &str = "adapter.json";

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    dim: usize,
    /// Row-major `dim x dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AdapterParams {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn new(dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: weight.len(),
            });
        }
        if bias.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bias.len(),
            });
        }
        if weight.iter().chain(&bias).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("adapter parameters must be finite".into()));
        }
        Ok(Self { dim, weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `W v + b` before normalization.
    fn affine(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| vector::dot(&self.weight[r * self.dim..(r + 1) * self.dim], v) + self.bias[r])
            .collect()
    }

    pub fn adapt(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        l2_normalize(&self.affine(v))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }

    /// Writes `adapter_weight.bin`, `adapter_bias.bin` (ALEB, f32) and
    /// `adapter.json` under `dir`.
    pub fn save(&self, dir: &Path, metadata: &AdapterMetadata) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let weight = Matrix::new(self.dim, self.dim, vector::demote(&self.weight))?;
        let bias = Matrix::new(1, self.dim, vector::demote(&self.bias))?;
        write_matrix(&dir.join(WEIGHT_FILE), &weight)?;
        write_matrix(&dir.join(BIAS_FILE), &bias)?;
        let path = dir.join(METADATA_FILE);
        let text = serde_json::to_string_pretty(metadata).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let weight = read_matrix(&dir.join(WEIGHT_FILE))?;
        let bias = read_matrix(&dir.join(BIAS_FILE))?;
        let dim = weight.cols();
        if weight.rows() != dim || bias.rows() != 1 || bias.cols() != dim {
            return Err(Error::InvalidConfig(format!(
                "adapter shapes {}x{} and {}x{} are inconsistent",
                weight.rows(),
                weight.cols(),
                bias.rows(),
                bias.cols()
            )));
        }
        Self::new(dim, vector::promote(weight.data()), vector::promote(bias.data()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMetadata {
    pub dim: usize,
    pub config: TrainConfig,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    /// Weight of the uniform component mixed into the target distribution.
    pub smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 20,
            batch_size: 32,
            temperature: 0.01,
            smoothing: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !positive(self.temperature) || !positive(self.smoothing) || self.smoothing >= 1.0 {
            return Err(Error::InvalidConfig(
                "temperature must be positive and smoothing must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: an unadapted video embedding and its label index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub embedding: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub loss: f64,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    /// Loss gradient with respect to each pre-normalization output `W x_i + b`.
    pub per_sample: Vec<Vec<f64>>,
}

struct Forward {
    /// Norms of the pre-normalization outputs.
    norms: Vec<f64>,
    adapted: Vec<Vec<f64>>,
    /// Normalized label embedding at each batch position.
    texts: Vec<Vec<f64>>,
    /// `cos / τ`, rows are videos.
    logits: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
}

fn forward(params: &AdapterParams, batch: &[TrainingPair], labels: &[Vec<f64>], temperature: f64, smoothing: f64) -> Result<Forward> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidBatch(format!("batch of {n} pairs; need at least 2")));
    }
    let mut norms = Vec::with_capacity(n);
    let mut adapted = Vec::with_capacity(n);
    let mut texts = Vec::with_capacity(n);
    for pair in batch {
        if pair.embedding.len() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                found: pair.embedding.len(),
            });
        }
        let label = labels.get(pair.label).ok_or_else(|| {
            Error::InvalidBatch(format!("label index {} outside {} labels", pair.label, labels.len()))
        })?;
        if label.len() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                found: label.len(),
            });
        }
        let u = params.affine(&pair.embedding);
        let norm = vector::norm(&u);
        if norm <= DEGENERATE_NORM || !norm.is_finite() {
            return Err(Error::DegenerateVector { norm });
        }
        adapted.push(u.iter().map(|x| x / norm).collect());
        norms.push(norm);
        texts.push(l2_normalize(label)?);
    }
    let logits = adapted
        .iter()
        .map(|v: &Vec<f64>| texts.iter().map(|w| vector::dot(v, w) / temperature).collect())
        .collect();
    let mut multiplicity = std::collections::HashMap::new();
    for pair in batch {
        *multiplicity.entry(pair.label).or_insert(0usize) += 1;
    }
    let uniform = smoothing / n as f64;
    let target = batch
        .iter()
        .map(|a| {
            let positives = multiplicity[&a.label] as f64;
            batch
                .iter()
                .map(|b| {
                    let hard = if a.label == b.label { 1.0 / positives } else { 0.0 };
                    (1.0 - smoothing) * hard + uniform
                })
                .collect()
        })
        .collect();
    Ok(Forward {
        norms,
        adapted,
        texts,
        logits,
        target,
    })
}

/// Symmetric KL of a softmax row against a fixed target, and its gradient
/// with respect to the logits.
fn symmetric_kl(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let log_p: Vec<f64> = logits.iter().map(|z| z - log_total).collect();
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let log_ratio: Vec<f64> = log_p.iter().zip(target).map(|(lp, q)| lp - q.ln()).collect();
    let kl_pq: f64 = p.iter().zip(&log_ratio).map(|(p, a)| p * a).sum();
    let kl_qp: f64 = -target.iter().zip(&log_ratio).map(|(q, a)| q * a).sum::<f64>();
    let grad = p
        .iter()
        .zip(&log_ratio)
        .zip(target)
        .map(|((p, a), q)| p * (a - kl_pq) + p - q)
        .collect();
    (kl_pq + kl_qp, grad)
}

fn column(m: &[Vec<f64>], j: usize) -> Vec<f64> {
    m.iter().map(|row| row[j]).collect()
}

fn loss_and_logit_grad(fwd: &Forward) -> (f64, Vec<Vec<f64>>) {
    let n = fwd.logits.len();
    let scale = 1.0 / (4.0 * n as f64);
    let mut total = 0.0;
    let mut grad = vec![vec![0.0; n]; n];
    for i in 0..n {
        let (loss, g) = symmetric_kl(&fwd.logits[i], &fwd.target[i]);
        total += loss;
        for j in 0..n {
            grad[i][j] += scale * g[j];
        }
    }
    for j in 0..n {
        let (loss, g) = symmetric_kl(&column(&fwd.logits, j), &column(&fwd.target, j));
        total += loss;
        for i in 0..n {
            grad[i][j] += scale * g[i];
        }
    }
    (scale * total, grad)
}

pub fn contrastive_loss(
    params: &AdapterParams,
    batch: &[TrainingPair],
    labels: &[Vec<f64>],
    temperature: f64,
    smoothing: f64,
) -> Result<f64> {
    let fwd = forward(params, batch, labels, temperature, smoothing)?;
    Ok(loss_and_logit_grad(&fwd).0)
}

/// Analytic gradient of [`contrastive_loss`] with respect to `W` and `b`.
pub fn contrastive_grad(
    params: &AdapterParams,
    batch: &[TrainingPair],
    labels: &[Vec<f64>],
    temperature: f64,
    smoothing: f64,
) -> Result<Gradient> {
    let fwd = forward(params, batch, labels, temperature, smoothing)?;
    let (loss, logit_grad) = loss_and_logit_grad(&fwd);
    let d = params.dim;
    let mut weight = vec![0.0; d * d];
    let mut bias = vec![0.0; d];
    let mut per_sample = Vec::with_capacity(batch.len());
    for (i, pair) in batch.iter().enumerate() {
        // d loss / d v_i
        let mut dv = vec![0.0; d];
        for (g, w) in logit_grad[i].iter().zip(&fwd.texts) {
            let g = g / temperature;
            for (acc, x) in dv.iter_mut().zip(w) {
                *acc += g * x;
            }
        }
        // Through v = u / |u|: (I - v vᵀ) dv / |u|.
        let v = &fwd.adapted[i];
        let radial = vector::dot(v, &dv);
        let du: Vec<f64> = dv
            .iter()
            .zip(v)
            .map(|(g, x)| (g - radial * x) / fwd.norms[i])
            .collect();
        for r in 0..d {
            bias[r] += du[r];
            let row = &mut weight[r * d..(r + 1) * d];
            for (w, x) in row.iter_mut().zip(&pair.embedding) {
                *w += du[r] * x;
            }
        }
        per_sample.push(du);
    }
    Ok(Gradient {
        loss,
        weight,
        bias,
        per_sample,
    })
}

fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    // A trailing singleton cannot form a contrastive batch; fold it in.
    if out.len() > 1 && out.last().map_or(false, |b| b.len() < 2) {
        out.pop();
        let merged_len = out.last().unwrap().len() + 1;
        let start = order.len() - merged_len;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Mini-batch gradient descent with a fixed learning rate. Returns the final
/// parameters and the mean batch loss of every epoch.
pub fn fit(
    params: &AdapterParams,
    pairs: &[TrainingPair],
    labels: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(AdapterParams, Vec<f64>)> {
    config.validate()?;
    if pairs.len() < 2 {
        return Err(Error::InvalidBatch(format!(
            "{} training pairs; need at least 2",
            pairs.len()
        )));
    }
    let mut current = params.clone();
    let mut rng = SplitMix64::new(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size + 1);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let groups = batches(&order, config.batch_size);
        for group in &groups {
            batch.clear();
            batch.extend(group.iter().map(|&i| pairs[i].clone()));
            let grad = contrastive_grad(&current, &batch, labels, config.temperature, config.smoothing).map_err(|e| match e {
                Error::DegenerateVector { norm } if !norm.is_finite() => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
            if !grad.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            total += grad.loss;
            for (w, g) in current.weight.iter_mut().zip(&grad.weight) {
                *w -= config.learning_rate * g;
            }
            for (b, g) in current.bias.iter_mut().zip(&grad.bias) {
                *b -= config.learning_rate * g;
            }
            if !current.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
        }
        trace.push(total / groups.len() as f64);
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Vec<f64> {
        l2_normalize(v).unwrap()
    }

    #[test]
    fn identity_and_scaled_identity_preserve_unit_vectors() {
        let v = unit(&[0.3, -0.4, 0.5, 0.1]);
        assert_eq!(AdapterParams::identity(4).adapt(&v).unwrap(), unit(&v));
        let mut doubled = AdapterParams::identity(4);
        doubled.weight.iter_mut().for_each(|w| *w *= 2.0);
        let out = doubled.adapt(&v).unwrap();
        assert!(out.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn random_params_give_unit_output() {
        let mut rng = SplitMix64::new(2);
        for _ in 0..50 {
            let d = 6;
            let p = AdapterParams::new(
                d,
                (0..d * d).map(|_| rng.gaussian()).collect(),
                (0..d).map(|_| rng.gaussian()).collect(),
            )
            .unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
            let out = p.adapt(&x).unwrap();
            assert!((vector::norm(&out) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_pairs_have_near_zero_loss() {
        let x = unit(&[1.0, 2.0, 3.0]);
        let batch = vec![TrainingPair { embedding: x.clone(), label: 0 }; 4];
        let loss = contrastive_loss(&AdapterParams::identity(3), &batch, &[x], 0.01, 1e-6).unwrap();
        assert!(loss.abs() < 1e-4, "{loss}");
    }

    #[test]
    fn orthogonal_matching_pairs_have_small_loss() {
        let e0 = vec![1.0, 0.0];
        let e1 = vec![0.0, 1.0];
        let batch = vec![
            TrainingPair { embedding: e0.clone(), label: 0 },
            TrainingPair { embedding: e1.clone(), label: 1 },
        ];
        let loss = contrastive_loss(&AdapterParams::identity(2), &batch, &[e0, e1], 0.01, 1e-6).unwrap();
        assert!((0.0..1e-3).contains(&loss), "{loss}");
    }

    #[test]
    fn single_pair_batch_rejected() {
        let e = vec![1.0, 0.0];
        let batch = vec![TrainingPair { embedding: e.clone(), label: 0 }];
        assert!(matches!(
            contrastive_loss(&AdapterParams::identity(2), &batch, &[e], 0.1, 1e-6),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn trailing_singleton_is_merged() {
        let order: Vec<usize> = (0..7).collect();
        let b = batches(&order, 3);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![3, 4]);
        let b = batches(&order, 10);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut rng = SplitMix64::new(1);
        let labels: Vec<Vec<f64>> = (0..3).map(|_| unit(&(0..4).map(|_| rng.gaussian()).collect::<Vec<_>>())).collect();
        let pairs: Vec<TrainingPair> = (0..9)
            .map(|i| TrainingPair {
                embedding: unit(&(0..4).map(|_| rng.gaussian()).collect::<Vec<_>>()),
                label: i % 3,
            })
            .collect();
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            batch_size: 16,
            temperature: 0.1,
            ..TrainConfig::default()
        };
        let start = AdapterParams::identity(4);
        let (end, trace) = fit(&start, &pairs, &labels, &config).unwrap();
        assert_eq!(end, start);
        // Reshuffling reorders the batch sums, so equal up to rounding.
        assert!(trace.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * w[0]), "{trace:?}");
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = AdapterParams::new(2, vec![1.0, 0.5, -0.25, 2.0], vec![0.125, -1.0]).unwrap();
        let meta = AdapterMetadata {
            dim: 2,
            config: TrainConfig::default(),
            loss_trace: vec![1.0],
        };
        p.save(dir.path(), &meta).unwrap();
        assert_eq!(AdapterParams::load(dir.path()).unwrap(), p);
    }
}
