#![allow(dead_code)]

use std::collections::HashMap;

use autolabel::adapter::{contrastive_grad, contrastive_loss, AdapterParams, TrainingPair};
use autolabel::dataset::l2_normalize;
use autolabel::discovery::{AttributeProfile, Owner, ProfileEntry};
use autolabel::rng::SplitMix64;
use autolabel::synth::SynthConfig;

/// Clean synthetic bundle settings used by the end-to-end checks.
pub fn clean_synth(shared: usize, private: usize, per_class: usize, noise: f64, seed: u64) -> SynthConfig {
    SynthConfig {
        shared_classes: shared,
        private_classes: private,
        videos_per_class: per_class,
        noise,
        seed,
        ..SynthConfig::default()
    }
}

pub fn profile(attrs: &[usize]) -> AttributeProfile {
    AttributeProfile {
        owner: Owner::Cluster(0),
        entries: attrs
            .iter()
            .map(|&attribute| ProfileEntry { attribute, score: 0.0 })
            .collect(),
    }
}

/// Between 1 and `max_len` distinct attributes drawn from `0..vocab`.
pub fn random_attrs(rng: &mut SplitMix64, max_len: usize, vocab: usize) -> Vec<usize> {
    let len = 1 + rng.below(max_len.min(vocab));
    let mut pool: Vec<usize> = (0..vocab).collect();
    rng.shuffle(&mut pool);
    pool.truncate(len);
    pool
}

/// Literal double loop over both attribute lists: weights are the reversed
/// position range rescaled to [0, 1], a single weight being 1.
pub fn brute_force_sim(source: &[usize], target: &[usize]) -> f64 {
    let n = source.len();
    let weights: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        let reference: Vec<f64> = (0..n).rev().map(|x| x as f64).collect();
        let (lo, hi) = (0.0, (n - 1) as f64);
        reference.iter().map(|r| (r - lo) / (hi - lo)).collect()
    };
    let mut s = 0.0;
    for (i_s, a) in source.iter().enumerate() {
        for (i_t, b) in target.iter().enumerate() {
            if a == b {
                let d = i_s.abs_diff(i_t);
                if d < n {
                    s += weights[d];
                }
            }
        }
    }
    s / n as f64
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Eq + std::hash::Hash, B: Eq + std::hash::Hash>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let row_sum: f64 = rows.values().map(|&n| choose2(n)).sum();
    let col_sum: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    let expected = row_sum * col_sum / total;
    let max = (row_sum + col_sum) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub struct GradInstance {
    pub params: AdapterParams,
    pub batch: Vec<TrainingPair>,
    pub labels: Vec<Vec<f64>>,
    pub temperature: f64,
    pub smoothing: f64,
}

fn gaussian_vec(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gaussian()).collect()
}

/// Random adapter near identity, a batch of `n` pairs over fewer labels
/// than pairs so that repeated labels occur.
pub fn grad_instance(rng: &mut SplitMix64, d: usize, n: usize) -> GradInstance {
    let mut weight = gaussian_vec(rng, d * d);
    weight.iter_mut().for_each(|w| *w *= 0.3);
    for i in 0..d {
        weight[i * d + i] += 1.0;
    }
    let bias = gaussian_vec(rng, d).into_iter().map(|b| 0.1 * b).collect();
    let num_labels = n - 1;
    let labels = (0..num_labels)
        .map(|_| l2_normalize(&gaussian_vec(rng, d)).unwrap())
        .collect();
    let batch = (0..n)
        .map(|_| TrainingPair {
            embedding: gaussian_vec(rng, d),
            label: rng.below(num_labels),
        })
        .collect();
    GradInstance {
        params: AdapterParams::new(d, weight, bias).unwrap(),
        batch,
        labels,
        temperature: 0.1,
        smoothing: 1e-6,
    }
}

/// Largest relative gap between the analytic gradient and central finite
/// differences over every entry of `W` and `b`. Entries whose magnitudes are
/// both below `floor` are compared on an absolute `floor` scale.
pub fn max_relative_grad_error(inst: &GradInstance, h: f64, floor: f64) -> f64 {
    let loss = |p: &AdapterParams| contrastive_loss(p, &inst.batch, &inst.labels, inst.temperature, inst.smoothing).unwrap();
    let grad = contrastive_grad(&inst.params, &inst.batch, &inst.labels, inst.temperature, inst.smoothing).unwrap();
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let scale = analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for i in 0..inst.params.weight.len() {
        let (mut up, mut down) = (inst.params.clone(), inst.params.clone());
        up.weight[i] += h;
        down.weight[i] -= h;
        check(grad.weight[i], (loss(&up) - loss(&down)) / (2.0 * h));
    }
    for i in 0..inst.params.bias.len() {
        let (mut up, mut down) = (inst.params.clone(), inst.params.clone());
        up.bias[i] += h;
        down.bias[i] -= h;
        check(grad.bias[i], (loss(&up) - loss(&down)) / (2.0 * h));
    }
    worst
}
