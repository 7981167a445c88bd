//! Synthetic bundles with known ground truth.
//!
//! Generation consumes one [`SplitMix64`] stream in a fixed order:
//!
//! 1. class prototypes, shared classes first, each drawn as a normalized
//!    standard-normal vector and rejected if any earlier prototype has
//!    `|cos| >= 0.3`;
//! 2. salient attribute embeddings, class-major, each
//!    `normalize(prototype + N(0, (σ/2)²))`;
//! 3. distractor attribute embeddings, normalized standard-normal vectors;
//! 4. source videos, class-major over the shared classes, `n` per class;
//! 5. target videos, class-major over shared then private classes.
//!
//! A video draws its embedding `normalize(prototype + N(0, σ²))` and then its
//! frames. Each frame walks the class's salient attributes in order; before
//! each one a distractor is inserted with probability `p_distract`. The frame
//! is then padded with distractors up to `m` entries and truncated to `m`.
//! Distractors never repeat within a frame.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{l2_normalize, DatasetBundle, Domain, LabelEntry, Matrix, VideoRecord};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::vector;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Prototypes must be pairwise below this absolute cosine.
pub const MAX_PROTOTYPE_COSINE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub shared_classes: usize,
    pub private_classes: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    pub attributes_per_frame: usize,
    pub noise: f64,
    pub salient_per_class: usize,
    pub distractor_vocab: usize,
    pub distractor_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            shared_classes: 4,
            private_classes: 3,
            videos_per_class: 20,
            frames_per_video: 8,
            attributes_per_frame: 5,
            noise: 0.15,
            salient_per_class: 3,
            distractor_vocab: 24,
            distractor_prob: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("synth: {msg}")));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.shared_classes < 2 {
            return bad("shared_classes must be >= 2");
        }
        if self.private_classes < 1 {
            return bad("private_classes must be >= 1");
        }
        if self.videos_per_class < 2 {
            return bad("videos_per_class must be >= 2");
        }
        if self.frames_per_video < 1 || self.attributes_per_frame < 1 {
            return bad("frames_per_video and attributes_per_frame must be >= 1");
        }
        if self.salient_per_class < 1 {
            return bad("salient_per_class must be >= 1");
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad("noise must be positive");
        }
        if !(0.0..1.0).contains(&self.distractor_prob) {
            return bad("distractor_prob must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.shared_classes + self.private_classes
    }
}

/// What the generator knows and the engine must discover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Video id to true class name, for source and target videos.
    pub videos: BTreeMap<String, String>,
    /// Class name to its salient attribute indices, confidence order.
    pub salient_attributes: BTreeMap<String, Vec<usize>>,
    /// Private class name to its prototype embedding.
    pub private_prototypes: BTreeMap<String, Vec<f64>>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn shared_class_name(c: usize) -> String {
    format!("shared_{c:02}")
}

pub fn private_class_name(c: usize) -> String {
    format!("private_{c:02}")
}

fn random_unit(rng: &mut SplitMix64, dim: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
    l2_normalize(&v)
}

fn perturbed_unit(rng: &mut SplitMix64, center: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let v: Vec<f64> = center.iter().map(|c| c + sigma * rng.gaussian()).collect();
    l2_normalize(&v)
}

fn sample_prototypes(rng: &mut SplitMix64, config: &SynthConfig) -> Result<Vec<Vec<f64>>> {
    let classes = config.num_classes();
    let budget = 10 * classes * classes;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut tries = 0;
    while accepted.len() < classes {
        if tries >= budget {
            return Err(Error::RejectionExceeded { tries });
        }
        tries += 1;
        let candidate = random_unit(rng, config.dim)?;
        if accepted
            .iter()
            .all(|p| vector::dot(p, &candidate).abs() < MAX_PROTOTYPE_COSINE)
        {
            accepted.push(candidate);
        }
    }
    Ok(accepted)
}

fn draw_distractor(rng: &mut SplitMix64, frame: &[usize], first: usize, count: usize) -> Option<usize> {
    let used = frame.iter().filter(|&&a| a >= first).count();
    if used >= count {
        return None;
    }
    loop {
        let a = first + rng.below(count);
        if !frame.contains(&a) {
            return Some(a);
        }
    }
}

fn draw_frame(rng: &mut SplitMix64, config: &SynthConfig, salient: &[usize], first_distractor: usize) -> Vec<usize> {
    let mut frame = Vec::with_capacity(config.attributes_per_frame + salient.len());
    let distractors = config.distractor_vocab;
    for &s in salient {
        if distractors > 0 && config.distractor_prob > 0.0 && rng.next_f64() < config.distractor_prob {
            if let Some(d) = draw_distractor(rng, &frame, first_distractor, distractors) {
                frame.push(d);
            }
        }
        frame.push(s);
    }
    while frame.len() < config.attributes_per_frame {
        match draw_distractor(rng, &frame, first_distractor, distractors) {
            Some(d) => frame.push(d),
            None => break,
        }
    }
    frame.truncate(config.attributes_per_frame);
    frame
}

/// Generates a bundle and its ground truth. Identical configs give
/// bit-identical output.
pub fn generate(config: &SynthConfig) -> Result<(DatasetBundle, GroundTruth)> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let k = config.shared_classes;
    let classes = config.num_classes();
    let t = config.salient_per_class;

    let prototypes = sample_prototypes(&mut rng, config)?;
    let class_names: Vec<String> = (0..classes)
        .map(|c| if c < k { shared_class_name(c) } else { private_class_name(c - k) })
        .collect();

    let mut vocab = Vec::with_capacity(classes * t + config.distractor_vocab);
    let mut attribute_rows = Vec::with_capacity(vocab.capacity());
    let mut salient_attributes = BTreeMap::new();
    for (c, proto) in prototypes.iter().enumerate() {
        let mut indices = Vec::with_capacity(t);
        for j in 0..t {
            indices.push(vocab.len());
            vocab.push(format!("class{c:02}_attr{j}"));
            attribute_rows.push(vector::demote(&perturbed_unit(&mut rng, proto, config.noise / 2.0)?));
        }
        salient_attributes.insert(class_names[c].clone(), indices);
    }
    let first_distractor = vocab.len();
    for j in 0..config.distractor_vocab {
        vocab.push(format!("noise{j:02}"));
        attribute_rows.push(vector::demote(&random_unit(&mut rng, config.dim)?));
    }

    let mut video_rows = Vec::new();
    let mut videos = Vec::new();
    let mut truth = BTreeMap::new();
    let mut emit = |rng: &mut SplitMix64, domain: Domain, class: usize| -> Result<()> {
        let prefix = match domain {
            Domain::Source => "src",
            Domain::Target => "tgt",
        };
        let id = format!("{prefix}{:05}", videos.len());
        let embedding = perturbed_unit(rng, &prototypes[class], config.noise)?;
        let salient = &salient_attributes[&class_names[class]];
        let frames = (0..config.frames_per_video)
            .map(|_| draw_frame(rng, config, salient, first_distractor))
            .collect();
        truth.insert(id.clone(), class_names[class].clone());
        videos.push(VideoRecord::new(
            id,
            domain,
            video_rows.len(),
            frames,
            Some(class_names[class].clone()),
        ));
        video_rows.push(vector::demote(&embedding));
        Ok(())
    };
    for c in 0..k {
        for _ in 0..config.videos_per_class {
            emit(&mut rng, Domain::Source, c)?;
        }
    }
    for c in 0..classes {
        for _ in 0..config.videos_per_class {
            emit(&mut rng, Domain::Target, c)?;
        }
    }

    let label_rows: Vec<Vec<f32>> = prototypes[..k].iter().map(|p| vector::demote(p)).collect();
    let bundle = DatasetBundle {
        dim: config.dim,
        shared_labels: (0..k)
            .map(|c| LabelEntry {
                name: class_names[c].clone(),
                embedding_index: c,
            })
            .collect(),
        attribute_vocab: vocab,
        attribute_embeddings: Matrix::from_rows(config.dim, &attribute_rows)?,
        label_embeddings: Matrix::from_rows(config.dim, &label_rows)?,
        video_embeddings: Matrix::from_rows(config.dim, &video_rows)?,
        videos,
    };
    bundle.validate()?;

    let private_prototypes = (k..classes)
        .map(|c| (class_names[c].clone(), prototypes[c].clone()))
        .collect();
    Ok((
        bundle,
        GroundTruth {
            videos: truth,
            salient_attributes,
            private_prototypes,
        },
    ))
}
