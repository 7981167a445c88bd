//! End-to-end orchestration, the per-stage building blocks the CLI reuses,
//! and the on-disk artifact names.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adapter::{self, AdapterMetadata, AdapterParams, TrainConfig, TrainingPair};
use crate::clustering::{kmeans_fit, ClusterModel, DEFAULT_MAX_ITER};
use crate::dataset::{index_by_id, l2_normalize, DatasetBundle, VideoRecord};
use crate::discovery::{self, AttributeProfile, Discovery, DiscoveryParams};
use crate::error::{Error, Result};
use crate::matching::{self, MatchOutcome, SimilarityMatrix, DEFAULT_GAMMA};
use crate::metrics::{self, OpenSetMetrics};
use crate::pseudolabel::{self, PseudoLabelSet, DEFAULT_PERCENT};
use crate::synth::GroundTruth;
use crate::zeroshot::{self, ExtendedLabelSet, Prediction, DEFAULT_REJECTION_THRESHOLD, DEFAULT_TEMPERATURE};

pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const SOURCE_PROFILES_FILE: &str = "source_profiles.json";
pub const MATCHES_FILE: &str = "matches.json";
pub const LABEL_SET_FILE: &str = "label_set.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const PSEUDO_LABELS_FILE: &str = "pseudolabels.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Autolabel,
    Threshold,
    InstanceExtension,
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Oracle,
        Strategy::Autolabel,
        Strategy::InstanceExtension,
        Strategy::Threshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Autolabel => "autolabel",
            Strategy::Threshold => "threshold",
            Strategy::InstanceExtension => "instance-extension",
            Strategy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Number of target clusters; twice the shared-class count when unset.
    pub clusters: Option<usize>,
    pub m: usize,
    pub t: usize,
    pub argtop_k: usize,
    pub tfidf_threshold: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub pseudo_percent: f64,
    pub strategy: Strategy,
    /// Cosine below which the threshold baseline rejects.
    pub rejection_threshold: f64,
    pub train: TrainConfig,
    pub epochs_outer: usize,
    pub seed: u64,
    pub no_train: bool,
    pub include_source_batches: bool,
    pub max_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let params = DiscoveryParams::default();
        Self {
            clusters: None,
            m: params.m,
            t: params.t,
            argtop_k: params.argtop_k,
            tfidf_threshold: params.threshold,
            gamma: DEFAULT_GAMMA,
            temperature: DEFAULT_TEMPERATURE,
            pseudo_percent: DEFAULT_PERCENT,
            strategy: Strategy::Autolabel,
            rejection_threshold: DEFAULT_REJECTION_THRESHOLD,
            train: TrainConfig::default(),
            epochs_outer: 5,
            seed: 0,
            no_train: false,
            include_source_batches: true,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl PipelineConfig {
    pub fn discovery(&self) -> DiscoveryParams {
        DiscoveryParams {
            m: self.m,
            t: self.t,
            argtop_k: self.argtop_k,
            threshold: self.tfidf_threshold,
        }
    }

    pub fn num_clusters(&self, bundle: &DatasetBundle) -> usize {
        self.clusters.unwrap_or(2 * bundle.num_shared())
    }

    pub fn validate(&self) -> Result<()> {
        self.discovery().validate()?;
        if self.clusters == Some(0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("clusters and max_iter must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} is outside [0, 1]", self.gamma)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if !(self.pseudo_percent > 0.0 && self.pseudo_percent <= 100.0) {
            return Err(Error::InvalidPercent(self.pseudo_percent));
        }
        if !(-1.0..=1.0).contains(&self.rejection_threshold) {
            return Err(Error::InvalidConfig("rejection_threshold must lie in [-1, 1]".into()));
        }
        self.train.validate()
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut out = Vec::new();
    for p in predictions {
        serde_json::to_writer(&mut out, p).map_err(|e| Error::json(path, e))?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::json(path, e))?);
    }
    Ok(out)
}

/// Target videos in bundle order.
pub fn targets(bundle: &DatasetBundle) -> Vec<&VideoRecord> {
    bundle.targets().collect()
}

/// Unit-norm target embeddings. The adapter, when given, sees the raw
/// embedding and normalizes its own output.
pub fn target_embeddings(bundle: &DatasetBundle, adapter: Option<&AdapterParams>) -> Result<Vec<Vec<f64>>> {
    bundle
        .targets()
        .map(|v| {
            let x = bundle.video_embedding(v);
            match adapter {
                Some(a) => a.adapt(&x),
                None => l2_normalize(&x),
            }
        })
        .collect()
}

pub fn cluster_targets(embeddings: &[Vec<f64>], clusters: usize, seed: u64, max_iter: usize) -> Result<ClusterModel> {
    kmeans_fit(embeddings, clusters, seed, max_iter)
}

/// Candidate discovery on the target clusters together with the source
/// class profiles they are matched against.
pub fn discover(
    bundle: &DatasetBundle,
    model: &ClusterModel,
    params: &DiscoveryParams,
) -> Result<(Discovery, Vec<AttributeProfile>)> {
    let found = discovery::discover_candidates(&targets(bundle), model, &bundle.attribute_vocab, params)?;
    let sources = discovery::source_profiles(bundle, params)?;
    Ok((found, sources))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchArtifact {
    pub gamma: f64,
    pub similarity: SimilarityMatrix,
    pub outcome: MatchOutcome,
}

pub fn match_candidates(
    bundle: &DatasetBundle,
    found: &Discovery,
    sources: &[AttributeProfile],
    gamma: f64,
    temperature: f64,
) -> Result<(MatchArtifact, ExtendedLabelSet)> {
    let similarity = matching::build_similarity_matrix(sources, &found.candidates)?;
    let outcome = matching::match_and_prune(&similarity, gamma, &found.candidates)?;
    let labels = ExtendedLabelSet::from_candidates(bundle, &outcome.survivors, temperature)?;
    Ok((
        MatchArtifact {
            gamma,
            similarity,
            outcome,
        },
        labels,
    ))
}

/// Predicts every target under the given strategy. `labels` is the extended
/// set for autolabel and oracle, and the shared-only set otherwise.
pub fn predict_targets(
    bundle: &DatasetBundle,
    embeddings: &[Vec<f64>],
    labels: &ExtendedLabelSet,
    strategy: Strategy,
    config: &PipelineConfig,
) -> Result<Vec<Prediction>> {
    targets(bundle)
        .iter()
        .zip(embeddings)
        .map(|(v, x)| match strategy {
            Strategy::Autolabel | Strategy::Oracle => zeroshot::predict(&v.id, x, labels),
            Strategy::Threshold => zeroshot::baseline_threshold_predict(&v.id, x, labels, config.rejection_threshold),
            Strategy::InstanceExtension => {
                let attrs = discovery::video_attributes(v, config.m);
                zeroshot::baseline_instance_extension_predict(&v.id, x, &attrs, bundle, labels)
            }
        })
        .collect()
}

/// Source pairs (optional) plus pseudo-labelled targets whose label index
/// exists in `labels`. Baseline rejections and per-video labels have no
/// entry there and are skipped. Embeddings are raw adapter inputs.
pub fn training_pairs(
    bundle: &DatasetBundle,
    pseudo: &PseudoLabelSet,
    labels: &ExtendedLabelSet,
    include_sources: bool,
) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    if include_sources {
        let index: BTreeMap<&str, usize> = labels.shared.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
        for v in bundle.sources() {
            let name = v.source_label().unwrap_or_default();
            let label = *index
                .get(name)
                .ok_or_else(|| Error::InvalidConfig(format!("source label `{name}` missing from the label set")))?;
            pairs.push(TrainingPair {
                embedding: bundle.video_embedding(v),
                label,
            });
        }
    }
    let by_id = index_by_id(bundle);
    for p in &pseudo.pairs {
        if p.label_index >= labels.len() {
            continue;
        }
        let v = by_id.get(p.video_id.as_str()).ok_or_else(|| {
            Error::InvalidConfig(format!("pseudo-label for unknown video `{}`", p.video_id))
        })?;
        pairs.push(TrainingPair {
            embedding: bundle.video_embedding(v),
            label: p.label_index,
        });
    }
    Ok(pairs)
}

pub fn train_adapter(
    params: &AdapterParams,
    pairs: &[TrainingPair],
    labels: &ExtendedLabelSet,
    config: &TrainConfig,
) -> Result<(AdapterParams, Vec<f64>)> {
    let label_embeddings: Vec<Vec<f64>> = labels.embeddings().map(<[f64]>::to_vec).collect();
    adapter::fit(params, pairs, &label_embeddings, config)
}

/// True target classes from the bundle's held-out labels, else from
/// `ground_truth.json`.
pub fn evaluation_truth(bundle: &DatasetBundle, ground_truth: Option<&GroundTruth>) -> Option<BTreeMap<String, String>> {
    metrics::ground_truth_from_bundle(bundle).or_else(|| {
        let truth = ground_truth?;
        bundle
            .targets()
            .map(|v| truth.videos.get(&v.id).map(|c| (v.id.clone(), c.clone())))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub predictions: Vec<Prediction>,
    pub labels: ExtendedLabelSet,
    pub adapter: AdapterParams,
    pub loss_traces: Vec<Vec<f64>>,
    /// `None` when no ground truth is available.
    pub metrics: Option<OpenSetMetrics>,
}

struct Pass {
    labels: ExtendedLabelSet,
    predictions: Vec<Prediction>,
}

fn stage<T>(name: &'static str, epoch: usize, result: Result<T>) -> Result<T> {
    result.map_err(|e| Error::Stage {
        stage: name,
        epoch,
        source: Box::new(e),
    })
}

/// Stages 1 to 5: adapt, cluster, discover, match, predict.
fn discovery_pass(
    bundle: &DatasetBundle,
    ground_truth: Option<&GroundTruth>,
    config: &PipelineConfig,
    adapter: &AdapterParams,
    epoch: usize,
    out: Option<&Path>,
) -> Result<Pass> {
    let embeddings = stage("adapt", epoch, target_embeddings(bundle, Some(adapter)))?;
    let shared = stage("predict", epoch, ExtendedLabelSet::shared_only(bundle, config.temperature))?;
    let labels = match config.strategy {
        Strategy::Autolabel => {
            let model = stage(
                "cluster",
                epoch,
                cluster_targets(&embeddings, config.num_clusters(bundle), config.seed.wrapping_add(epoch as u64), config.max_iter),
            )?;
            let (found, sources) = stage("discover", epoch, discover(bundle, &model, &config.discovery()))?;
            let (matched, labels) = stage(
                "match",
                epoch,
                match_candidates(bundle, &found, &sources, config.gamma, config.temperature),
            )?;
            if let Some(dir) = out {
                stage("cluster", epoch, write_json(&dir.join(CLUSTERS_FILE), &model))?;
                stage("discover", epoch, write_json(&dir.join(CANDIDATES_FILE), &found))?;
                stage("discover", epoch, write_json(&dir.join(SOURCE_PROFILES_FILE), &sources))?;
                stage("match", epoch, write_json(&dir.join(MATCHES_FILE), &matched))?;
            }
            labels
        }
        Strategy::Oracle => stage("match", epoch, zeroshot::oracle_extend(&shared, ground_truth))?,
        Strategy::Threshold | Strategy::InstanceExtension => shared,
    };
    let predictions = stage(
        "predict",
        epoch,
        predict_targets(bundle, &embeddings, &labels, config.strategy, config),
    )?;
    if let Some(dir) = out {
        stage("predict", epoch, write_json(&dir.join(LABEL_SET_FILE), &labels))?;
        stage("predict", epoch, write_predictions(&dir.join(PREDICTIONS_FILE), &predictions))?;
    }
    Ok(Pass { labels, predictions })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `epochs_outer` rounds of discovery and adapter training, then a
/// final discovery pass whose predictions are evaluated. With `out`, every
/// epoch's artifacts go to `out/epoch_NN` and the final ones to `out`.
pub fn run_pipeline(
    bundle: &DatasetBundle,
    ground_truth: Option<&GroundTruth>,
    config: &PipelineConfig,
    out: Option<&Path>,
) -> Result<PipelineReport> {
    config.validate()?;
    if bundle.sources().next().is_none() || bundle.targets().next().is_none() {
        return Err(Error::InvalidConfig("pipeline needs source and target videos".into()));
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join(CONFIG_FILE), config)?;
    }
    let mut params = AdapterParams::identity(bundle.dim);
    let mut loss_traces = Vec::new();
    let epochs = if config.no_train { 0 } else { config.epochs_outer };
    for epoch in 0..epochs {
        let epoch_dir = out.map(|d| d.join(format!("epoch_{epoch:02}")));
        if let Some(dir) = &epoch_dir {
            stage("adapt", epoch, create_dir(dir))?;
        }
        let pass = discovery_pass(bundle, ground_truth, config, &params, epoch, epoch_dir.as_deref())?;
        let pseudo = stage(
            "pseudolabel",
            epoch,
            pseudolabel::select_pseudo_labels(&pass.predictions, config.pseudo_percent),
        )?;
        let pairs = stage(
            "train",
            epoch,
            training_pairs(bundle, &pseudo, &pass.labels, config.include_source_batches),
        )?;
        let train = TrainConfig {
            seed: config.seed.wrapping_add(1_000 + epoch as u64),
            ..config.train
        };
        let (next, trace) = stage("train", epoch, train_adapter(&params, &pairs, &pass.labels, &train))?;
        log::info!(
            "epoch {epoch}: {} labels, {} training pairs, loss {:.4} -> {:.4}",
            pass.labels.len(),
            pairs.len(),
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN)
        );
        if let Some(dir) = &epoch_dir {
            stage("pseudolabel", epoch, write_json(&dir.join(PSEUDO_LABELS_FILE), &pseudo))?;
        }
        params = next;
        loss_traces.push(trace);
    }
    let pass = discovery_pass(bundle, ground_truth, config, &params, epochs, out)?;
    let truth = evaluation_truth(bundle, ground_truth);
    let metrics = match &truth {
        Some(t) => Some(stage(
            "evaluate",
            epochs,
            metrics::evaluate(&pass.predictions, t, &bundle.shared_label_names()),
        )?),
        None => {
            log::warn!("no ground truth available; skipping evaluation");
            None
        }
    };
    if let Some(dir) = out {
        let meta = AdapterMetadata {
            dim: bundle.dim,
            config: config.train,
            loss_trace: loss_traces.iter().flatten().copied().collect(),
        };
        stage("train", epochs, params.save(dir, &meta))?;
        if let Some(m) = &metrics {
            stage("evaluate", epochs, write_json(&dir.join(METRICS_FILE), m))?;
        }
    }
    Ok(PipelineReport {
        predictions: pass.predictions,
        labels: pass.labels,
        adapter: params,
        loss_traces,
        metrics,
    })
}

/// Runs every strategy with the same bundle, seed and settings. The oracle
/// row is `None` without ground truth.
pub fn compare_strategies(
    bundle: &DatasetBundle,
    ground_truth: Option<&GroundTruth>,
    config: &PipelineConfig,
) -> Result<Vec<(String, Option<OpenSetMetrics>)>> {
    if evaluation_truth(bundle, ground_truth).is_none() {
        return Err(Error::GroundTruthUnavailable);
    }
    let mut rows = Vec::new();
    for strategy in Strategy::ALL {
        let run = PipelineConfig {
            strategy,
            ..config.clone()
        };
        let metrics = match run_pipeline(bundle, ground_truth, &run, None) {
            Ok(report) => report.metrics,
            Err(Error::Stage { source, .. }) if matches!(*source, Error::GroundTruthUnavailable) => None,
            Err(e) => return Err(e),
        };
        rows.push((strategy.name().to_string(), metrics));
    }
    Ok(rows)
}

/// Adapter weights from `dir`, identity when `dir` is `None`.
pub fn load_adapter(dir: Option<&Path>, dim: usize) -> Result<AdapterParams> {
    match dir {
        Some(d) => {
            let params = AdapterParams::load(d)?;
            if params.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: params.dim(),
                });
            }
            Ok(params)
        }
        None => Ok(AdapterParams::identity(dim)),
    }
}

