mod common;

use std::fs;

use autolabel::adapter::AdapterParams;
use autolabel::pipeline::{self, run_pipeline, PipelineConfig, Strategy};
use autolabel::synth::generate;
use autolabel::zeroshot::{predict, ExtendedLabelSet};
use autolabel::Error;
use common::clean_synth;

fn quick() -> PipelineConfig {
    let mut config = PipelineConfig {
        epochs_outer: 2,
        seed: 3,
        ..PipelineConfig::default()
    };
    config.train.epochs = 3;
    config
}

#[test]
fn zero_outer_epochs_is_plain_zero_shot() {
    let (bundle, _) = generate(&clean_synth(3, 2, 8, 0.1, 5)).unwrap();
    let config = PipelineConfig {
        epochs_outer: 0,
        ..quick()
    };
    let report = run_pipeline(&bundle, None, &config, None).unwrap();
    assert_eq!(report.adapter, AdapterParams::identity(bundle.dim));
    assert!(report.loss_traces.is_empty());

    // The same stages by hand on unadapted embeddings.
    let embeddings = pipeline::target_embeddings(&bundle, None).unwrap();
    let model = pipeline::cluster_targets(&embeddings, config.num_clusters(&bundle), config.seed, config.max_iter).unwrap();
    let (found, sources) = pipeline::discover(&bundle, &model, &config.discovery()).unwrap();
    let (_, labels) = pipeline::match_candidates(&bundle, &found, &sources, config.gamma, config.temperature).unwrap();
    let expected: Vec<_> = pipeline::targets(&bundle)
        .iter()
        .zip(&embeddings)
        .map(|(v, x)| predict(&v.id, x, &labels).unwrap())
        .collect();
    assert_eq!(report.labels, labels);
    assert_eq!(report.predictions, expected);
}

#[test]
fn artifacts_are_written_with_fixed_names() {
    let (bundle, truth) = generate(&clean_synth(3, 2, 8, 0.1, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&bundle, Some(&truth), &quick(), Some(dir.path())).unwrap();
    for name in [
        pipeline::CLUSTERS_FILE,
        pipeline::CANDIDATES_FILE,
        pipeline::SOURCE_PROFILES_FILE,
        pipeline::MATCHES_FILE,
        pipeline::LABEL_SET_FILE,
        pipeline::PREDICTIONS_FILE,
        pipeline::METRICS_FILE,
        pipeline::CONFIG_FILE,
        "adapter.json",
        "adapter_weight.bin",
        "adapter_bias.bin",
        "epoch_00/pseudolabels.json",
        "epoch_01/clusters.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let predictions = pipeline::read_predictions(&dir.path().join(pipeline::PREDICTIONS_FILE)).unwrap();
    assert_eq!(predictions, report.predictions);
    assert_eq!(report.loss_traces.len(), 2);
}

#[test]
fn threshold_without_training_skips_discovery() {
    let (bundle, _) = generate(&clean_synth(3, 2, 8, 0.05, 5)).unwrap();
    let config = PipelineConfig {
        strategy: Strategy::Threshold,
        no_train: true,
        ..quick()
    };
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&bundle, None, &config, Some(dir.path())).unwrap();
    assert!(!dir.path().join(pipeline::CLUSTERS_FILE).exists());
    assert!(!dir.path().join("epoch_00").exists());
    assert!(report.labels.private_candidates.is_empty());
    assert!(report.metrics.is_some());
}

#[test]
fn stage_failures_name_the_stage_and_epoch() {
    let (bundle, _) = generate(&clean_synth(2, 1, 2, 0.1, 5)).unwrap();
    let config = PipelineConfig {
        clusters: Some(50),
        ..quick()
    };
    match run_pipeline(&bundle, None, &config, None) {
        Err(Error::Stage { stage, epoch, source }) => {
            assert_eq!((stage, epoch), ("cluster", 0));
            assert!(matches!(*source, Error::TooFewPoints { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn oracle_needs_ground_truth() {
    let (bundle, _) = generate(&clean_synth(2, 1, 4, 0.1, 5)).unwrap();
    let config = PipelineConfig {
        strategy: Strategy::Oracle,
        ..quick()
    };
    let err = run_pipeline(&bundle, None, &config, None).unwrap_err();
    assert!(err.is_validation());
    let rows = pipeline::compare_strategies(&bundle, None, &quick()).unwrap();
    assert_eq!(rows[0].0, "oracle");
    assert!(rows[0].1.is_none());
    assert!(rows[1..].iter().all(|(_, m)| m.is_some()));
}

#[test]
fn same_inputs_same_metrics_bytes() {
    let (bundle, truth) = generate(&clean_synth(3, 2, 8, 0.1, 9)).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&bundle, Some(&truth), &quick(), Some(a.path())).unwrap();
    run_pipeline(&bundle, Some(&truth), &quick(), Some(b.path())).unwrap();
    for name in [pipeline::METRICS_FILE, pipeline::PREDICTIONS_FILE, "adapter_weight.bin"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn overriding_candidate_embeddings_changes_only_private_rows() {
    let (bundle, _) = generate(&clean_synth(3, 2, 8, 0.05, 5)).unwrap();
    let report = run_pipeline(&bundle, None, &PipelineConfig { epochs_outer: 0, ..quick() }, None).unwrap();
    let mut labels: ExtendedLabelSet = report.labels.clone();
    let n = labels.private_candidates.len();
    assert!(n > 0);
    let rows: Vec<Vec<f32>> = (0..n).map(|i| {
        let mut r = vec![0.0f32; bundle.dim];
        r[i] = 1.0;
        r
    }).collect();
    labels
        .override_private_embeddings(&autolabel::dataset::Matrix::from_rows(bundle.dim, &rows).unwrap())
        .unwrap();
    assert_eq!(labels.shared, report.labels.shared);
    assert_eq!(labels.private_candidates[0].embedding[0], 1.0);
    let wrong = autolabel::dataset::Matrix::from_rows(bundle.dim, &rows[..n - 1]).unwrap();
    assert!(labels.override_private_embeddings(&wrong).is_err());
}
