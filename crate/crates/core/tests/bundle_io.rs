use std::fs;
use std::path::Path;

use autolabel::dataset::{
    decode_matrix, encode_matrix, l2_normalize, load_bundle, read_matrix, save_bundle, write_matrix, BundleError,
    Matrix, MANIFEST_FILE, VIDEO_EMBEDDINGS_FILE,
};
use autolabel::synth::{generate, SynthConfig};
use proptest::prelude::*;
use serde_json::Value;

fn small_config(seed: u64, dim: usize, shared: usize, private: usize) -> SynthConfig {
    SynthConfig {
        dim,
        shared_classes: shared,
        private_classes: private,
        videos_per_class: 3,
        frames_per_video: 3,
        attributes_per_frame: 4,
        salient_per_class: 2,
        distractor_vocab: 6,
        seed,
        ..SynthConfig::default()
    }
}

fn saved_bundle(dir: &Path) {
    let (bundle, _) = generate(&small_config(3, 16, 2, 1)).unwrap();
    save_bundle(&bundle, dir).unwrap();
}

fn edit_manifest(dir: &Path, edit: impl FnOnce(&mut Value)) {
    let path = dir.join(MANIFEST_FILE);
    let mut manifest: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    edit(&mut manifest);
    fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bundle_round_trip_is_identity(seed in 0u64..1_000, dim in 12usize..24, shared in 2usize..4, private in 1usize..3) {
        let (bundle, _) = generate(&small_config(seed, dim, shared, private)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&bundle, dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(&loaded, &bundle);
        prop_assert!(loaded.video_embeddings.bit_eq(&bundle.video_embeddings));
    }

    #[test]
    fn matrix_codec_round_trips_bits(rows in 0usize..5, cols in 1usize..6, raw in prop::collection::vec(any::<u32>(), 30)) {
        let data: Vec<f32> = raw.iter().take(rows * cols).map(|&b| f32::from_bits(b)).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let back = decode_matrix(&encode_matrix(&m), "m.bin").unwrap();
        prop_assert!(back.bit_eq(&m));
    }

    #[test]
    fn truncated_matrix_is_rejected(cut in 1usize..16) {
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_matrix(&m);
        let err = decode_matrix(&bytes[..bytes.len() - cut], "m.bin").unwrap_err();
        let is_shape_error = matches!(err, BundleError::ShapeMismatch { .. } | BundleError::MagicMismatch { .. });
        prop_assert!(is_shape_error);
    }

    #[test]
    fn normalization_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let once = l2_normalize(&v).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn out_of_range_index_is_a_typed_error(video in 0usize..9, which in 0usize..3) {
        let dir = tempfile::tempdir().unwrap();
        saved_bundle(dir.path());
        edit_manifest(dir.path(), |m| {
            let v = &mut m["videos"][video];
            match which {
                0 => v["embedding_index"] = 10_000.into(),
                1 => v["frames"][0][0] = 10_000.into(),
                _ => m["shared_labels"][0]["embedding_index"] = 10_000.into(),
            }
        });
        let err = load_bundle(dir.path()).unwrap_err();
        let is_dangling = matches!(err, BundleError::DanglingIndex { .. } | BundleError::ShapeMismatch { .. });
        prop_assert!(is_dangling, "{err}");
    }

    #[test]
    fn nan_entry_is_a_typed_error(row in 0usize..9, col in 0usize..16) {
        let dir = tempfile::tempdir().unwrap();
        saved_bundle(dir.path());
        let path = dir.path().join(VIDEO_EMBEDDINGS_FILE);
        let m = read_matrix(&path).unwrap();
        let mut data = m.data().to_vec();
        data[row * m.cols() + col] = f32::NAN;
        write_matrix(&path, &Matrix::new(m.rows(), m.cols(), data).unwrap()).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        prop_assert!(matches!(err, BundleError::NonFiniteValue { row: r, col: c, .. } if r == row && c == col), "{err}");
    }
}

#[test]
fn row_count_disagreeing_with_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved_bundle(dir.path());
    edit_manifest(dir.path(), |m| {
        let videos = m["videos"].as_array_mut().unwrap();
        let mut extra = videos[0].clone();
        extra["id"] = "extra".into();
        videos.push(extra);
    });
    assert!(matches!(
        load_bundle(dir.path()),
        Err(BundleError::ShapeMismatch { ref file, .. }) if file == VIDEO_EMBEDDINGS_FILE
    ));
}

#[test]
fn duplicate_video_id_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    saved_bundle(dir.path());
    edit_manifest(dir.path(), |m| m["videos"][1]["id"] = m["videos"][0]["id"].clone());
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::DuplicateId { .. })));
}

#[test]
fn garbage_manifest_is_a_json_error() {
    let dir = tempfile::tempdir().unwrap();
    saved_bundle(dir.path());
    fs::write(dir.path().join(MANIFEST_FILE), "{not json").unwrap();
    assert!(matches!(load_bundle(dir.path()), Err(BundleError::Json { .. })));
}
