//! File round trips and corruption handling for datasets and checkpoints.

use mcgid::dataset::{self, Dataset, Manifest, Sample};
use mcgid::nn::{load_model, load_model_for, save_model, Model, ModelSpec};
use mcgid::Error;

fn small_dataset() -> Dataset {
    let n = 4;
    let samples = (0..6)
        .map(|i| Sample {
            channels: (0..4 * n * n).map(|k| ((i * 31 + k) as f32 * 0.173).sin().abs() + f32::EPSILON * i as f32).collect(),
            label: i % 3,
            window_origin: (i % 2, i / 2),
            env_field: 8000.0 * (1 + i % 2) as f64,
            segment_id: i / 3,
        })
        .collect();
    Dataset::new(samples, vec!["a".into(), "b".into(), "c".into()], n, Manifest { config_hash: 0xfeed, seed: 9 }).unwrap()
}

fn spec() -> ModelSpec {
    ModelSpec { in_channels: 4, input_size: 8, stem_channels: 4, growth: 2, block_layers: [1, 1, 1], bottleneck: 2, se_reduction: 2, n_classes: 3 }
}

#[test]
fn dataset_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/ds.bin");
    let ds = small_dataset();
    dataset::save(&ds, &path).unwrap();
    let back = dataset::load(&path).unwrap();
    assert_eq!(back, ds);
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        assert!(a.channels.iter().zip(&b.channels).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupted_dataset_files_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.bin");
    dataset::save(&small_dataset(), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut flipped = good.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(dataset::load(&path), Err(Error::Checksum { .. })));

    let mut bumped = good.clone();
    bumped[8] = bumped[8].wrapping_add(1);
    std::fs::write(&path, &bumped).unwrap();
    match dataset::load(&path) {
        Err(e @ Error::VersionMismatch { found: 2, expected: 1 }) => {
            let msg = e.to_string();
            assert!(msg.contains('2') && msg.contains('1'), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }

    std::fs::write(&path, &good[..good.len() - 3]).unwrap();
    assert!(matches!(dataset::load(&path), Err(Error::Truncated(_))));

    let mut magic = good;
    magic[0] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert!(matches!(dataset::load(&path), Err(Error::BadMagic { .. })));
}

#[test]
fn checkpoint_file_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let model = Model::<f32>::new(spec(), 4).unwrap();
    save_model(&model, &path).unwrap();
    let back: Model<f32> = load_model_for(&path, &spec()).unwrap();
    let ds = small_dataset();
    let batch: Vec<f32> = ds.samples[0].channels.iter().flat_map(|v| [*v; 4]).take(spec().input_len()).collect();
    let a = model.predict(&batch).unwrap();
    let b = back.predict(&batch).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_model(&Model::<f32>::new(spec(), 4).unwrap(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 20;
    bytes[last] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model::<f32>(&path), Err(Error::Checksum { .. })));
    std::fs::write(&path, &bytes[..40]).unwrap();
    assert!(matches!(load_model::<f32>(&path), Err(Error::Truncated(_))));
}
