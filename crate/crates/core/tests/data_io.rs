use std::io::Write;

use featmatch::augment::{apply_op, strong_augment, AugPolicy};
use featmatch::data::{
    load_binary_images, make_blobs, mix_domains, split_labeled, BinaryLayout, BlobSpec, DataKind, Domain,
    ImageShape, UnlabeledSet,
};
use featmatch::Error;

fn layout_2x2() -> BinaryLayout {
    BinaryLayout { shape: ImageShape { channels: 3, height: 2, width: 2 }, classes: 10 }
}

fn write_tmp(bytes: &[u8]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(bytes).unwrap();
    f
}

#[test]
fn two_handwritten_records() {
    let mut bytes = vec![3u8];
    bytes.extend((0..12).map(|i| i * 20));
    bytes.push(9);
    bytes.extend([255u8; 12]);
    let f = write_tmp(&bytes);
    let ds = load_binary_images::<f64>(f.path(), &layout_2x2()).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.labels, vec![3, 9]);
    // channel-planar: first four values are the red plane
    assert_eq!(ds.samples[[0, 0]], 0.0);
    assert_eq!(ds.samples[[0, 5]], 100.0 / 255.0);
    assert_eq!(ds.samples[[0, 11]], 220.0 / 255.0);
    assert!(ds.samples.row(1).iter().all(|&v| v == 1.0));
    assert_eq!(ds.kind, DataKind::Image(layout_2x2().shape));
}

#[test]
fn empty_file_is_empty_dataset() {
    let f = write_tmp(&[]);
    assert!(load_binary_images::<f32>(f.path(), &layout_2x2()).unwrap().is_empty());
}

#[test]
fn truncated_file_and_bad_label_are_format_errors() {
    let f = write_tmp(&[1u8; 20]);
    assert!(matches!(load_binary_images::<f64>(f.path(), &layout_2x2()), Err(Error::Format(_))));
    let mut bytes = vec![10u8];
    bytes.extend([0u8; 12]);
    let f = write_tmp(&bytes);
    assert!(matches!(load_binary_images::<f64>(f.path(), &layout_2x2()), Err(Error::Format(_))));
}

#[test]
fn missing_file_reports_the_path() {
    let err = load_binary_images::<f64>("/nonexistent/featmatch.bin".as_ref(), &layout_2x2()).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/featmatch.bin"));
}

#[test]
fn cifar_layout_record_size() {
    assert_eq!(BinaryLayout::cifar10().record_len(), 3073);
}

#[test]
fn ten_classes_of_250_labels() {
    let ds = make_blobs::<f64>(&BlobSpec { classes: 10, per_class: 40, dim: 3, spread: 1.0, noise: 0.1, seed: 0 }).unwrap();
    let (l, u) = split_labeled(&ds, 250, 1).unwrap();
    for c in 0..10 {
        assert_eq!(l.labels.iter().filter(|&&y| y == c).count(), 25);
    }
    assert_eq!(u.len(), 150);
    assert!(matches!(split_labeled(&ds, 255, 1), Err(Error::Config(_))));
}

#[test]
fn mixing_keeps_size_and_replaces_exact_counts() {
    let spec = BlobSpec { classes: 4, per_class: 25, dim: 2, spread: 1.0, noise: 0.2, seed: 3 };
    let target = UnlabeledSet::from_dataset(make_blobs::<f64>(&spec).unwrap());
    let shifted = UnlabeledSet::from_dataset(
        featmatch::data::make_shifted_blobs::<f64>(&spec, &featmatch::data::DomainShift { rotation_deg: 30.0, scale: 1.2, offset: 0.5, noise_inflation: 2.0 }).unwrap(),
    );
    for (r, expect) in [(0.0, 0), (0.25, 25), (0.5, 50), (0.75, 75)] {
        let mixed = mix_domains(&target, &shifted, r, 9).unwrap();
        assert_eq!(mixed.len(), 100);
        assert_eq!(mixed.count_domain(Domain::Shifted), expect);
        assert_eq!(mixed.count_domain(Domain::Target), 100 - expect);
    }
    assert_eq!(mix_domains(&target, &shifted, 0.0, 9).unwrap(), target);
}

#[test]
fn strong_augmentation_replays_from_its_log() {
    let shape = ImageShape { channels: 3, height: 4, width: 4 };
    for kind in [DataKind::Vector, DataKind::Image(shape)] {
        let width = match kind { DataKind::Vector => 3, DataKind::Image(s) => s.len() };
        let x = ndarray::Array2::from_shape_fn((8, width), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let policy = AugPolicy::default_for(&kind);
        let (y, log) = strong_augment(x.view(), &kind, &policy, 42).unwrap();
        let (y2, log2) = strong_augment(x.view(), &kind, &policy, 42).unwrap();
        assert_eq!(y, y2);
        assert_eq!(log, log2);
        for (i, ops) in log.iter().enumerate() {
            assert_eq!(ops.len(), 2);
            let mut row = x.row(i).to_vec();
            for op in ops {
                assert!(op.magnitude.abs() <= 10.0);
                apply_op(&mut row, &kind, op).unwrap();
            }
            assert_eq!(row, y.row(i).to_vec());
        }
    }
}
