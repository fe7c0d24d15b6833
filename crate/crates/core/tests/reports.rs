use featmatch::checkpoint::{read_header, Checkpoint};
use featmatch::experiment::{
    run_ablation, run_experiment, run_sensitivity, AblationVariant, BlobDataset, DatasetConfig, ExperimentConfig,
    ImageDataset, ModelConfig, Selection, SweepAxis, REPORT_SCHEMA,
};
use featmatch::trainer::{MetricsLog, METRICS_HEADER};

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetConfig::Blobs(BlobDataset { unlabeled: 256, test_per_class: 50, validation_per_class: 20, ..Default::default() }),
        model: ModelConfig { hidden: vec![8], feature_dim: 8, embed_dim: 8, heads: 2 },
        pretrain_epochs: Some(1),
        ..ExperimentConfig::default()
    };
    cfg.train.cycle_iters = 4;
    cfg.train.converge_iters = 2;
    cfg.train.prototypes_per_class = 3;
    cfg
}

fn validator() -> jsonschema::Validator {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[test]
fn run_writes_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.output_dir = Some(dir.path().to_path_buf());
    cfg.checkpoint_every = Some(1);
    let out = run_experiment(&cfg).unwrap();

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let v = validator();
    let errors: Vec<String> = v.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);

    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER.join(","));
    let log = MetricsLog::read_csv(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(log.rows.len(), out.metrics.rows.len());

    let bytes = std::fs::read(dir.path().join("checkpoint.bin")).unwrap();
    let header = read_header(&bytes).unwrap();
    assert_eq!(header.iteration as usize, out.report.result.iterations);
    assert_eq!(header.config_hash, cfg.hash().unwrap());
    assert_eq!(Checkpoint::<f64>::from_bytes(&bytes).unwrap(), out.checkpoint);
}

#[test]
fn schema_rejects_malformed_reports() {
    let out = run_experiment(&tiny()).unwrap();
    let mut report = serde_json::to_value(&out.report).unwrap();
    let v = validator();
    assert!(v.is_valid(&report));
    report["result"]["test_error"] = serde_json::json!(1.5);
    assert!(!v.is_valid(&report));
    report["result"]["test_error"] = serde_json::json!(0.5);
    report["config_hash"] = serde_json::json!("xyz");
    assert!(!v.is_valid(&report));
}

#[test]
fn best_validation_selection_reports_a_trained_epoch() {
    let mut cfg = tiny();
    cfg.selection = Selection::BestValidation;
    let out = run_experiment(&cfg).unwrap();
    let r = &out.report.result;
    assert!(r.validation_error.is_some());
    assert!(r.selected_epoch >= 1 && r.selected_epoch <= r.epochs);
    assert_eq!(out.checkpoint.header.epoch as usize, r.selected_epoch);
}

#[test]
fn missing_image_file_is_a_clean_error() {
    let mut cfg = tiny();
    cfg.dataset = DatasetConfig::BinaryImages(ImageDataset {
        train: "/nonexistent/train.bin".into(),
        test: "/nonexistent/test.bin".into(),
        shifted: None,
        labels: 10,
        classes: 10,
        shape: featmatch::data::BinaryLayout::cifar10().shape,
        validation_fraction: 0.0,
    });
    let err = run_experiment(&cfg).err().expect("missing file must fail");
    assert!(err.to_string().contains("/nonexistent/train.bin"));
}

#[test]
fn image_experiment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let shape = featmatch::ImageShape { channels: 3, height: 4, width: 4 };
    let mut bytes = Vec::new();
    for i in 0..96u32 {
        let class = (i % 2) as u8;
        bytes.push(class);
        bytes.extend((0..48u32).map(|j| if class == 0 { (j * 5 % 128) as u8 } else { 128 + (j * 3 % 127) as u8 }));
    }
    let train = dir.path().join("train.bin");
    let test = dir.path().join("test.bin");
    std::fs::write(&train, &bytes).unwrap();
    std::fs::write(&test, &bytes[..49 * 10]).unwrap();
    let mut cfg = tiny();
    cfg.dataset = DatasetConfig::BinaryImages(ImageDataset {
        train,
        test,
        shifted: None,
        labels: 8,
        classes: 2,
        shape,
        validation_fraction: 0.0,
    });
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.report.result.labeled, 8);
    assert_eq!(out.report.result.unlabeled, 88);
    assert!((0.0..=1.0).contains(&out.report.result.test_error));
}

#[test]
fn ablation_emits_four_rows_with_seed_means() {
    let table = run_ablation(&tiny(), 2).unwrap();
    let variants: Vec<_> = table.rows.iter().map(|r| r.variant).collect();
    assert_eq!(variants, AblationVariant::ALL);
    for row in &table.rows {
        assert_eq!(row.errors.len(), 2);
        assert!((row.mean - (row.errors[0] + row.errors[1]) / 2.0).abs() < 1e-15);
    }
    let text = table.to_string();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn sweep_persists_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.output_dir = Some(dir.path().to_path_buf());
    let table = run_sensitivity(&cfg, SweepAxis::Pk, &[1, 5, 10, 20]).unwrap();
    assert_eq!(table.rows.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("sweep_pk.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let single = run_sensitivity(&tiny(), SweepAxis::Ip, &[4]).unwrap();
    assert_eq!(single.rows.len(), 1);
}
