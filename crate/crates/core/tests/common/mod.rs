//! Independent loop-based reference implementations used as test oracles.
#![allow(dead_code)]

pub mod fd;
pub mod naive;

use featmatch::experiment::{BlobDataset, DatasetConfig, ExperimentConfig, ModelConfig};
use featmatch::{Model, ModelSpec, PrototypeSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        input_dim: 2,
        hidden: vec![4],
        feature_dim: 4,
        embed_dim: 4,
        heads: 2,
        classes: 3,
    }
}

pub fn random_model(spec: &ModelSpec, seed: u64) -> Model<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::new(spec, &mut rng).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// Rows on the probability simplex.
pub fn random_probs(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = random_matrix(rows, cols, 0.05, 1.0, rng);
    for mut r in m.rows_mut() {
        let s = r.sum();
        r /= s;
    }
    m
}

pub fn random_prototypes(classes: usize, per_class: usize, dim: usize, rng: &mut impl Rng) -> PrototypeSet<f64> {
    let blocks = (0..classes)
        .map(|_| random_matrix(per_class, dim, 0.0, 1.5, rng))
        .collect();
    PrototypeSet::new(blocks, dim, 0).unwrap()
}

/// Small blob run that finishes in well under a second.
pub fn smoke_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetConfig::Blobs(BlobDataset { unlabeled: 512, test_per_class: 100, ..Default::default() }),
        model: ModelConfig { hidden: vec![16], feature_dim: 8, embed_dim: 8, heads: 2 },
        pretrain_epochs: Some(1),
        ..ExperimentConfig::default()
    };
    cfg.train.cycle_iters = 4;
    cfg.train.converge_iters = 0;
    cfg.train.prototypes_per_class = 4;
    cfg
}

