mod common;

use common::naive::{self, to_mat};
use common::random_matrix;
use featmatch::augment::{strong_augment, AugPolicy};
use featmatch::data::{blob_centroids, make_blobs, BlobSpec, DataKind, ImageShape};
use featmatch::kmeans::{kmeans, lloyd, objective, KMeansParams};
use featmatch::schedule::Schedule;
use featmatch::AugF;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), heads_ix in 0usize..3, b in 1usize..6, k in 1usize..9, scale in 0.1f64..20.0) {
        let heads = [1, 2, 4][heads_ix];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let augf = AugF::<f64>::new(8, 8, heads, &mut rng).unwrap();
        let ex = random_matrix(b, 8, -scale, scale, &mut rng);
        let ep = random_matrix(k, 8, -scale, scale, &mut rng);
        let w = augf.attend(ex.view(), ep.view()).unwrap();
        prop_assert_eq!(w.per_head.len(), heads);
        for m in &w.per_head {
            prop_assert_eq!(m.dim(), (b, k));
            for row in m.rows() {
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn augf_matches_loop_oracle(seed in any::<u64>(), heads_ix in 0usize..3) {
        let heads = [1, 2, 4][heads_ix];
        let spec = featmatch::ModelSpec { input_dim: 3, hidden: vec![5], feature_dim: 6, embed_dim: 8, heads, classes: 3 };
        let model = common::random_model(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let protos = common::random_prototypes(3, 2, 6, &mut rng);
        let x = random_matrix(4, 3, -1.0, 1.0, &mut rng);
        let f = model.features(x.view()).unwrap();
        prop_assert!(f.iter().zip(naive::encoder(&model, &to_mat(&x)).concat()).all(|(a, b)| (a - b).abs() < 1e-12));
        let g = model.augf.forward(f.view(), &protos).unwrap();
        let oracle = naive::augf(&model, &to_mat(&f), &protos).concat();
        for (a, b) in g.iter().zip(oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lloyd_objective_never_increases(seed in any::<u64>(), n in 2usize..60, d in 1usize..4, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = random_matrix(n, d, -5.0, 5.0, &mut rng);
        let run = lloyd(pts.view(), k.min(n), &mut rng, 100);
        for w in run.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
        prop_assert!((objective(pts.view(), run.means.view()) - run.objective).abs() < 1e-9);
    }

    #[test]
    fn schedule_is_continuous(pre in 0usize..50, cyc in 1usize..200, conv in 1usize..200) {
        let s = Schedule { pretrain: pre, cycle: cyc, converge: conv, lr_scale: 1.0 };
        // Largest per-iteration change is the steepest segment slope.
        let slope = (4e-2 - 4e-3) / cyc as f64;
        let max_step = slope.max((4e-3 - 4e-4) / pre.max(1) as f64).max((4e-3 - 4e-6) / conv as f64);
        for it in 0..s.total() + 3 {
            let (a, ma) = s.at(it);
            let (b, mb) = s.at(it + 1);
            prop_assert!((a - b).abs() <= max_step + 1e-15);
            prop_assert!((ma - mb).abs() <= 0.1 / cyc as f64 + 1e-15);
        }
    }

    #[test]
    fn image_ops_stay_in_unit_range(seed in any::<u64>()) {
        let shape = ImageShape { channels: 3, height: 5, width: 4 };
        let kind = DataKind::Image(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(6, shape.len(), 0.0, 1.0, &mut rng);
        let policy = AugPolicy::default_for(&kind);
        let (y, _) = strong_augment(x.view(), &kind, &policy, seed).unwrap();
        prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

/// Minimum over all 2-partitions of the within-cluster sum of squares.
fn exhaustive_two_means(points: &[f64]) -> (f64, Vec<f64>) {
    let n = points.len();
    let mut best = (f64::INFINITY, vec![]);
    for mask in 1..(1u32 << n) - 1 {
        let (a, b): (Vec<f64>, Vec<f64>) = (0..n).map(|i| (mask >> i & 1 == 1, points[i])).fold(
            (vec![], vec![]),
            |(mut a, mut b), (left, p)| {
                if left { a.push(p) } else { b.push(p) }
                (a, b)
            },
        );
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sse = |v: &[f64]| { let m = mean(v); v.iter().map(|x| (x - m).powi(2)).sum::<f64>() };
        let total = sse(&a) + sse(&b);
        if total < best.0 {
            let mut means = vec![mean(&a), mean(&b)];
            means.sort_by(f64::total_cmp);
            best = (total, means);
        }
    }
    best
}

#[test]
fn kmeans_fixed_example_matches_exhaustive_partition() {
    let pts = [0.0, 0.2, 3.8, 4.0];
    let (obj, oracle) = exhaustive_two_means(&pts);
    assert!((oracle[0] - 0.1).abs() < 1e-12 && (oracle[1] - 3.9).abs() < 1e-12);
    let x = Array2::from_shape_vec((4, 1), pts.to_vec()).unwrap();
    let run = kmeans(x.view(), 2, 7, KMeansParams::default()).unwrap();
    let mut means: Vec<f64> = run.means.iter().copied().collect();
    means.sort_by(f64::total_cmp);
    assert!((means[0] - oracle[0]).abs() < 1e-9);
    assert!((means[1] - oracle[1]).abs() < 1e-9);
    assert!((run.objective - obj).abs() < 1e-9);
}

/// Restarts make small instances reach the exhaustive optimum.
#[test]
fn kmeans_restarts_reach_global_optimum_on_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hits = 0;
    let trials = 50;
    for t in 0..trials {
        let pts: Vec<f64> = random_matrix(10, 1, 0.0, 10.0, &mut rng).into_iter().collect();
        let (obj, _) = exhaustive_two_means(&pts);
        let x = Array2::from_shape_vec((10, 1), pts).unwrap();
        let run = kmeans(x.view(), 2, t, KMeansParams::default()).unwrap();
        assert!(run.objective >= obj - 1e-9);
        if run.objective <= obj + 1e-9 {
            hits += 1;
        }
    }
    assert!(hits >= trials * 9 / 10, "{hits}/{trials} restarts found the optimum");
}

#[test]
fn blob_class_means_are_within_three_standard_errors() {
    let spec = BlobSpec { classes: 4, per_class: 400, dim: 3, spread: 2.0, noise: 0.5, seed: 5 };
    let ds = make_blobs::<f64>(&spec).unwrap();
    let centroids = blob_centroids(4, 3, 2.0);
    let bound = 3.0 * 0.5 / (400f64).sqrt();
    for c in 0..4 {
        let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        assert_eq!(rows.len(), 400);
        let mean = ds.samples.select(ndarray::Axis(0), &rows).mean_axis(ndarray::Axis(0)).unwrap();
        for j in 0..3 {
            assert!((mean[j] - centroids[[c, j]]).abs() < bound, "class {c} coord {j}");
        }
    }
}

#[test]
fn blob_centroids_lie_on_a_circle() {
    let c = blob_centroids(4, 2, 1.0);
    let expected = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
    for (a, b) in c.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

/// Fraction of samples whose nearest centroid is unchanged by strong augmentation.
fn preserved_fraction(noise: f64) -> f64 {
    let spec = BlobSpec { classes: 4, per_class: 2500, dim: 2, spread: 1.0, noise, seed: 21 };
    let ds = make_blobs::<f64>(&spec).unwrap();
    let centroids = blob_centroids(4, 2, 1.0);
    let nearest = |p: &[f64]| {
        (0..4)
            .min_by(|&a, &b| {
                let d = |c: usize| (0..2).map(|j| (p[j] - centroids[[c, j]]).powi(2)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .unwrap()
    };
    let policy = AugPolicy::default_for(&DataKind::Vector);
    let (aug, _) = strong_augment(ds.samples.view(), &DataKind::Vector, &policy, 3).unwrap();
    let kept = ds
        .samples
        .rows()
        .into_iter()
        .zip(aug.rows())
        .filter(|(a, b)| nearest(a.as_slice().unwrap()) == nearest(b.as_slice().unwrap()))
        .count();
    kept as f64 / ds.len() as f64
}

#[test]
fn strong_vector_augmentation_preserves_blob_labels() {
    let frac = preserved_fraction(0.1);
    assert!(frac >= 0.99, "only {frac} of labels preserved");
}
