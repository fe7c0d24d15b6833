use super::naive::{self, to_mat};
use super::{random_matrix, random_model, random_probs, random_prototypes, tiny_spec};
use featmatch::losses::LossWeights;
use featmatch::objective::{LossGraph, LossSwitches, StepInputs};
use featmatch::Model;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

fn flat(m: &Model<f64>) -> Vec<f64> {
    m.layers()
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

fn set_param(m: &mut Model<f64>, mut idx: usize, value: f64) {
    for l in m.layers_mut() {
        let nw = l.weight.len();
        if idx < nw {
            *l.weight.iter_mut().nth(idx).unwrap() = value;
            return;
        }
        idx -= nw;
        let nb = l.bias.len();
        if idx < nb {
            l.bias[idx] = value;
            return;
        }
        idx -= nb;
    }
    panic!("parameter index out of range");
}

/// Max relative error between analytic and central-difference gradients of the full objective.
pub fn max_relative_error(seed: u64) -> f64 {
    let spec = tiny_spec();
    let model = random_model(&spec, seed);
    assert!(model.num_params() <= 500);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let protos = random_prototypes(spec.classes, 2, spec.feature_dim, &mut rng);
    let labeled = random_matrix(5, spec.input_dim, -2.0, 2.0, &mut rng);
    let labels = [0, 1, 2, 1, 0];
    let strong = random_matrix(6, spec.input_dim, -2.0, 2.0, &mut rng);
    let targets = random_probs(6, spec.classes, &mut rng);
    let weights = LossWeights::default();

    let graph = LossGraph::record(
        &model,
        Some(&protos),
        StepInputs {
            labeled: labeled.view(),
            labels: &labels,
            strong: strong.view(),
            targets: targets.view(),
        },
        &weights,
        LossSwitches::default(),
    )
    .unwrap();
    let analytic = flat(&graph.backward());

    let (l, s, t) = (to_mat(&labeled), to_mat(&strong), to_mat(&targets));
    let loss = |m: &Model<f64>| naive::total_loss(m, &protos, &l, &labels, &s, &t, weights.con_g, weights.con_f).3;
    assert!((loss(&model) - graph.losses().total).abs() < 1e-12);

    let base = flat(&model);
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (i, &theta) in base.iter().enumerate() {
        set_param(&mut probe, i, theta + EPS);
        let up = loss(&probe);
        set_param(&mut probe, i, theta - EPS);
        let down = loss(&probe);
        set_param(&mut probe, i, theta);
        let numeric = (up - down) / (2.0 * EPS);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

