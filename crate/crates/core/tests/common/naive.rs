//! Scalar-loop forward passes written directly from the model equations.
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

use featmatch::nn::Linear;
use featmatch::{Model, PrototypeSet};
use ndarray::Array2;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn linear(l: &Linear<f64>, x: &Mat) -> Mat {
    let (din, dout) = (l.weight.nrows(), l.weight.ncols());
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), din);
            (0..dout)
                .map(|j| {
                    let mut acc = l.bias[j];
                    for i in 0..din {
                        acc += row[i] * l.weight[[i, j]];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn relu(x: Mat) -> Mat {
    x.into_iter()
        .map(|r| r.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect())
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn encoder(model: &Model<f64>, x: &Mat) -> Mat {
    let mut h = x.clone();
    for layer in &model.encoder.layers {
        h = relu(linear(layer, &h));
    }
    h
}

pub fn augf(model: &Model<f64>, f: &Mat, protos: &PrototypeSet<f64>) -> Mat {
    let a = &model.augf;
    let heads = a.heads();
    let de = a.embed_dim();
    let dh = de / heads;
    let ex = linear(&a.embed, f);
    let ep = linear(&a.embed, &to_mat(&protos.matrix().to_owned()));
    let mut out = Vec::with_capacity(f.len());
    for (b, e) in ex.iter().enumerate() {
        let mut m = vec![0.0; de];
        for h in 0..heads {
            let lo = h * dh;
            let scores: Vec<f64> = ep
                .iter()
                .map(|p| (lo..lo + dh).map(|k| e[k] * p[k]).sum())
                .collect();
            let w = softmax(&scores);
            for (i, p) in ep.iter().enumerate() {
                for k in lo..lo + dh {
                    m[k] += w[i] * p[k];
                }
            }
        }
        let mut z = e.clone();
        z.extend(m);
        let fa = relu(linear(&a.attend, &vec![z])).remove(0);
        let r = linear(&a.refine, &vec![fa]).remove(0);
        out.push(f[b].iter().zip(&r).map(|(x, y)| (x + y).max(0.0)).collect());
    }
    out
}

pub fn classify(model: &Model<f64>, f: &Mat) -> Mat {
    linear(&model.classifier.linear, f).iter().map(|r| softmax(r)).collect()
}

/// Mean over rows of `-Σ_c t_c log max(q_c, 1e-12)`.
pub fn cross_entropy(targets: &Mat, probs: &Mat) -> f64 {
    let n = targets.len() as f64;
    targets
        .iter()
        .zip(probs)
        .map(|(t, q)| -t.iter().zip(q).map(|(a, b)| a * b.max(1e-12).ln()).sum::<f64>())
        .sum::<f64>()
        / n
}

pub fn one_hot(labels: &[usize], classes: usize) -> Mat {
    labels
        .iter()
        .map(|&y| (0..classes).map(|c| if c == y { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// `(L_clf, L_con_g, L_con_f, total)` with every term switched on.
pub fn total_loss(
    model: &Model<f64>,
    protos: &PrototypeSet<f64>,
    labeled: &Mat,
    labels: &[usize],
    strong: &Mat,
    targets: &Mat,
    lambda_g: f64,
    lambda_f: f64,
) -> (f64, f64, f64, f64) {
    let c = model.classifier.classes();
    let fl = encoder(model, labeled);
    let clf = cross_entropy(&one_hot(labels, c), &classify(model, &augf(model, &fl, protos)));
    let fs = encoder(model, strong);
    let con_g = cross_entropy(targets, &classify(model, &augf(model, &fs, protos)));
    let con_f = cross_entropy(targets, &classify(model, &fs));
    (clf, con_g, con_f, clf + lambda_g * con_g + lambda_f * con_f)
}
