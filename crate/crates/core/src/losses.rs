//! Pseudo-labels and the classification / consistency losses, evaluated forward only.
//!
//! Gradients of the same quantities come from [`crate::objective::LossGraph`].

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::model::Model;
use crate::nn::{argmax_rows, one_hot};
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;

const PROB_FLOOR: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;

/// Weights of the two consistency terms in the total loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub con_g: f64,
    pub con_f: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            con_g: 0.5,
            con_f: 2.0,
        }
    }
}

impl LossWeights {
    pub fn new(con_g: f64, con_f: f64) -> Result<Self> {
        let w = Self { con_g, con_f };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_g", self.con_g), ("lambda_f", self.con_f)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn check_prob_rows<F: Scalar>(p: ArrayView2<'_, F>, what: &str) -> Result<()> {
    for (i, row) in p.rows().into_iter().enumerate() {
        check_prob_row(row, &format!("{what} row {i}"))?;
    }
    Ok(())
}

fn check_prob_row<F: Scalar>(row: ArrayView1<'_, F>, what: &str) -> Result<()> {
    let sum: f64 = row.iter().map(|v| v.as_f64()).sum();
    if row.iter().any(|v| v.is_nan() || v.as_f64() < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Probability(format!("{what} is not a distribution (sum {sum})")));
    }
    Ok(())
}

/// Cross-entropy `H(t, q) = -Σ_c t_c ln max(q_c, 1e-12)`.
///
/// For a fixed target this differs from KL(t‖q) only by the target entropy.
pub fn divergence<F: Scalar>(target: ArrayView1<'_, F>, pred: ArrayView1<'_, F>) -> Result<F> {
    ensure_dim!(
        target.len() == pred.len(),
        "target has {} classes, prediction {}",
        target.len(),
        pred.len()
    );
    check_prob_row(target, "target")?;
    check_prob_row(pred, "prediction")?;
    Ok(unchecked_divergence(target, pred))
}

fn unchecked_divergence<F: Scalar>(target: ArrayView1<'_, F>, pred: ArrayView1<'_, F>) -> F {
    let floor = F::lit(PROB_FLOOR);
    let mut h = F::zero();
    for (&t, &q) in target.iter().zip(pred.iter()) {
        if t != F::zero() {
            h -= t * q.max(floor).ln();
        }
    }
    h
}

/// Batch mean of [`divergence`]; an empty batch has zero loss.
pub fn mean_divergence<F: Scalar>(targets: ArrayView2<'_, F>, preds: ArrayView2<'_, F>) -> Result<F> {
    ensure_dim!(
        targets.dim() == preds.dim(),
        "targets {:?} and predictions {:?} differ in shape",
        targets.dim(),
        preds.dim()
    );
    check_prob_rows(targets, "target")?;
    check_prob_rows(preds, "prediction")?;
    if targets.nrows() == 0 {
        return Ok(F::zero());
    }
    let sum: F = targets
        .rows()
        .into_iter()
        .zip(preds.rows())
        .map(|(t, q)| unchecked_divergence(t, q))
        .sum();
    Ok(sum / F::lit(targets.nrows() as f64))
}

/// Soft targets computed on the weak view, plus their argmax for the memory bank.
///
/// These are plain values: nothing downstream differentiates through them.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels<F> {
    pub probs: Array2<F>,
    pub hard: Vec<usize>,
}

impl<F: Scalar> PseudoLabels<F> {
    pub fn from_probs(probs: Array2<F>) -> Result<Self> {
        check_prob_rows(probs.view(), "pseudo-label")?;
        let hard = argmax_rows(probs.view());
        Ok(Self { probs, hard })
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }
}

/// `p_g = Clf(AugF(Enc(x_weak)))`.
pub fn pseudo_label<F: Scalar>(
    model: &Model<F>,
    prototypes: Option<&PrototypeSet<F>>,
    x_weak: ArrayView2<'_, F>,
) -> Result<PseudoLabels<F>> {
    let protos = prototypes
        .filter(|p| !p.is_empty())
        .ok_or_else(|| Error::State("pseudo-labels need extracted prototypes".into()))?;
    PseudoLabels::from_probs(model.predict(x_weak, Some(protos))?)
}

/// `p_f = Clf(Enc(x_weak))`, the target used while AugF is inactive.
pub fn image_pseudo_label<F: Scalar>(
    model: &Model<F>,
    x_weak: ArrayView2<'_, F>,
) -> Result<PseudoLabels<F>> {
    PseudoLabels::from_probs(model.predict(x_weak, None)?)
}

fn check_views<F>(p_g: &PseudoLabels<F>, x_strong: ArrayView2<'_, F>) -> Result<()> {
    ensure_dim!(
        p_g.hard.len() == x_strong.nrows(),
        "{} pseudo-labels for {} strong views",
        p_g.hard.len(),
        x_strong.nrows()
    );
    Ok(())
}

/// `H(p_g, Clf(AugF(Enc(x̂))))`, averaged over the batch.
pub fn loss_con_g<F: Scalar>(
    p_g: &PseudoLabels<F>,
    model: &Model<F>,
    prototypes: &PrototypeSet<F>,
    x_strong: ArrayView2<'_, F>,
) -> Result<F> {
    check_views(p_g, x_strong)?;
    let q = model.predict(x_strong, Some(prototypes))?;
    mean_divergence(p_g.probs.view(), q.view())
}

/// `H(p_g, Clf(Enc(x̂)))`, averaged over the batch.
pub fn loss_con_f<F: Scalar>(
    p_g: &PseudoLabels<F>,
    model: &Model<F>,
    x_strong: ArrayView2<'_, F>,
) -> Result<F> {
    check_views(p_g, x_strong)?;
    let q = model.predict(x_strong, None)?;
    mean_divergence(p_g.probs.view(), q.view())
}

/// `H(y, Clf(AugF(Enc(x))))` against one-hot labels, averaged over the batch.
pub fn loss_clf<F: Scalar>(
    labels: &[usize],
    model: &Model<F>,
    prototypes: Option<&PrototypeSet<F>>,
    x: ArrayView2<'_, F>,
) -> Result<F> {
    ensure_dim!(
        labels.len() == x.nrows(),
        "{} labels for {} samples",
        labels.len(),
        x.nrows()
    );
    let y = one_hot(labels, model.classifier.classes())?;
    let q = model.predict(x, prototypes)?;
    mean_divergence(y.view(), q.view())
}

/// `L_clf + λ_g·L_con-g + λ_f·L_con-f`.
pub fn total_loss<F: Scalar>(l_clf: F, l_con_g: F, l_con_f: F, weights: &LossWeights) -> F {
    l_clf + F::lit(weights.con_g) * l_con_g + F::lit(weights.con_f) * l_con_f
}
