//! Test error and pseudo-label accuracy.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, UnlabeledSet};
use crate::error::{ensure_dim, Error, Result};
use crate::model::Model;
use crate::nn::argmax_rows;
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;

const EVAL_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Error of `Clf(AugF(Enc(x)))`, or of `Clf(Enc(x))` when no prototypes are given.
    pub error: f64,
    pub error_without_augf: f64,
}

/// Fraction of mismatched predictions.
pub fn error_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    ensure_dim!(
        predicted.len() == truth.len(),
        "{} predictions for {} labels",
        predicted.len(),
        truth.len()
    );
    if truth.is_empty() {
        return Err(Error::Config("cannot score an empty set".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// Argmax predictions, evaluated in chunks to bound attention memory.
pub fn predict_labels<F: Scalar>(
    model: &Model<F>,
    prototypes: Option<&PrototypeSet<F>>,
    x: ArrayView2<'_, F>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(x.nrows());
    for chunk in x.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        out.extend(argmax_rows(model.predict(chunk, prototypes)?.view()));
    }
    Ok(out)
}

pub fn evaluate<F: Scalar>(
    model: &Model<F>,
    prototypes: Option<&PrototypeSet<F>>,
    test: &Dataset<F>,
) -> Result<EvalResult> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let plain = predict_labels(model, None, test.samples.view())?;
    let error_without_augf = error_rate(&plain, &test.labels)?;
    let error = match prototypes.filter(|p| !p.is_empty()) {
        Some(p) => error_rate(&predict_labels(model, Some(p), test.samples.view())?, &test.labels)?,
        None => error_without_augf,
    };
    Ok(EvalResult {
        error,
        error_without_augf,
    })
}

/// Agreement of argmax pseudo-labels with the hidden ground truth.
pub fn pseudo_label_accuracy<F: Scalar>(
    model: &Model<F>,
    prototypes: Option<&PrototypeSet<F>>,
    unlabeled: &UnlabeledSet<F>,
    use_augf: bool,
) -> Result<f64> {
    if unlabeled.is_empty() {
        return Err(Error::Config("no unlabeled samples to score".into()));
    }
    let protos = if use_augf {
        Some(prototypes.filter(|p| !p.is_empty()).ok_or_else(|| {
            Error::State("AugF pseudo-labels need extracted prototypes".into())
        })?)
    } else {
        None
    };
    let predicted = predict_labels(model, protos, unlabeled.samples.view())?;
    Ok(1.0 - error_rate(&predicted, unlabeled.hidden_labels().audit())?)
}
