//! Differentiable training objective.
//!
//! [`LossGraph::record`] runs every forward branch of one training step and
//! keeps the intermediate activations; [`LossGraph::backward`] turns them into
//! parameter gradients. Pseudo-label targets enter as plain values, so no
//! gradient reaches the branch that produced them, and prototypes are constants.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::augf::AugFTrace;
use crate::error::{ensure_dim, Result};
use crate::losses::{check_prob_rows, LossWeights};
use crate::model::Model;
use crate::nn::{cross_entropy_with_grad, one_hot, softmax_rows, EncoderTrace};
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;

/// Which components of the objective are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossSwitches {
    pub use_augf: bool,
    pub use_con_f: bool,
    pub use_con_g: bool,
}

impl Default for LossSwitches {
    fn default() -> Self {
        Self {
            use_augf: true,
            use_con_f: true,
            use_con_g: true,
        }
    }
}

/// One step's worth of (already augmented) inputs.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs<'a, F> {
    /// Weakly augmented labeled samples.
    pub labeled: ArrayView2<'a, F>,
    pub labels: &'a [usize],
    /// Strongly augmented unlabeled samples.
    pub strong: ArrayView2<'a, F>,
    /// Soft targets computed on the weak unlabeled view.
    pub targets: ArrayView2<'a, F>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<F> {
    pub clf: F,
    pub con_g: F,
    pub con_f: F,
    pub total: F,
}

struct LabeledBranch<F> {
    enc: EncoderTrace<F>,
    augf: Option<AugFTrace<F>>,
    d_logits: Array2<F>,
}

struct StrongBranch<F> {
    enc: EncoderTrace<F>,
    d_logits_f: Option<Array2<F>>,
    augf: Option<(AugFTrace<F>, Array2<F>)>,
}

pub struct LossGraph<'m, F> {
    model: &'m Model<F>,
    prototypes: Option<&'m PrototypeSet<F>>,
    labeled: Option<LabeledBranch<F>>,
    strong: Option<StrongBranch<F>>,
    losses: LossBreakdown<F>,
}

impl<'m, F: Scalar> LossGraph<'m, F> {
    /// Evaluates the objective.
    ///
    /// AugF participates only when `switches.use_augf` is set and a nonempty
    /// prototype set is supplied. Without it, the image-only consistency term
    /// `H(p, Clf(Enc(x̂)))` stands in for the feature consistency terms and is
    /// weighted by `λ_f`.
    pub fn record(
        model: &'m Model<F>,
        prototypes: Option<&'m PrototypeSet<F>>,
        inputs: StepInputs<'_, F>,
        weights: &LossWeights,
        switches: LossSwitches,
    ) -> Result<Self> {
        weights.validate()?;
        ensure_dim!(
            inputs.labeled.nrows() == inputs.labels.len(),
            "{} labeled samples with {} labels",
            inputs.labeled.nrows(),
            inputs.labels.len()
        );
        ensure_dim!(
            inputs.strong.nrows() == inputs.targets.nrows(),
            "{} strong views but {} pseudo-label rows",
            inputs.strong.nrows(),
            inputs.targets.nrows()
        );
        ensure_dim!(
            inputs.targets.ncols() == model.classifier.classes(),
            "pseudo-labels have {} classes, model {}",
            inputs.targets.ncols(),
            model.classifier.classes()
        );
        check_prob_rows(inputs.targets, "pseudo-label")?;

        let prototypes = prototypes.filter(|p| switches.use_augf && !p.is_empty());
        let augf_active = prototypes.is_some();
        let con_g_on = augf_active && switches.use_con_g;
        let con_f_on = switches.use_con_f || !augf_active;

        let mut losses = LossBreakdown::default();

        let labeled = if inputs.labeled.nrows() > 0 {
            let b = F::lit(inputs.labeled.nrows() as f64);
            let enc = model.encoder.forward_traced(inputs.labeled)?;
            let augf = match prototypes {
                Some(p) => Some(model.augf.forward_traced(enc.output().view(), p)?),
                None => None,
            };
            let clf_in = augf.as_ref().map_or(enc.output(), |t| t.output());
            let logits = model.classifier.linear.apply(clf_in.view());
            let y = one_hot::<F>(inputs.labels, model.classifier.classes())?;
            let (sum, d_logits) = cross_entropy_with_grad(logits.view(), y.view(), b.recip());
            losses.clf = sum / b;
            Some(LabeledBranch { enc, augf, d_logits })
        } else {
            None
        };

        let strong = if inputs.strong.nrows() > 0 {
            let b = F::lit(inputs.strong.nrows() as f64);
            let enc = model.encoder.forward_traced(inputs.strong)?;
            let d_logits_f = if con_f_on {
                let logits = model.classifier.linear.apply(enc.output().view());
                let scale = F::lit(weights.con_f) / b;
                let (sum, d) = cross_entropy_with_grad(logits.view(), inputs.targets, scale);
                losses.con_f = sum / b;
                Some(d)
            } else {
                None
            };
            let augf = match prototypes {
                Some(p) if con_g_on => {
                    let trace = model.augf.forward_traced(enc.output().view(), p)?;
                    let logits = model.classifier.linear.apply(trace.output().view());
                    let scale = F::lit(weights.con_g) / b;
                    let (sum, d) = cross_entropy_with_grad(logits.view(), inputs.targets, scale);
                    losses.con_g = sum / b;
                    Some((trace, d))
                }
                _ => None,
            };
            Some(StrongBranch {
                enc,
                d_logits_f,
                augf,
            })
        } else {
            None
        };

        losses.total = crate::losses::total_loss(losses.clf, losses.con_g, losses.con_f, weights);
        Ok(Self {
            model,
            prototypes,
            labeled,
            strong,
            losses,
        })
    }

    pub fn losses(&self) -> LossBreakdown<F> {
        self.losses
    }

    /// Whether the AugF module took part in this graph.
    pub fn used_augf(&self) -> bool {
        self.prototypes.is_some()
    }

    /// Encoder features of the labeled batch.
    pub fn labeled_features(&self) -> Option<&Array2<F>> {
        self.labeled.as_ref().map(|l| l.enc.output())
    }

    /// Class probabilities of the labeled branch.
    pub fn labeled_probs(&self) -> Option<Array2<F>> {
        let l = self.labeled.as_ref()?;
        let input = l.augf.as_ref().map_or(l.enc.output(), |t| t.output());
        Some(softmax_rows(self.model.classifier.linear.apply(input.view()).view()))
    }

    /// Gradient of the total loss with respect to every model parameter.
    pub fn backward(&self) -> Model<F> {
        let model = self.model;
        let mut grads = model.zeros_like();
        if let Some(lab) = &self.labeled {
            let clf_in = lab.augf.as_ref().map_or(lab.enc.output(), |t| t.output());
            let mut d_f = model.classifier.linear.backward(
                clf_in.view(),
                lab.d_logits.view(),
                &mut grads.classifier.linear,
            );
            if let (Some(trace), Some(p)) = (&lab.augf, self.prototypes) {
                d_f = model.augf.backward(trace, p, &d_f, &mut grads.augf);
            }
            model.encoder.backward(&lab.enc, d_f, &mut grads.encoder);
        }
        if let Some(st) = &self.strong {
            let mut d_f = Array2::zeros(st.enc.output().raw_dim());
            if let Some(d_logits) = &st.d_logits_f {
                d_f += &model.classifier.linear.backward(
                    st.enc.output().view(),
                    d_logits.view(),
                    &mut grads.classifier.linear,
                );
            }
            if let (Some((trace, d_logits)), Some(p)) = (&st.augf, self.prototypes) {
                let d_g = model.classifier.linear.backward(
                    trace.output().view(),
                    d_logits.view(),
                    &mut grads.classifier.linear,
                );
                d_f += &model.augf.backward(trace, p, &d_g, &mut grads.augf);
            }
            model.encoder.backward(&st.enc, d_f, &mut grads.encoder);
        }
        grads
    }
}
