//! Dense building blocks: affine layers, the relu MLP encoder and the softmax classifier.
//!
//! Every layer keeps an explicit forward trace so that gradients can be
//! accumulated by hand-derived backward passes. Weight matrices are stored
//! `input × output`, so a batch `x` (rows are samples) maps to `x · W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;

/// Natural log of the probability floor used by every cross-entropy in the crate.
pub const LOG_PROB_FLOOR: f64 = -27.631021115928547; // ln(1e-12)

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut sample = || F::lit(rng.random_range(-bound..=bound));
        let weight = Array2::from_shape_simple_fn((input, output), &mut sample);
        let bias = Array1::from_shape_simple_fn(output, &mut sample);
        Self { weight, bias }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        ensure_dim!(
            x.ncols() == self.input_dim(),
            "layer expects {} input columns, got {}",
            self.input_dim(),
            x.ncols()
        );
        Ok(self.apply(x))
    }

    /// Unchecked forward; callers have validated shapes.
    pub(crate) fn apply(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates `dW += xᵀ·dy` and `db += Σ dy` into `grad`, returns `dx = dy·Wᵀ`.
    pub(crate) fn backward(
        &self,
        x: ArrayView2<'_, F>,
        grad_out: ArrayView2<'_, F>,
        grad: &mut Linear<F>,
    ) -> Array2<F> {
        grad.weight += &x.t().dot(&grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.weight.t())
    }

    pub(crate) fn check_shape(&self, input: usize, output: usize, what: &str) -> Result<()> {
        ensure_dim!(
            self.weight.dim() == (input, output) && self.bias.len() == output,
            "{what}: expected weight {input}x{output} and bias {output}, got {:?} and {}",
            self.weight.dim(),
            self.bias.len()
        );
        Ok(())
    }
}

pub fn relu<F: Scalar>(mut x: Array2<F>) -> Array2<F> {
    x.mapv_inplace(|v| v.max(F::zero()));
    x
}

/// Masks `grad` where the relu output is not strictly positive.
pub(crate) fn relu_backward<F: Scalar>(out: &Array2<F>, grad: &mut Array2<F>) {
    Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(logits: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax, clamped below at `ln(1e-12)`.
pub fn log_softmax_rows<F: Scalar>(logits: ArrayView2<'_, F>) -> Array2<F> {
    let floor = F::lit(LOG_PROB_FLOOR);
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        row.mapv_inplace(|v| (v - lse).max(floor));
    }
    out
}

/// Summed cross-entropy `-Σ_rows Σ_c t_c log q_c` of soft targets against
/// `softmax(logits)`, and its gradient with respect to the logits scaled by `scale`.
///
/// Classes whose log-probability sits on the clamp contribute no gradient.
pub(crate) fn cross_entropy_with_grad<F: Scalar>(
    logits: ArrayView2<'_, F>,
    targets: ArrayView2<'_, F>,
    scale: F,
) -> (F, Array2<F>) {
    let floor = F::lit(LOG_PROB_FLOOR);
    let log_q = log_softmax_rows(logits);
    let mut loss = F::zero();
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((lq, t), mut g) in log_q
        .rows()
        .into_iter()
        .zip(targets.rows())
        .zip(grad.rows_mut())
    {
        let mut active_mass = F::zero();
        for (&l, &tc) in lq.iter().zip(t.iter()) {
            loss -= tc * l;
            if l > floor {
                active_mass += tc;
            }
        }
        for ((gj, &l), &tj) in g.iter_mut().zip(lq.iter()).zip(t.iter()) {
            let q = l.exp();
            let own = if l > floor { tj } else { F::zero() };
            *gj = scale * (q * active_mass - own);
        }
    }
    (loss, grad)
}

pub(crate) fn one_hot<F: Scalar>(labels: &[usize], classes: usize) -> Result<Array2<F>> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Config(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        out[[i, y]] = F::one();
    }
    Ok(out)
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<F: Scalar>(probs: ArrayView2<'_, F>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Relu MLP producing nonnegative features: every layer, including the last, is followed by relu.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<F> {
    pub layers: Vec<Linear<F>>,
}

/// Post-activation outputs of every encoder layer; `activations[0]` is the input.
pub(crate) struct EncoderTrace<F> {
    activations: Vec<Array2<F>>,
}

impl<F> EncoderTrace<F> {
    pub(crate) fn output(&self) -> &Array2<F> {
        self.activations.last().expect("trace holds the input")
    }
}

impl<F: Scalar> Encoder<F> {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(input_dim, hidden, feature_dim, |i, o| Linear::init(i, o, rng))
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], feature_dim: usize) -> Result<Self> {
        Self::build(input_dim, hidden, feature_dim, Linear::zeros)
    }

    fn build(
        input_dim: usize,
        hidden: &[usize],
        feature_dim: usize,
        mut make: impl FnMut(usize, usize) -> Linear<F>,
    ) -> Result<Self> {
        if input_dim == 0 || feature_dim == 0 || hidden.contains(&0) {
            return Err(Error::Config(
                "encoder dimensions must all be positive".into(),
            ));
        }
        let dims: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(feature_dim))
            .collect();
        let layers = dims.windows(2).map(|w| make(w[0], w[1])).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Linear<F>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            ensure_dim!(
                pair[0].output_dim() == pair[1].input_dim(),
                "encoder layer widths {} and {} do not chain",
                pair[0].output_dim(),
                pair[1].input_dim()
            );
        }
        for l in &layers {
            ensure_dim!(l.bias.len() == l.output_dim(), "encoder bias length");
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("nonempty").output_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Linear::output_dim)
            .collect()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        ensure_dim!(
            x.ncols() == self.input_dim(),
            "encoder expects {} input columns, got {}",
            self.input_dim(),
            x.ncols()
        );
        let mut h = relu(self.layers[0].apply(x));
        for layer in &self.layers[1..] {
            h = relu(layer.apply(h.view()));
        }
        Ok(h)
    }

    pub(crate) fn forward_traced(&self, x: ArrayView2<'_, F>) -> Result<EncoderTrace<F>> {
        ensure_dim!(
            x.ncols() == self.input_dim(),
            "encoder expects {} input columns, got {}",
            self.input_dim(),
            x.ncols()
        );
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let next = relu(layer.apply(activations.last().unwrap().view()));
            activations.push(next);
        }
        Ok(EncoderTrace { activations })
    }

    /// Backpropagates `grad_features` (w.r.t. the encoder output) into `grads`.
    pub(crate) fn backward(
        &self,
        trace: &EncoderTrace<F>,
        grad_features: Array2<F>,
        grads: &mut Encoder<F>,
    ) {
        let mut grad = grad_features;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            relu_backward(&trace.activations[i + 1], &mut grad);
            let input = trace.activations[i].view();
            let dx = layer.backward(input, grad.view(), &mut grads.layers[i]);
            if i > 0 {
                grad = dx;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<F> {
    pub linear: Linear<F>,
}

impl<F: Scalar> Classifier<F> {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, classes: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::init(feature_dim, classes, rng),
        }
    }

    pub fn zeros(feature_dim: usize, classes: usize) -> Self {
        Self {
            linear: Linear::zeros(feature_dim, classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.linear.output_dim()
    }

    pub fn logits(&self, features: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.linear.forward(features)
    }

    /// Class probabilities, one softmax-normalized row per sample.
    pub fn forward(&self, features: ArrayView2<'_, F>) -> Result<Array2<F>> {
        Ok(softmax_rows(self.logits(features)?.view()))
    }
}
