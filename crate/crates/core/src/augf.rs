//! Learned feature refinement and augmentation by attention over class prototypes.
//!
//! For features `f_x` and prototypes `f_p`:
//!
//! ```text
//! e_x = φ_e(f_x),  e_p = φ_e(f_p)                       (shared linear embedding)
//! w^h = softmax_i(e_x^h · e_p,i^h)                      (per head, over all prototypes)
//! m   = concat_h Σ_i w_i^h e_p,i^h
//! f_a = relu(φ_a([e_x, m]))
//! g_x = relu(f_x + φ_r(f_a))
//! ```
//!
//! Heads split the embedding into equal contiguous slices. Prototypes are
//! constants: no gradient is produced for them.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::nn::{relu, relu_backward, softmax_rows, Linear};
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;

#[derive(Debug)]
pub struct AugF<F> {
    /// φ_e: `d_f → d_e`, linear.
    pub embed: Linear<F>,
    /// φ_a: `2·d_e → d_f`, followed by relu.
    pub attend: Linear<F>,
    /// φ_r: `d_f → d_f`, linear; the relu comes after the residual sum.
    pub refine: Linear<F>,
    heads: usize,
    calls: AtomicU64,
}

impl<F: Clone> Clone for AugF<F> {
    fn clone(&self) -> Self {
        Self {
            embed: self.embed.clone(),
            attend: self.attend.clone(),
            refine: self.refine.clone(),
            heads: self.heads,
            calls: AtomicU64::new(self.calls.load(Ordering::Relaxed)),
        }
    }
}

impl<F: PartialEq> PartialEq for AugF<F> {
    fn eq(&self, other: &Self) -> bool {
        self.embed == other.embed
            && self.attend == other.attend
            && self.refine == other.refine
            && self.heads == other.heads
    }
}

/// Per-head attention weights, each `B × K` with rows on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<F> {
    pub per_head: Vec<Array2<F>>,
}

pub(crate) struct AugFTrace<F> {
    f_x: Array2<F>,
    e_x: Array2<F>,
    e_p: Array2<F>,
    weights: AttentionWeights<F>,
    z: Array2<F>,
    f_a: Array2<F>,
    g: Array2<F>,
}

impl<F> AugFTrace<F> {
    pub(crate) fn output(&self) -> &Array2<F> {
        &self.g
    }
}

impl<F: Scalar> AugF<F> {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        embed_dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_dims(feature_dim, embed_dim, heads)?;
        Ok(Self::from_parts(
            Linear::init(feature_dim, embed_dim, rng),
            Linear::init(2 * embed_dim, feature_dim, rng),
            Linear::init(feature_dim, feature_dim, rng),
            heads,
        ))
    }

    pub fn zeros(feature_dim: usize, embed_dim: usize, heads: usize) -> Result<Self> {
        Self::check_dims(feature_dim, embed_dim, heads)?;
        Ok(Self::from_parts(
            Linear::zeros(feature_dim, embed_dim),
            Linear::zeros(2 * embed_dim, feature_dim),
            Linear::zeros(feature_dim, feature_dim),
            heads,
        ))
    }

    /// Assembles a module from explicit layers, validating every shape.
    pub fn from_layers(
        embed: Linear<F>,
        attend: Linear<F>,
        refine: Linear<F>,
        heads: usize,
    ) -> Result<Self> {
        let d_f = embed.input_dim();
        let d_e = embed.output_dim();
        Self::check_dims(d_f, d_e, heads)?;
        embed.check_shape(d_f, d_e, "φ_e")?;
        attend.check_shape(2 * d_e, d_f, "φ_a")?;
        refine.check_shape(d_f, d_f, "φ_r")?;
        Ok(Self::from_parts(embed, attend, refine, heads))
    }

    fn from_parts(embed: Linear<F>, attend: Linear<F>, refine: Linear<F>, heads: usize) -> Self {
        Self {
            embed,
            attend,
            refine,
            heads,
            calls: AtomicU64::new(0),
        }
    }

    fn check_dims(feature_dim: usize, embed_dim: usize, heads: usize) -> Result<()> {
        if feature_dim == 0 || embed_dim == 0 || heads == 0 {
            return Err(Error::Config("AugF dimensions and head count must be positive".into()));
        }
        if !embed_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "embedding width {embed_dim} is not divisible by {heads} heads"
            )));
        }
        Ok(())
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn feature_dim(&self) -> usize {
        self.embed.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.output_dim()
    }

    /// Number of full forward passes evaluated so far.
    pub fn forward_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn embed(&self, f: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.embed.forward(f)
    }

    pub fn attend(
        &self,
        e_x: ArrayView2<'_, F>,
        proto_embeddings: ArrayView2<'_, F>,
    ) -> Result<AttentionWeights<F>> {
        if proto_embeddings.nrows() == 0 {
            return Err(Error::State("no prototypes have been extracted".into()));
        }
        let d_e = self.embed_dim();
        ensure_dim!(
            e_x.ncols() == d_e && proto_embeddings.ncols() == d_e,
            "attention expects embeddings of width {d_e}, got {} and {}",
            e_x.ncols(),
            proto_embeddings.ncols()
        );
        Ok(self.attention(e_x, proto_embeddings))
    }

    fn attention(&self, e_x: ArrayView2<'_, F>, e_p: ArrayView2<'_, F>) -> AttentionWeights<F> {
        let dh = self.embed_dim() / self.heads;
        let per_head = (0..self.heads)
            .map(|h| {
                let cols = s![.., h * dh..(h + 1) * dh];
                let scores = e_x.slice(cols).dot(&e_p.slice(cols).t());
                softmax_rows(scores.view())
            })
            .collect();
        AttentionWeights { per_head }
    }

    /// Per-head weighted sums of prototype embeddings, concatenated across heads.
    pub fn mix(
        &self,
        weights: &AttentionWeights<F>,
        proto_embeddings: ArrayView2<'_, F>,
    ) -> Result<Array2<F>> {
        ensure_dim!(
            weights.per_head.len() == self.heads,
            "expected {} heads of weights, got {}",
            self.heads,
            weights.per_head.len()
        );
        ensure_dim!(
            proto_embeddings.ncols() == self.embed_dim(),
            "prototype embeddings have width {}, expected {}",
            proto_embeddings.ncols(),
            self.embed_dim()
        );
        for w in &weights.per_head {
            ensure_dim!(
                w.ncols() == proto_embeddings.nrows(),
                "weights over {} prototypes, but {} prototype embeddings",
                w.ncols(),
                proto_embeddings.nrows()
            );
        }
        Ok(self.mix_unchecked(weights, proto_embeddings))
    }

    fn mix_unchecked(&self, weights: &AttentionWeights<F>, e_p: ArrayView2<'_, F>) -> Array2<F> {
        let dh = self.embed_dim() / self.heads;
        let parts: Vec<Array2<F>> = weights
            .per_head
            .iter()
            .enumerate()
            .map(|(h, w)| w.dot(&e_p.slice(s![.., h * dh..(h + 1) * dh])))
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(1), &views).expect("equal row counts")
    }

    /// `f_a = relu(φ_a([e_x, m]))`.
    pub fn aggregate(
        &self,
        e_x: ArrayView2<'_, F>,
        weights: &AttentionWeights<F>,
        proto_embeddings: ArrayView2<'_, F>,
    ) -> Result<Array2<F>> {
        let m = self.mix(weights, proto_embeddings)?;
        ensure_dim!(
            e_x.nrows() == m.nrows() && e_x.ncols() == self.embed_dim(),
            "embedding batch {:?} does not match attention batch {}",
            e_x.dim(),
            m.nrows()
        );
        let z = concatenate(Axis(1), &[e_x, m.view()]).expect("equal row counts");
        Ok(relu(self.attend.apply(z.view())))
    }

    /// `g_x = relu(f_x + φ_r(f_a))`.
    pub fn refine(&self, f_x: ArrayView2<'_, F>, f_a: ArrayView2<'_, F>) -> Result<Array2<F>> {
        ensure_dim!(
            f_x.dim() == f_a.dim() && f_x.ncols() == self.feature_dim(),
            "refine expects matching {}-wide batches, got {:?} and {:?}",
            self.feature_dim(),
            f_x.dim(),
            f_a.dim()
        );
        Ok(relu(&f_x + &self.refine.apply(f_a)))
    }

    pub fn forward(&self, f_x: ArrayView2<'_, F>, prototypes: &PrototypeSet<F>) -> Result<Array2<F>> {
        Ok(self.forward_traced(f_x, prototypes)?.g)
    }

    pub(crate) fn forward_traced(
        &self,
        f_x: ArrayView2<'_, F>,
        prototypes: &PrototypeSet<F>,
    ) -> Result<AugFTrace<F>> {
        ensure_dim!(
            f_x.ncols() == self.feature_dim() && prototypes.feature_dim() == self.feature_dim(),
            "AugF expects {}-wide features and prototypes, got {} and {}",
            self.feature_dim(),
            f_x.ncols(),
            prototypes.feature_dim()
        );
        if prototypes.is_empty() {
            return Err(Error::State("no prototypes have been extracted".into()));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let e_x = self.embed.apply(f_x);
        let e_p = self.embed.apply(prototypes.matrix());
        let weights = self.attention(e_x.view(), e_p.view());
        let m = self.mix_unchecked(&weights, e_p.view());
        let z = concatenate(Axis(1), &[e_x.view(), m.view()]).expect("equal row counts");
        let f_a = relu(self.attend.apply(z.view()));
        let g = relu(&f_x + &self.refine.apply(f_a.view()));
        Ok(AugFTrace {
            f_x: f_x.to_owned(),
            e_x,
            e_p,
            weights,
            z,
            f_a,
            g,
        })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient w.r.t. `f_x`.
    pub(crate) fn backward(
        &self,
        trace: &AugFTrace<F>,
        prototypes: &PrototypeSet<F>,
        grad_g: &Array2<F>,
        grads: &mut AugF<F>,
    ) -> Array2<F> {
        let mut d_pre = grad_g.clone();
        relu_backward(&trace.g, &mut d_pre);
        let mut d_f = d_pre.clone();

        let mut d_fa = self
            .refine
            .backward(trace.f_a.view(), d_pre.view(), &mut grads.refine);
        relu_backward(&trace.f_a, &mut d_fa);
        let d_z = self
            .attend
            .backward(trace.z.view(), d_fa.view(), &mut grads.attend);

        let d_e = self.embed_dim();
        let dh = d_e / self.heads;
        let mut d_ex = d_z.slice(s![.., ..d_e]).to_owned();
        let d_m = d_z.slice(s![.., d_e..]);
        let mut d_ep = Array2::<F>::zeros(trace.e_p.raw_dim());
        for (h, w) in trace.weights.per_head.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let e_p = trace.e_p.slice(cols);
            let e_x = trace.e_x.slice(cols);
            let d_mh = d_m.slice(cols);

            let d_w = d_mh.dot(&e_p.t());
            let mut dep_h = w.t().dot(&d_mh);

            // softmax backward: ds = w ⊙ (dw − Σ_j w_j dw_j)
            let inner = (&d_w * w).sum_axis(Axis(1)).insert_axis(Axis(1));
            let d_s = w * &(&d_w - &inner);
            let mut dex_h = d_ex.slice_mut(cols);
            dex_h += &d_s.dot(&e_p);
            dep_h += &d_s.t().dot(&e_x);
            let mut slot = d_ep.slice_mut(cols);
            slot += &dep_h;
        }

        d_f += &self
            .embed
            .backward(trace.f_x.view(), d_ex.view(), &mut grads.embed);
        // Gradient w.r.t. the prototypes themselves is discarded.
        let _ = self
            .embed
            .backward(prototypes.matrix(), d_ep.view(), &mut grads.embed);
        d_f
    }
}
