use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augf::AugF;
use crate::error::{ensure_dim, Result};
use crate::nn::{Classifier, Encoder, Linear};
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;

/// Architecture of the full network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub classes: usize,
}

/// Encoder, AugF module and classifier. Also used as the container for
/// gradients and optimizer velocities, which share the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub encoder: Encoder<F>,
    pub augf: AugF<F>,
    pub classifier: Classifier<F>,
}

impl<F: Scalar> Model<F> {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(spec.input_dim, &spec.hidden, spec.feature_dim, rng)?;
        let augf = AugF::new(spec.feature_dim, spec.embed_dim, spec.heads, rng)?;
        let classifier = Classifier::new(spec.feature_dim, spec.classes, rng);
        Ok(Self {
            encoder,
            augf,
            classifier,
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::zeros(spec.input_dim, &spec.hidden, spec.feature_dim)?,
            augf: AugF::zeros(spec.feature_dim, spec.embed_dim, spec.heads)?,
            classifier: Classifier::zeros(spec.feature_dim, spec.classes),
        })
    }

    pub fn from_parts(encoder: Encoder<F>, augf: AugF<F>, classifier: Classifier<F>) -> Result<Self> {
        let d_f = encoder.feature_dim();
        ensure_dim!(
            augf.feature_dim() == d_f && classifier.linear.input_dim() == d_f,
            "encoder width {d_f} does not match AugF {} / classifier {}",
            augf.feature_dim(),
            classifier.linear.input_dim()
        );
        Ok(Self {
            encoder,
            augf,
            classifier,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            input_dim: self.encoder.input_dim(),
            hidden: self.encoder.hidden_dims(),
            feature_dim: self.encoder.feature_dim(),
            embed_dim: self.augf.embed_dim(),
            heads: self.augf.heads(),
            classes: self.classifier.classes(),
        }
    }

    /// Zero-valued model with identical shapes.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.spec()).expect("shapes already validated")
    }

    /// All layers in a fixed order: encoder layers, φ_e, φ_a, φ_r, classifier.
    pub fn layers(&self) -> Vec<&Linear<F>> {
        let mut out: Vec<&Linear<F>> = self.encoder.layers.iter().collect();
        out.extend([
            &self.augf.embed,
            &self.augf.attend,
            &self.augf.refine,
            &self.classifier.linear,
        ]);
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear<F>> {
        let mut out: Vec<&mut Linear<F>> = self.encoder.layers.iter_mut().collect();
        out.extend([
            &mut self.augf.embed,
            &mut self.augf.attend,
            &mut self.augf.refine,
            &mut self.classifier.linear,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| l.is_finite())
    }

    pub fn features(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>> {
        self.encoder.forward(x)
    }

    /// `Clf(AugF(Enc(x)))`, or `Clf(Enc(x))` when no prototypes are given.
    pub fn predict(
        &self,
        x: ArrayView2<'_, F>,
        prototypes: Option<&PrototypeSet<F>>,
    ) -> Result<Array2<F>> {
        let f = self.encoder.forward(x)?;
        self.predict_from_features(f.view(), prototypes)
    }

    pub fn predict_from_features(
        &self,
        f: ArrayView2<'_, F>,
        prototypes: Option<&PrototypeSet<F>>,
    ) -> Result<Array2<F>> {
        match prototypes {
            Some(p) => {
                let g = self.augf.forward(f, p)?;
                self.classifier.forward(g.view())
            }
            None => self.classifier.forward(f),
        }
    }
}
