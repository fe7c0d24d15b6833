//! Memory bank of detached `(feature, hard label)` pairs and per-class
//! prototype extraction.
//!
//! The bank is filled from the training loop every iteration. At each
//! extraction event the features of every class are clustered with k-means,
//! the cluster means become that class's prototypes, and the bank is emptied.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{ensure_dim, Error, Result};
use crate::kmeans::{kmeans, KMeansParams};
use crate::scalar::Scalar;

/// Bounded FIFO of recorded features. Recording past capacity overwrites the oldest entries.
#[derive(Clone, Debug)]
pub struct MemoryBank<F> {
    entries: VecDeque<(Array1<F>, usize)>,
    capacity: usize,
    feature_dim: usize,
}

impl<F: Scalar> MemoryBank<F> {
    pub fn new(capacity: usize, feature_dim: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Appends a batch in row order. The bank keeps its own copy of the values.
    pub fn record(&mut self, features: ArrayView2<'_, F>, labels: &[usize]) -> Result<()> {
        ensure_dim!(
            features.nrows() == labels.len(),
            "bank record: {} feature rows but {} labels",
            features.nrows(),
            labels.len()
        );
        ensure_dim!(
            features.ncols() == self.feature_dim,
            "bank record: expected feature width {}, got {}",
            self.feature_dim,
            features.ncols()
        );
        if self.capacity == 0 {
            return Ok(());
        }
        for (row, &label) in features.rows().into_iter().zip(labels) {
            if self.entries.len() == self.capacity {
                self.entries.pop_front();
            }
            self.entries.push_back((row.to_owned(), label));
        }
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Array1<F>, usize)> {
        self.entries.iter().map(|(f, y)| (f, *y))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Stacked features recorded under `class`, in insertion order.
    pub fn class_features(&self, class: usize) -> Array2<F> {
        let rows: Vec<_> = self
            .entries
            .iter()
            .filter(|(_, y)| *y == class)
            .map(|(f, _)| f.view())
            .collect();
        if rows.is_empty() {
            return Array2::zeros((0, self.feature_dim));
        }
        ndarray::stack(Axis(0), &rows).expect("uniform feature width")
    }
}

/// Per-class prototype vectors, treated as constants by every consumer.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet<F> {
    per_class: Vec<Array2<F>>,
    epoch: usize,
    feature_dim: usize,
    stacked: Array2<F>,
}

impl<F: Scalar> PrototypeSet<F> {
    /// `per_class[c]` holds class `c`'s prototypes as rows (possibly zero rows).
    pub fn new(per_class: Vec<Array2<F>>, feature_dim: usize, epoch: usize) -> Result<Self> {
        for (c, p) in per_class.iter().enumerate() {
            ensure_dim!(
                p.ncols() == feature_dim,
                "prototypes of class {c} have width {}, expected {feature_dim}",
                p.ncols()
            );
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::State(format!("non-finite prototype in class {c}")));
            }
        }
        let views: Vec<_> = per_class.iter().map(|p| p.view()).collect();
        let stacked = if views.is_empty() {
            Array2::zeros((0, feature_dim))
        } else {
            ndarray::concatenate(Axis(0), &views).expect("uniform width")
        };
        Ok(Self {
            per_class,
            epoch,
            feature_dim,
            stacked,
        })
    }

    /// All prototypes stacked class-major, `K × d_f`.
    pub fn matrix(&self) -> ArrayView2<'_, F> {
        self.stacked.view()
    }

    pub fn len(&self) -> usize {
        self.stacked.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.stacked.nrows() == 0
    }

    pub fn classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, c: usize) -> ArrayView2<'_, F> {
        self.per_class[c].view()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Epoch at which this set was extracted.
    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Clusters each class's banked features into `min(p_k, n_c)` prototypes.
///
/// Classes absent from the bank keep their prototypes from `previous` (or get
/// none when there is no previous set). Class `c` is clustered with a seed
/// derived from `(seed, c)`.
pub fn extract_prototypes<F: Scalar>(
    bank: &MemoryBank<F>,
    per_class: usize,
    classes: usize,
    seed: u64,
    previous: Option<&PrototypeSet<F>>,
    epoch: usize,
) -> Result<PrototypeSet<F>> {
    if bank.is_empty() {
        return Err(Error::State("cannot extract prototypes from an empty bank".into()));
    }
    if per_class == 0 {
        return Err(Error::Config("prototypes per class must be positive".into()));
    }
    let d = bank.feature_dim();
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let feats = bank.class_features(c);
        let protos = if feats.nrows() > 0 {
            let k = per_class.min(feats.nrows());
            let class_seed = seed ^ (c as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
            kmeans(feats.view(), k, class_seed, KMeansParams::default())?.means
        } else {
            match previous {
                Some(prev) if c < prev.classes() => prev.class(c).to_owned(),
                _ => Array2::zeros((0, d)),
            }
        };
        out.push(protos);
    }
    PrototypeSet::new(out, d, epoch)
}

/// Installs `fresh` as the active set, empties the bank and returns the replaced set.
pub fn swap_and_clear<F: Scalar>(
    bank: &mut MemoryBank<F>,
    active: &mut Option<PrototypeSet<F>>,
    fresh: PrototypeSet<F>,
) -> Option<PrototypeSet<F>> {
    bank.clear();
    active.replace(fresh)
}
