//! Datasets, labeled/unlabeled splits, domain mixing and batching.

use std::fmt;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;
use crate::seeds;

/// Channel-planar image geometry: values are indexed `c·H·W + y·W + x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Vector,
    Image(ImageShape),
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataKind::Vector => f.write_str("vector"),
            DataKind::Image(s) => write!(f, "{s} image"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Target,
    Shifted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<F> {
    pub samples: Array2<F>,
    pub labels: Vec<usize>,
    pub domains: Vec<Domain>,
    pub classes: usize,
    pub kind: DataKind,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(samples: Array2<F>, labels: Vec<usize>, classes: usize, kind: DataKind) -> Result<Self> {
        let n = samples.nrows();
        let domains = vec![Domain::Target; n];
        Self::with_domains(samples, labels, domains, classes, kind)
    }

    pub fn with_domains(
        samples: Array2<F>,
        labels: Vec<usize>,
        domains: Vec<Domain>,
        classes: usize,
        kind: DataKind,
    ) -> Result<Self> {
        ensure_dim!(
            samples.nrows() == labels.len() && labels.len() == domains.len(),
            "{} samples, {} labels, {} domain tags",
            samples.nrows(),
            labels.len(),
            domains.len()
        );
        if let DataKind::Image(shape) = kind {
            ensure_dim!(samples.ncols() == shape.len(), "image width mismatch");
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Config(format!("label {y} out of range for {classes} classes")));
        }
        Ok(Self {
            samples,
            labels,
            domains,
            classes,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            samples: self.samples.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            classes: self.classes,
            kind: self.kind,
        }
    }

    /// Random holdout of `round(fraction·N)` samples: `(rest, holdout)`.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("holdout fraction {fraction} not in [0, 1)")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seeds::rng(seed, &[seeds::tag::VALIDATION]));
        let k = (fraction * self.len() as f64).round() as usize;
        let (hold, rest) = idx.split_at(k);
        let (mut hold, mut rest) = (hold.to_vec(), rest.to_vec());
        hold.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&rest), self.subset(&hold)))
    }
}

/// Isotropic Gaussian clusters around fixed centroids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Distance of every centroid from the origin.
    pub spread: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Affine distortion and extra noise applied to simulate a shifted domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Rotation of the first two coordinates, in degrees.
    pub rotation_deg: f64,
    pub scale: f64,
    /// Added to every coordinate after rotation and scaling.
    pub offset: f64,
    /// Multiplier on the sampling noise.
    pub noise_inflation: f64,
}

/// Centroids of class `c`: coordinate `j` is `spread·cos((1 + j/2)·θ_c − (j mod 2)·π/2)`
/// with `θ_c = 2πc/C`, i.e. a circle in the first two coordinates.
pub fn blob_centroids(classes: usize, dim: usize, spread: f64) -> Array2<f64> {
    Array2::from_shape_fn((classes, dim), |(c, j)| {
        let theta = std::f64::consts::TAU * c as f64 / classes as f64;
        let harmonic = 1.0 + (j / 2) as f64;
        let phase = if j % 2 == 1 { std::f64::consts::FRAC_PI_2 } else { 0.0 };
        spread * (harmonic * theta - phase).cos()
    })
}

fn sample_blobs(spec: &BlobSpec, noise: f64, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
    if spec.classes < 2 {
        return Err(Error::Config("blobs need at least 2 classes".into()));
    }
    if spec.dim == 0 || !noise.is_finite() || noise < 0.0 {
        return Err(Error::Config("blobs need dim >= 1 and finite noise >= 0".into()));
    }
    let centroids = blob_centroids(spec.classes, spec.dim, spec.spread);
    let mut rng = seeds::rng(seed, &[seeds::tag::DATA]);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.classes * spec.per_class;
    let mut samples = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % spec.classes;
        for j in 0..spec.dim {
            let eps = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            samples[[i, j]] = centroids[[c, j]] + eps;
        }
        labels.push(c);
    }
    Ok((samples, labels))
}

/// Seeded Gaussian blobs; samples cycle through the classes.
pub fn make_blobs<F: Scalar>(spec: &BlobSpec) -> Result<Dataset<F>> {
    let (x, y) = sample_blobs(spec, spec.noise, spec.seed)?;
    Dataset::new(x.mapv(F::lit), y, spec.classes, DataKind::Vector)
}

/// Blobs drawn with inflated noise, then rotated, scaled and offset; tagged [`Domain::Shifted`].
pub fn make_shifted_blobs<F: Scalar>(spec: &BlobSpec, shift: &DomainShift) -> Result<Dataset<F>> {
    let seed = seeds::derive(spec.seed, &[seeds::tag::SHIFT]);
    let (mut x, y) = sample_blobs(spec, spec.noise * shift.noise_inflation, seed)?;
    let (sin, cos) = shift.rotation_deg.to_radians().sin_cos();
    for mut row in x.rows_mut() {
        if row.len() >= 2 {
            let (a, b) = (row[0], row[1]);
            row[0] = cos * a - sin * b;
            row[1] = sin * a + cos * b;
        }
        row.mapv_inplace(|v| v * shift.scale + shift.offset);
    }
    let n = y.len();
    Dataset::with_domains(x.mapv(F::lit), y, vec![Domain::Shifted; n], spec.classes, DataKind::Vector)
}

/// Fixed-size binary records: one label byte followed by channel-planar pixel bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryLayout {
    pub shape: ImageShape,
    pub classes: usize,
}

impl BinaryLayout {
    pub fn cifar10() -> Self {
        Self {
            shape: ImageShape {
                channels: 3,
                height: 32,
                width: 32,
            },
            classes: 10,
        }
    }

    pub fn record_len(&self) -> usize {
        1 + self.shape.len()
    }
}

pub fn parse_binary_images<F: Scalar>(bytes: &[u8], layout: &BinaryLayout) -> Result<Dataset<F>> {
    let rec = layout.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of {rec}-byte records",
            bytes.len()
        )));
    }
    let n = bytes.len() / rec;
    let mut samples = Array2::zeros((n, layout.shape.len()));
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[0] as usize;
        if label >= layout.classes {
            return Err(Error::Format(format!(
                "record {i} has label {label}, expected < {}",
                layout.classes
            )));
        }
        labels.push(label);
        for (dst, &b) in samples.row_mut(i).iter_mut().zip(&record[1..]) {
            *dst = F::lit(f64::from(b) / 255.0);
        }
    }
    Dataset::new(samples, labels, layout.classes, DataKind::Image(layout.shape))
}

pub fn load_binary_images<F: Scalar>(path: &Path, layout: &BinaryLayout) -> Result<Dataset<F>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_binary_images(&bytes, layout)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<F> {
    pub samples: Array2<F>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub kind: DataKind,
}

impl<F> LabeledSet<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ground truth of unlabeled samples. Only diagnostics may read it, via [`HiddenLabels::audit`].
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    /// Reveals the labels for pseudo-label accuracy monitoring. Never feed these to a loss.
    pub fn audit(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet<F> {
    pub samples: Array2<F>,
    pub domains: Vec<Domain>,
    pub classes: usize,
    pub kind: DataKind,
    hidden: HiddenLabels,
}

impl<F: Scalar> UnlabeledSet<F> {
    /// Drops the labels of `ds` from view.
    pub fn from_dataset(ds: Dataset<F>) -> Self {
        Self {
            samples: ds.samples,
            domains: ds.domains,
            classes: ds.classes,
            kind: ds.kind,
            hidden: HiddenLabels(ds.labels),
        }
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn hidden_labels(&self) -> &HiddenLabels {
        &self.hidden
    }

    pub fn count_domain(&self, domain: Domain) -> usize {
        self.domains.iter().filter(|&&d| d == domain).count()
    }
}

/// Class-balanced labeled split: `n_labels / C` samples per class chosen by a
/// seeded shuffle; the rest (in original order) becomes the unlabeled set.
pub fn split_labeled<F: Scalar>(
    ds: &Dataset<F>,
    n_labels: usize,
    seed: u64,
) -> Result<(LabeledSet<F>, UnlabeledSet<F>)> {
    if n_labels > ds.len() {
        return Err(Error::Config(format!(
            "{n_labels} labels requested from {} samples",
            ds.len()
        )));
    }
    if !n_labels.is_multiple_of(ds.classes) {
        return Err(Error::Config(format!(
            "{n_labels} labels cannot be split evenly over {} classes",
            ds.classes
        )));
    }
    let per_class = n_labels / ds.classes;
    let mut rng = seeds::rng(seed, &[seeds::tag::SPLIT]);
    let mut chosen = vec![false; ds.len()];
    for c in 0..ds.classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if idx.len() < per_class {
            return Err(Error::Config(format!(
                "class {c} has {} samples, {per_class} labels requested",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..per_class] {
            chosen[i] = true;
        }
    }
    let lab: Vec<usize> = (0..ds.len()).filter(|&i| chosen[i]).collect();
    let unl: Vec<usize> = (0..ds.len()).filter(|&i| !chosen[i]).collect();
    let l = ds.subset(&lab);
    Ok((
        LabeledSet {
            samples: l.samples,
            labels: l.labels,
            classes: ds.classes,
            kind: ds.kind,
        },
        UnlabeledSet::from_dataset(ds.subset(&unl)),
    ))
}

/// Replaces `round(r_u·N)` randomly chosen target samples with samples drawn
/// uniformly without replacement from `shifted`. Output size stays `N`.
pub fn mix_domains<F: Scalar>(
    target: &UnlabeledSet<F>,
    shifted: &UnlabeledSet<F>,
    r_u: f64,
    seed: u64,
) -> Result<UnlabeledSet<F>> {
    if !(0.0..=1.0).contains(&r_u) {
        return Err(Error::Config(format!("r_u = {r_u} outside [0, 1]")));
    }
    let n = target.len();
    let m = (r_u * n as f64).round() as usize;
    if shifted.len() < m {
        return Err(Error::Config(format!(
            "shifted pool has {} samples, {m} needed",
            shifted.len()
        )));
    }
    ensure_dim!(
        m == 0 || shifted.samples.ncols() == target.samples.ncols(),
        "shifted samples are {} wide, target {}",
        shifted.samples.ncols(),
        target.samples.ncols()
    );
    let mut rng = seeds::rng(seed, &[seeds::tag::MIX]);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    let mut donors: Vec<usize> = (0..shifted.len()).collect();
    donors.shuffle(&mut rng);
    let mut out = target.clone();
    for (&slot, &donor) in slots[..m].iter().zip(&donors[..m]) {
        out.samples.row_mut(slot).assign(&shifted.samples.row(donor));
        out.domains[slot] = shifted.domains[donor];
        out.hidden.0[slot] = shifted.hidden.0[donor];
    }
    Ok(out)
}

/// Seeded per-epoch shuffled index batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Batcher {
    pub len: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64, drop_last: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            len,
            batch_size,
            seed,
            drop_last,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        if self.drop_last {
            self.len / self.batch_size
        } else {
            self.len.div_ceil(self.batch_size)
        }
    }

    pub fn permutation(&self, epoch: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len).collect();
        idx.shuffle(&mut seeds::rng(self.seed, &[epoch as u64]));
        idx
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let perm = self.permutation(epoch);
        perm.chunks(self.batch_size)
            .filter(|c| !self.drop_last || c.len() == self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Endless stream of fixed-size batches over successive reshuffled passes,
/// for a labeled set much smaller than the batch size.
#[derive(Clone, Debug)]
pub struct CyclicBatcher {
    inner: Batcher,
    pass: usize,
    pos: usize,
    perm: Vec<usize>,
}

impl CyclicBatcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        let inner = Batcher::new(len, batch_size, seed, false)?;
        let perm = inner.permutation(0);
        Ok(Self {
            inner,
            pass: 0,
            pos: 0,
            perm,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.inner.len == 0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(self.inner.batch_size);
        while out.len() < self.inner.batch_size {
            if self.pos == self.perm.len() {
                self.pass += 1;
                self.pos = 0;
                self.perm = self.inner.permutation(self.pass);
            }
            out.push(self.perm[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: f64) -> BlobSpec {
        BlobSpec {
            classes: 4,
            per_class: 50,
            dim: 2,
            spread: 2.0,
            noise,
            seed: 17,
        }
    }

    #[test]
    fn noiseless_blobs_sit_on_centroids() {
        let ds: Dataset<f64> = make_blobs(&spec(0.0)).unwrap();
        let c = blob_centroids(4, 2, 2.0);
        for (row, &y) in ds.samples.rows().into_iter().zip(&ds.labels) {
            assert_eq!(row, c.row(y));
        }
    }

    #[test]
    fn centroids_are_distinct_in_higher_dims() {
        let c = blob_centroids(6, 5, 1.0);
        for a in 0..6 {
            for b in a + 1..6 {
                let d: f64 = (&c.row(a) - &c.row(b)).mapv(|v| v * v).sum();
                assert!(d > 1e-6);
            }
        }
    }

    #[test]
    fn blobs_reproducible() {
        let a: Dataset<f64> = make_blobs(&spec(0.5)).unwrap();
        let b: Dataset<f64> = make_blobs(&spec(0.5)).unwrap();
        assert_eq!(a, b);
        assert!(make_blobs::<f64>(&BlobSpec { classes: 1, ..spec(0.5) }).is_err());
    }

    #[test]
    fn shifted_blobs_are_tagged() {
        let shift = DomainShift {
            rotation_deg: 45.0,
            scale: 1.2,
            offset: 0.3,
            noise_inflation: 1.5,
        };
        let ds: Dataset<f64> = make_shifted_blobs(&spec(0.0), &shift).unwrap();
        assert!(ds.domains.iter().all(|&d| d == Domain::Shifted));
        // class 0 centroid (2, 0) rotated 45°, scaled, offset
        let expect = 2.0 * 1.2 * std::f64::consts::FRAC_1_SQRT_2 + 0.3;
        assert!((ds.samples[[0, 0]] - expect).abs() < 1e-12);
        assert!((ds.samples[[0, 1]] - expect).abs() < 1e-12);
    }

    #[test]
    fn binary_records() {
        let layout = BinaryLayout {
            shape: ImageShape {
                channels: 3,
                height: 1,
                width: 2,
            },
            classes: 10,
        };
        let bytes = [3u8, 0, 255, 51, 102, 153, 204, 9, 255, 0, 0, 0, 0, 255];
        let ds: Dataset<f64> = parse_binary_images(&bytes, &layout).unwrap();
        assert_eq!(ds.labels, vec![3, 9]);
        assert_eq!(ds.samples.row(0).to_vec(), vec![0.0, 1.0, 0.2, 0.4, 0.6, 0.8]);
        assert_eq!(ds.samples.row(1).to_vec(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let empty: Dataset<f64> = parse_binary_images(&[], &layout).unwrap();
        assert!(empty.is_empty());
        assert!(matches!(
            parse_binary_images::<f64>(&bytes[..10], &layout),
            Err(Error::Format(_))
        ));
        let mut bad = bytes;
        bad[0] = 10;
        assert!(matches!(parse_binary_images::<f64>(&bad, &layout), Err(Error::Format(_))));
    }

    #[test]
    fn balanced_split() {
        let ds: Dataset<f64> = make_blobs(&BlobSpec { classes: 10, per_class: 40, ..spec(0.3) }).unwrap();
        let (l, u) = split_labeled(&ds, 250, 3).unwrap();
        for c in 0..10 {
            assert_eq!(l.labels.iter().filter(|&&y| y == c).count(), 25);
        }
        assert_eq!(u.len(), 150);
        let (l2, u2) = split_labeled(&ds, 250, 3).unwrap();
        assert_eq!(l, l2);
        assert_eq!(u, u2);
        assert!(matches!(split_labeled(&ds, 255, 3), Err(Error::Config(_))));
        let (all, none) = split_labeled(&ds, 400, 3).unwrap();
        assert_eq!(all.len(), 400);
        assert!(none.is_empty());
    }

    fn unlabeled(n: usize, domain: Domain) -> UnlabeledSet<f64> {
        let ds = Dataset::with_domains(
            Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64),
            vec![0; n],
            vec![domain; n],
            2,
            DataKind::Vector,
        )
        .unwrap();
        UnlabeledSet::from_dataset(ds)
    }

    #[test]
    fn mixing_counts() {
        let t = unlabeled(100, Domain::Target);
        let s = unlabeled(100, Domain::Shifted);
        assert_eq!(mix_domains(&t, &s, 0.0, 1).unwrap(), t);
        let m = mix_domains(&t, &s, 0.5, 1).unwrap();
        assert_eq!(m.len(), 100);
        assert_eq!(m.count_domain(Domain::Shifted), 50);
        let t = unlabeled(8, Domain::Target);
        let m = mix_domains(&t, &s, 0.75, 1).unwrap();
        assert_eq!((m.count_domain(Domain::Target), m.count_domain(Domain::Shifted)), (2, 6));
        let small = unlabeled(3, Domain::Shifted);
        assert!(mix_domains(&t, &small, 0.75, 1).is_err());
    }

    #[test]
    fn batcher_covers_epoch() {
        let b = Batcher::new(10, 3, 5, false).unwrap();
        let batches = b.epoch(0);
        assert_eq!(batches.len(), 4);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b.epoch(2), b.epoch(2));
        assert_ne!(b.epoch(0), b.epoch(1));
        let d = Batcher::new(10, 3, 5, true).unwrap();
        assert_eq!(d.epoch(0).len(), 3);
        assert_eq!(d.batches_per_epoch(), 3);
    }

    #[test]
    fn cyclic_batcher_repeats_small_sets() {
        let mut c = CyclicBatcher::new(4, 10, 0).unwrap();
        let b = c.next_batch();
        assert_eq!(b.len(), 10);
        for i in 0..4 {
            assert!(b.iter().filter(|&&j| j == i).count() >= 2);
        }
    }

    #[test]
    fn holdout_split() {
        let ds: Dataset<f64> = make_blobs(&spec(0.3)).unwrap();
        let (rest, hold) = ds.split_holdout(0.1, 4).unwrap();
        assert_eq!(hold.len(), 20);
        assert_eq!(rest.len(), 180);
    }
}
