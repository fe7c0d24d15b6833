//! Input-space augmentation: a weak view for pseudo-labeling and a strong
//! RandAugment-style view (`N` ops, magnitudes uniform in `[-M, M]`).
//!
//! Every sample draws from its own RNG stream derived from `(seed, row)`, so
//! results do not depend on how rows are spread across threads. Each applied
//! strong op is logged with the seed of its internal randomness and can be
//! replayed exactly with [`apply_op`].

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DataKind, ImageShape};
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::Scalar;

/// Largest allowed magnitude, on the RandAugment 0–10 scale.
pub const MAX_MAGNITUDE: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    // image ops
    Brightness,
    Contrast,
    Rotate,
    TranslateX,
    TranslateY,
    Shear,
    Posterize,
    Solarize,
    // vector ops
    Scale,
    #[serde(rename = "rotate_2d")]
    Rotate2d,
    Jitter,
    Mask,
    Translate,
}

impl AugOp {
    pub const IMAGE: [AugOp; 8] = [
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::Rotate,
        AugOp::TranslateX,
        AugOp::TranslateY,
        AugOp::Shear,
        AugOp::Posterize,
        AugOp::Solarize,
    ];

    pub const VECTOR: [AugOp; 5] = [
        AugOp::Scale,
        AugOp::Rotate2d,
        AugOp::Jitter,
        AugOp::Mask,
        AugOp::Translate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Brightness => "brightness",
            AugOp::Contrast => "contrast",
            AugOp::Rotate => "rotate",
            AugOp::TranslateX => "translate_x",
            AugOp::TranslateY => "translate_y",
            AugOp::Shear => "shear",
            AugOp::Posterize => "posterize",
            AugOp::Solarize => "solarize",
            AugOp::Scale => "scale",
            AugOp::Rotate2d => "rotate_2d",
            AugOp::Jitter => "jitter",
            AugOp::Mask => "mask",
            AugOp::Translate => "translate",
        }
    }

    pub fn is_image_op(self) -> bool {
        Self::IMAGE.contains(&self)
    }

    pub fn applies_to(self, kind: &DataKind) -> bool {
        match kind {
            DataKind::Vector => !self.is_image_op(),
            DataKind::Image(_) => self.is_image_op(),
        }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::IMAGE
            .iter()
            .chain(Self::VECTOR.iter())
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown augmentation op `{s}`")))
    }
}

/// Strong augmentation policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    pub ops: Vec<AugOp>,
    /// `N`: ops applied per sample, drawn with replacement.
    pub num_ops: usize,
    /// `M`: magnitudes are uniform in `[-M, M]`, with `M` on the 0–10 scale.
    pub magnitude: f64,
}

impl AugPolicy {
    pub fn new(ops: Vec<AugOp>, num_ops: usize, magnitude: f64) -> Result<Self> {
        let p = Self {
            ops,
            num_ops,
            magnitude,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], num_ops: usize, magnitude: f64) -> Result<Self> {
        let ops = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<_>>>()?;
        Self::new(ops, num_ops, magnitude)
    }

    /// `N = 2`, `M` at its maximum, every op that applies to `kind`.
    pub fn default_for(kind: &DataKind) -> Self {
        let ops = match kind {
            DataKind::Vector => AugOp::VECTOR.to_vec(),
            DataKind::Image(_) => AugOp::IMAGE.to_vec(),
        };
        Self {
            ops,
            num_ops: 2,
            magnitude: MAX_MAGNITUDE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_MAGNITUDE).contains(&self.magnitude) {
            return Err(Error::Config(format!(
                "magnitude {} outside [0, {MAX_MAGNITUDE}]",
                self.magnitude
            )));
        }
        if self.num_ops > 0 && self.ops.is_empty() {
            return Err(Error::Config("policy applies ops but lists none".into()));
        }
        Ok(())
    }

    pub fn validate_for(&self, kind: &DataKind) -> Result<()> {
        self.validate()?;
        if let Some(op) = self.ops.iter().find(|op| !op.applies_to(kind)) {
            return Err(Error::Config(format!("op `{op}` does not apply to {kind} data")));
        }
        Ok(())
    }

    /// Draws `N` ops with replacement, each with its own magnitude and aux seed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<AppliedOp> {
        (0..self.num_ops)
            .map(|_| {
                let op = self.ops[rng.random_range(0..self.ops.len())];
                let magnitude = if self.magnitude > 0.0 {
                    rng.random_range(-self.magnitude..=self.magnitude)
                } else {
                    0.0
                };
                AppliedOp {
                    op,
                    magnitude,
                    aux_seed: rng.random(),
                }
            })
            .collect()
    }
}

/// A sampled op; `aux_seed` drives any randomness inside the op itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedOp {
    pub op: AugOp,
    pub magnitude: f64,
    pub aux_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakConfig {
    /// Horizontal flip with probability 0.5 (images).
    pub flip: bool,
    /// Maximum translation as a fraction of the image side (images).
    pub max_translate: f64,
    /// Standard deviation of additive Gaussian jitter (vectors).
    pub jitter_sigma: f64,
}

impl Default for WeakConfig {
    fn default() -> Self {
        Self {
            flip: true,
            max_translate: 0.125,
            jitter_sigma: 0.02,
        }
    }
}

/// RNG for sample `row` of a batch augmented under `seed`.
pub fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn map_rows<F: Scalar, T: Send>(
    x: ArrayView2<'_, F>,
    f: impl Fn(usize, &mut [f64]) -> T + Sync,
) -> (Array2<F>, Vec<T>) {
    let mut out = x.to_owned();
    let extra: Vec<T> = out
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| {
            let mut buf: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            let t = f(i, &mut buf);
            for (dst, src) in row.iter_mut().zip(buf) {
                *dst = F::lit(src);
            }
            t
        })
        .collect();
    (out, extra)
}

fn check_width<F>(x: ArrayView2<'_, F>, kind: &DataKind) -> Result<()> {
    if let DataKind::Image(shape) = kind {
        ensure_dim!(
            x.ncols() == shape.len(),
            "image batch has {} columns, shape {shape} needs {}",
            x.ncols(),
            shape.len()
        );
    }
    Ok(())
}

/// Weak view: flip + translate for images, Gaussian jitter for vectors.
pub fn weak_augment<F: Scalar>(
    x: ArrayView2<'_, F>,
    kind: &DataKind,
    cfg: &WeakConfig,
    seed: u64,
) -> Result<Array2<F>> {
    check_width(x, kind)?;
    let (out, _) = map_rows(x, |i, row| {
        let mut rng = row_rng(seed, i);
        match kind {
            DataKind::Vector => jitter(row, cfg.jitter_sigma, &mut rng),
            DataKind::Image(shape) => {
                if cfg.flip && rng.random_bool(0.5) {
                    flip_horizontal(row, shape);
                }
                let max_x = (cfg.max_translate * shape.width as f64).round() as i64;
                let max_y = (cfg.max_translate * shape.height as f64).round() as i64;
                let dx = if max_x > 0 { rng.random_range(-max_x..=max_x) } else { 0 };
                let dy = if max_y > 0 { rng.random_range(-max_y..=max_y) } else { 0 };
                translate_image(row, shape, dx, dy);
            }
        }
    });
    Ok(out)
}

/// Strong view plus the per-sample log of applied ops.
pub fn strong_augment<F: Scalar>(
    x: ArrayView2<'_, F>,
    kind: &DataKind,
    policy: &AugPolicy,
    seed: u64,
) -> Result<(Array2<F>, Vec<Vec<AppliedOp>>)> {
    policy.validate_for(kind)?;
    check_width(x, kind)?;
    Ok(map_rows(x, |i, row| {
        let ops = policy.sample(&mut row_rng(seed, i));
        for op in &ops {
            apply_unchecked(row, kind, op);
        }
        ops
    }))
}

/// Applies one logged op to a single sample.
pub fn apply_op(row: &mut [f64], kind: &DataKind, op: &AppliedOp) -> Result<()> {
    if !op.op.applies_to(kind) {
        return Err(Error::Config(format!("op `{}` does not apply to {kind} data", op.op)));
    }
    if let DataKind::Image(shape) = kind {
        ensure_dim!(row.len() == shape.len(), "image row has {} values", row.len());
    }
    apply_unchecked(row, kind, op);
    Ok(())
}

fn apply_unchecked(row: &mut [f64], kind: &DataKind, op: &AppliedOp) {
    let s = op.magnitude / MAX_MAGNITUDE;
    let mut rng = ChaCha8Rng::seed_from_u64(op.aux_seed);
    match (op.op, kind) {
        (AugOp::Brightness, _) => row.iter_mut().for_each(|v| *v += 0.3 * s),
        (AugOp::Contrast, _) => {
            let mean = row.iter().sum::<f64>() / row.len().max(1) as f64;
            let factor = 1.0 + 0.5 * s;
            row.iter_mut().for_each(|v| *v = mean + factor * (*v - mean));
        }
        (AugOp::Rotate, DataKind::Image(shape)) => rotate_image(row, shape, 30f64.to_radians() * s),
        (AugOp::TranslateX, DataKind::Image(shape)) => {
            let dx = (0.3 * s * shape.width as f64).round() as i64;
            translate_image(row, shape, dx, 0);
        }
        (AugOp::TranslateY, DataKind::Image(shape)) => {
            let dy = (0.3 * s * shape.height as f64).round() as i64;
            translate_image(row, shape, 0, dy);
        }
        (AugOp::Shear, DataKind::Image(shape)) => shear_image(row, shape, 0.3 * s),
        (AugOp::Posterize, _) => {
            let bits = (4.0 * s.abs()).round() as i32;
            if bits > 0 {
                let step = f64::from(1 << bits);
                row.iter_mut()
                    .for_each(|v| *v = ((*v * 255.0).round() / step).floor() * step / 255.0);
            }
        }
        (AugOp::Solarize, _) => {
            let threshold = 1.0 - s.abs();
            row.iter_mut().for_each(|v| {
                if *v > threshold {
                    *v = 1.0 - *v;
                }
            });
        }
        (AugOp::Scale, _) => row.iter_mut().for_each(|v| *v *= 1.0 + 0.1 * s),
        (AugOp::Rotate2d, _) => {
            if row.len() >= 2 {
                let (i, j) = if row.len() == 2 {
                    (0, 1)
                } else {
                    let i = rng.random_range(0..row.len());
                    let j = (i + rng.random_range(1..row.len())) % row.len();
                    (i, j)
                };
                let (sin, cos) = (10f64.to_radians() * s).sin_cos();
                let (a, b) = (row[i], row[j]);
                row[i] = cos * a - sin * b;
                row[j] = sin * a + cos * b;
            }
        }
        (AugOp::Jitter, _) => jitter(row, 0.05 * s.abs(), &mut rng),
        (AugOp::Mask, _) => {
            if !row.is_empty() {
                let i = rng.random_range(0..row.len());
                row[i] *= 1.0 - 0.3 * s.abs();
            }
        }
        (AugOp::Translate, _) => {
            let dir: Vec<f64> = (0..row.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut()
                    .zip(&dir)
                    .for_each(|(v, d)| *v += 0.1 * s * d / norm);
            }
        }
        // Geometric image ops never reach vector data: policies are validated per kind.
        (AugOp::Rotate | AugOp::TranslateX | AugOp::TranslateY | AugOp::Shear, DataKind::Vector) => {}
    }
    if op.op.is_image_op() {
        row.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

fn jitter<R: Rng + ?Sized>(row: &mut [f64], sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        row.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}

fn flip_horizontal(row: &mut [f64], shape: &ImageShape) {
    for plane in row.chunks_mut(shape.height * shape.width) {
        for line in plane.chunks_mut(shape.width) {
            line.reverse();
        }
    }
}

/// Resamples every channel plane with nearest-neighbour lookup; `source(x, y)`
/// returns the source coordinates for output pixel `(x, y)`. Out-of-range sources are zero.
fn resample(row: &mut [f64], shape: &ImageShape, source: impl Fn(f64, f64) -> (f64, f64)) {
    let (h, w) = (shape.height, shape.width);
    let src = row.to_vec();
    for c in 0..shape.channels {
        let base = c * h * w;
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = source(x as f64, y as f64);
                let (sx, sy) = (sx.round(), sy.round());
                row[base + y * w + x] = if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                    src[base + sy as usize * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Shifts content by `(dx, dy)` pixels (positive = right/down), filling with zeros.
pub fn translate_image(row: &mut [f64], shape: &ImageShape, dx: i64, dy: i64) {
    if dx != 0 || dy != 0 {
        resample(row, shape, |x, y| (x - dx as f64, y - dy as f64));
    }
}

fn rotate_image(row: &mut [f64], shape: &ImageShape, angle: f64) {
    if angle == 0.0 {
        return;
    }
    let cx = (shape.width as f64 - 1.0) / 2.0;
    let cy = (shape.height as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    resample(row, shape, |x, y| {
        let (u, v) = (x - cx, y - cy);
        (cos * u + sin * v + cx, -sin * u + cos * v + cy)
    });
}

fn shear_image(row: &mut [f64], shape: &ImageShape, k: f64) {
    if k == 0.0 {
        return;
    }
    let cy = (shape.height as f64 - 1.0) / 2.0;
    resample(row, shape, |x, y| (x - k * (y - cy), y));
}
