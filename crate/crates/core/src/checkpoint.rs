//! Binary checkpoint format.
//!
//! All integers and floats are little-endian. Floats use the scalar width
//! recorded in the header (4 or 8 bytes).
//!
//! ```text
//! offset  size  field
//! 0       8     magic b"FMCKPT\0\0"
//! 8       4     u32 format version (= 1)
//! 12      4     u32 scalar width in bytes
//! 16      32    config hash (sha256 of the canonical config JSON)
//! 48      8     u64 iteration
//! 56      8     u64 epoch
//! 64      8     u64 prototype extractions so far
//! 72            model spec, all u32:
//!                 input_dim, n_hidden, hidden[n_hidden], feature_dim,
//!                 embed_dim, heads, classes
//!               parameters: for every layer (encoder layers, embed, attend,
//!                 refine, classifier) the weight matrix (in × out, row-major)
//!                 then the bias (out)
//!               velocities: same order and shapes as the parameters
//!               prototypes: u8 present flag; if 1:
//!                 u64 epoch, u32 classes, u32 feature_dim,
//!                 u32 count per class, then values class-major, row-major
//!               rng: 32-byte ChaCha8 seed, u64 stream, u128 word position
//! ```
//!
//! The file must be consumed exactly; trailing bytes are a format error.
//! The memory bank is not stored. It is empty right after each extraction,
//! so checkpoints written at extraction boundaries restore exactly.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::nn::Linear;
use crate::prototype::PrototypeSet;
use crate::scalar::Scalar;
use crate::trainer::Trainer;

pub const MAGIC: [u8; 8] = *b"FMCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 72;

/// Fixed-size header, readable without knowing the scalar type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub scalar_bytes: u32,
    pub config_hash: [u8; 32],
    pub iteration: u64,
    pub epoch: u64,
    pub extractions: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub model: Model<F>,
    pub velocity: Model<F>,
    pub prototypes: Option<PrototypeSet<F>>,
    pub rng: RngState,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn capture(trainer: &Trainer<F>, config_hash: [u8; 32]) -> Self {
        Self {
            header: CheckpointHeader {
                version: FORMAT_VERSION,
                scalar_bytes: F::BYTES as u32,
                config_hash,
                iteration: trainer.iteration as u64,
                epoch: trainer.epoch as u64,
                extractions: trainer.extractions as u64,
            },
            model: trainer.model.clone(),
            velocity: trainer.velocity.clone(),
            prototypes: trainer.prototypes.clone(),
            rng: RngState::capture(&trainer.rng),
        }
    }

    /// Overwrites the trainer's evolving state. The bank is cleared.
    pub fn restore_into(&self, trainer: &mut Trainer<F>) -> Result<()> {
        if self.model.spec() != trainer.model.spec() {
            return Err(Error::Format(format!(
                "checkpoint model {:?} does not match trainer model {:?}",
                self.model.spec(),
                trainer.model.spec()
            )));
        }
        trainer.model = self.model.clone();
        trainer.velocity = self.velocity.clone();
        trainer.prototypes = self.prototypes.clone();
        trainer.rng = self.rng.restore();
        trainer.iteration = to_usize(self.header.iteration)?;
        trainer.epoch = to_usize(self.header.epoch)?;
        trainer.extractions = to_usize(self.header.extractions)?;
        trainer.bank.clear();
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(F::BYTES as u32).to_le_bytes());
        out.extend_from_slice(&self.header.config_hash);
        out.extend_from_slice(&self.header.iteration.to_le_bytes());
        out.extend_from_slice(&self.header.epoch.to_le_bytes());
        out.extend_from_slice(&self.header.extractions.to_le_bytes());

        let spec = self.model.spec();
        put_u32(&mut out, spec.input_dim);
        put_u32(&mut out, spec.hidden.len());
        for &h in &spec.hidden {
            put_u32(&mut out, h);
        }
        for v in [spec.feature_dim, spec.embed_dim, spec.heads, spec.classes] {
            put_u32(&mut out, v);
        }
        for m in [&self.model, &self.velocity] {
            for layer in m.layers() {
                layer.weight.iter().for_each(|&x| x.write_le(&mut out));
                layer.bias.iter().for_each(|&x| x.write_le(&mut out));
            }
        }

        match &self.prototypes {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                out.extend_from_slice(&(p.epoch() as u64).to_le_bytes());
                put_u32(&mut out, p.classes());
                put_u32(&mut out, p.feature_dim());
                for c in 0..p.classes() {
                    put_u32(&mut out, p.class(c).nrows());
                }
                p.matrix().iter().for_each(|&x| x.write_le(&mut out));
            }
        }

        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = read_header(bytes)?;
        if header.scalar_bytes as usize != F::BYTES {
            return Err(Error::Format(format!(
                "checkpoint stores {}-byte scalars, expected {}",
                header.scalar_bytes,
                F::BYTES
            )));
        }
        let mut r = Reader {
            buf: bytes,
            pos: HEADER_LEN,
        };
        let input_dim = r.u32()?;
        let n_hidden = r.u32()?;
        if n_hidden > 64 {
            return Err(Error::Format(format!("{n_hidden} hidden layers is implausible")));
        }
        let hidden = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let spec = ModelSpec {
            input_dim,
            hidden,
            feature_dim: r.u32()?,
            embed_dim: r.u32()?,
            heads: r.u32()?,
            classes: r.u32()?,
        };
        let mut model = Model::<F>::zeros(&spec).map_err(|e| Error::Format(format!("model spec: {e}")))?;
        let mut velocity = model.zeros_like();
        for m in [&mut model, &mut velocity] {
            for layer in m.layers_mut() {
                r.fill_layer(layer)?;
            }
        }

        let prototypes = match r.u8()? {
            0 => None,
            1 => {
                let epoch = to_usize(r.u64()?)?;
                let classes = r.u32()?;
                let d = r.u32()?;
                let counts = (0..classes).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let mut per_class = Vec::with_capacity(classes);
                for k in counts {
                    let n = k
                        .checked_mul(d)
                        .ok_or_else(|| Error::Format("prototype block overflows".into()))?;
                    let vals = r.scalars::<F>(n)?;
                    per_class.push(
                        Array2::from_shape_vec((k, d), vals)
                            .map_err(|e| Error::Format(format!("prototype block: {e}")))?,
                    );
                }
                Some(
                    PrototypeSet::new(per_class, d, epoch)
                        .map_err(|e| Error::Format(format!("prototypes: {e}")))?,
                )
            }
            flag => return Err(Error::Format(format!("bad prototype flag {flag}"))),
        };

        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            header,
            model,
            velocity,
            prototypes,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Parses and validates only the fixed-size header.
pub fn read_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "checkpoint is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(8);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let scalar_bytes = u32_at(12);
    if scalar_bytes != 4 && scalar_bytes != 8 {
        return Err(Error::Format(format!("bad scalar width {scalar_bytes}")));
    }
    Ok(CheckpointHeader {
        version,
        scalar_bytes,
        config_hash: bytes[16..48].try_into().expect("32 bytes"),
        iteration: u64_at(48),
        epoch: u64_at(56),
        extractions: u64_at(64),
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension fits in u32");
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_usize(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in usize")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        let v = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes"));
        Ok(v as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalars<F: Scalar>(&mut self, n: usize) -> Result<Vec<F>> {
        let bytes = n
            .checked_mul(F::BYTES)
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        Ok(self.take(bytes)?.chunks_exact(F::BYTES).map(F::read_le).collect())
    }

    fn fill_layer<F: Scalar>(&mut self, layer: &mut Linear<F>) -> Result<()> {
        let w = self.scalars::<F>(layer.weight.len())?;
        layer.weight.iter_mut().zip(w).for_each(|(dst, v)| *dst = v);
        let b = self.scalars::<F>(layer.bias.len())?;
        layer.bias.iter_mut().zip(b).for_each(|(dst, v)| *dst = v);
        Ok(())
    }
}
