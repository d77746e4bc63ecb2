//! Binary checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MSGV" | u32 version | u64 step
//! u32 rng count | per rng: [u8; 32] seed, u64 stream, u128 word position
//! u32 tensor count | per tensor: u32 name len, name, u8 dtype, u32 ndim, u64 dims.., payload
//! u32 crc32 of everything before it
//! ```
//!
//! Tensors are the parameters in store order, then `adam.m.*`, `adam.v.*`
//! and `meta.config` (the config text as a `u8` vector).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;
use crate::training::TrainState;

pub const MAGIC: [u8; 4] = *b"MSGV";
pub const VERSION: u32 = 1;
const CONFIG_TENSOR: &str = "meta.config";

fn put_rng(out: &mut Vec<u8>, rng: &ChaCha8Rng) {
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
}

fn put_header(out: &mut Vec<u8>, name: &str, dtype: DType, shape: &[usize]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dtype as u8);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_header(out, name, T::DTYPE, t.shape());
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serializes the full training state.
pub fn to_bytes<T: Scalar>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&2u32.to_le_bytes());
    put_rng(&mut out, &state.model_rng);
    put_rng(&mut out, &state.data_rng);

    let entries = state.store.entries();
    let count = 3 * entries.len() + 1;
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for e in entries {
        put_tensor(&mut out, &e.name, &e.value);
    }
    for (e, m) in entries.iter().zip(&state.adam.m) {
        put_tensor(&mut out, &format!("adam.m.{}", e.name), m);
    }
    for (e, v) in entries.iter().zip(&state.adam.v) {
        put_tensor(&mut out, &format!("adam.v.{}", e.name), v);
    }
    let text = state.cfg.to_text();
    put_header(&mut out, CONFIG_TENSOR, DType::U8, &[text.len()]);
    out.extend_from_slice(text.as_bytes());

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save<T: Scalar>(state: &TrainState<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

/// A decoded tensor table entry; payload bytes stay raw until the dtype is known.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

impl RawTensor {
    pub fn decode<T: Scalar>(&self) -> Result<Tensor<T>> {
        if self.dtype != T::DTYPE {
            return Err(Error::Invalid(format!(
                "tensor {} is {}, expected {}",
                self.name,
                self.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let size = self.dtype.size();
        let data = self.payload.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(self.shape.clone(), data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Parsed archive before it is bound to a scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub step: u64,
    pub rngs: Vec<RngState>,
    pub tensors: Vec<RawTensor>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N, what)?);
        Ok(a)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn len(&mut self, what: &'static str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Truncated(what))
    }
}

impl Archive {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.array("magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let step = r.u64("step")?;
        let n_rng = r.u32("rng count")?;
        let mut rngs = Vec::new();
        for _ in 0..n_rng {
            rngs.push(RngState {
                seed: r.array("rng seed")?,
                stream: r.u64("rng stream")?,
                word_pos: u128::from_le_bytes(r.array("rng position")?),
            });
        }
        let n_tensors = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..n_tensors {
            let name_len = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
                .map_err(|_| Error::Invalid("tensor name is not utf-8".into()))?;
            let tag = r.take(1, "dtype tag")?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| Error::Invalid(format!("unknown dtype tag {tag}")))?;
            let ndim = r.u32("ndim")? as usize;
            let shape = (0..ndim).map(|_| r.len("dims")).collect::<Result<Vec<_>>>()?;
            let bytes = shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
                .ok_or(Error::Truncated("payload"))?;
            let payload = r.take(bytes, "payload")?.to_vec();
            tensors.push(RawTensor {
                name,
                dtype,
                shape,
                payload,
            });
        }
        let body = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Invalid(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
        }
        let computed = crc32fast::hash(&bytes[..body]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(Archive { step, rngs, tensors })
    }

    pub fn tensor(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let raw = self
            .tensor(CONFIG_TENSOR)
            .filter(|t| t.dtype == DType::U8)
            .ok_or_else(|| Error::Invalid("checkpoint has no config echo".into()))?;
        let text = std::str::from_utf8(&raw.payload).map_err(|_| Error::Invalid("config echo is not utf-8".into()))?;
        TrainConfig::from_text(text)
    }

    /// Rebuilds the training state; `T` must match the stored parameter dtype.
    pub fn into_state<T: Scalar>(self) -> Result<TrainState<T>> {
        let cfg = self.config()?;
        if cfg.dtype != T::DTYPE {
            return Err(Error::Invalid(format!(
                "checkpoint holds {} parameters, requested {}",
                cfg.dtype.name(),
                T::DTYPE.name()
            )));
        }
        if self.rngs.len() != 2 {
            return Err(Error::Invalid(format!("expected 2 rng states, found {}", self.rngs.len())));
        }
        let mut state = TrainState::<T>::new(cfg)?;
        let n = state.store.len();
        if self.tensors.len() != 3 * n + 1 {
            return Err(Error::Invalid(format!(
                "expected {} tensors for this config, found {}",
                3 * n + 1,
                self.tensors.len()
            )));
        }
        for (i, id) in state.store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let name = state.store.entry(id).name.clone();
            let (p, m, v) = (&self.tensors[i], &self.tensors[n + i], &self.tensors[2 * n + i]);
            if p.name != name || m.name != format!("adam.m.{name}") || v.name != format!("adam.v.{name}") {
                return Err(Error::Invalid(format!("tensor table out of order at parameter {name}")));
            }
            let (p, m, v) = (p.decode::<T>()?, m.decode::<T>()?, v.decode::<T>()?);
            let want = state.store.value(id).shape().to_vec();
            for t in [&p, &m, &v] {
                if t.shape() != want.as_slice() {
                    return Err(Error::shape("checkpoint", t.shape(), &want));
                }
            }
            *state.store.value_mut(id) = p;
            state.adam.m[i] = m;
            state.adam.v[i] = v;
        }
        state.step = self.step;
        state.model_rng = self.rngs[0].restore();
        state.data_rng = self.rngs[1].restore();
        Ok(state)
    }
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Archive::parse(&bytes)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<TrainState<T>> {
    Archive::parse(bytes)?.into_state()
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainState<T>> {
    read_archive(path)?.into_state()
}
