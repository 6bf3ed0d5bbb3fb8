//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "CVIT" | u32 version | u32 tensor count | u32 config length | config JSON
//! per tensor: u32 name length | name | u32 rank | u64 extents.. | u8 dtype | payload
//! ```
//!
//! Dtype `0` is followed by raw f32 values, `2` by raw f64 values, and `1`
//! marks a tensor shared with an earlier entry: its payload is the u32-length
//! name of that entry.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use super::{CViTModel, ModelConfig};
use crate::autograd::Var;
use crate::error::{CheckpointError, Error, Result};
use crate::nn::{Buffer, ConvBn, Visitor};
use crate::rng::RngState;
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CVIT";
pub const CHECKPOINT_VERSION: u32 = 1;

const TAG_F32: u8 = 0;
const TAG_REF: u8 = 1;
const TAG_F64: u8 = 2;

enum Slot<T: Scalar> {
    Param(Var<T>),
    Buffer(Buffer<T>),
}

impl<T: Scalar> Slot<T> {
    fn id(&self) -> u64 {
        match self {
            Slot::Param(v) => v.id(),
            Slot::Buffer(b) => b.id(),
        }
    }

    fn tensor(&self) -> Tensor<T> {
        match self {
            Slot::Param(v) => v.to_tensor(),
            Slot::Buffer(b) => b.to_tensor(),
        }
    }

    fn shape(&self) -> Vec<usize> {
        match self {
            Slot::Param(v) => v.shape(),
            Slot::Buffer(b) => b.value().shape().to_vec(),
        }
    }

    fn set(&self, t: Tensor<T>) -> Result<()> {
        match self {
            Slot::Param(v) => v.set_value(t),
            Slot::Buffer(b) => b.set(t),
        }
    }
}

struct Collect<T: Scalar> {
    slots: Vec<(String, Slot<T>)>,
    fused: bool,
}

impl<T: Scalar> Visitor<T> for Collect<T> {
    fn param(&mut self, path: &str, p: &Var<T>) {
        self.slots.push((path.to_string(), Slot::Param(p.clone())));
    }
    fn buffer(&mut self, path: &str, b: &Buffer<T>) {
        self.slots.push((path.to_string(), Slot::Buffer(b.clone())));
    }
    fn conv_bn(&mut self, _path: &str, cb: &ConvBn<T>) {
        self.fused |= cb.is_fused();
    }
}

fn collect<T: Scalar>(model: &CViTModel<T>) -> Collect<T> {
    let mut c = Collect {
        slots: Vec::new(),
        fused: false,
    };
    crate::nn::Layer::visit(model, "", &mut c);
    c
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Malformed(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn to_bytes<T: Scalar>(model: &CViTModel<T>) -> Result<Vec<u8>> {
    let c = collect(model);
    if c.fused {
        return Err(Error::Contract(
            "cannot checkpoint a model with folded batch norms".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, c.slots.len())?;
    let cfg = serde_json::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    put_str(&mut out, &cfg)?;

    let mut first: HashMap<u64, &str> = HashMap::new();
    for (name, slot) in &c.slots {
        put_str(&mut out, name)?;
        let shape = slot.shape();
        put_u32(&mut out, shape.len())?;
        for &d in &shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        if let Some(owner) = first.get(&slot.id()) {
            out.push(TAG_REF);
            put_str(&mut out, owner)?;
            continue;
        }
        first.insert(slot.id(), name);
        let t = slot.tensor();
        match T::DTYPE {
            DType::F32 => {
                out.push(TAG_F32);
                for v in t.data() {
                    out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
                }
            }
            DType::F64 => {
                out.push(TAG_F64);
                for v in t.data() {
                    out.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")))
    }
}

/// Read the embedded config without loading any tensors.
pub fn read_config(bytes: &[u8]) -> Result<ModelConfig> {
    let mut r = Reader { buf: bytes, pos: 0 };
    read_header(&mut r).map(|(cfg, _)| cfg)
}

fn read_header(r: &mut Reader<'_>) -> Result<(ModelConfig, usize)> {
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic([magic[0], magic[1], magic[2], magic[3]]).into());
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let count = r.u32("tensor count")? as usize;
    let cfg = r.string("config")?;
    let cfg = ModelConfig::from_json(&cfg).map_err(|e| CheckpointError::Malformed(format!("embedded config: {e}")))?;
    Ok((cfg, count))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<CViTModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let (cfg, count) = read_header(&mut r)?;
    let model = CViTModel::<T>::build(&cfg, RngState::new(0))?;
    let slots: HashMap<String, Slot<T>> = collect(&model).slots.into_iter().collect();
    let mut loaded: HashSet<String> = HashSet::new();

    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("tensor rank")? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` has rank {rank}")).into());
        }
        let shape = (0..rank)
            .map(|_| r.u64("tensor extents").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let slot = slots
            .get(&name)
            .ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
        let expected = slot.shape();
        if shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: shape,
            }
            .into());
        }
        if loaded.contains(&name) {
            return Err(CheckpointError::Malformed(format!("tensor `{name}` appears twice")).into());
        }
        let numel: usize = shape.iter().product();
        match r.u8("dtype")? {
            TAG_F32 => {
                let raw = r.take(numel * 4, "tensor data")?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                    .collect();
                slot.set(Tensor::new(shape, data)?)?;
            }
            TAG_F64 => {
                let raw = r.take(numel * 8, "tensor data")?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| {
                        let mut a = [0u8; 8];
                        a.copy_from_slice(c);
                        T::lit(f64::from_le_bytes(a))
                    })
                    .collect();
                slot.set(Tensor::new(shape, data)?)?;
            }
            TAG_REF => {
                let to = r.string("reference target")?;
                let ok = loaded.contains(&to) && slots.get(&to).is_some_and(|t| t.id() == slot.id());
                if !ok {
                    return Err(CheckpointError::BadReference { from: name, to }.into());
                }
            }
            tag => return Err(CheckpointError::BadDtype(tag).into()),
        }
        loaded.insert(name);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
    }
    let mut missing: Vec<&String> = slots.keys().filter(|k| !loaded.contains(*k)).collect();
    missing.sort();
    if let Some(m) = missing.first() {
        return Err(CheckpointError::MissingTensor((*m).clone()).into());
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &CViTModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<CViTModel<T>> {
    from_bytes(&std::fs::read(path)?)
}
