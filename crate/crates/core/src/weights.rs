//! Named weight tensors and the `DSFW` container format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"DSFW"  u32 version (=1)  u32 tensor_count
//! repeated: u16 name_len, name (UTF-8), u8 ndim, ndim × u32 dims, prod(dims) × f32
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand_core::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Op};

pub const MAGIC: &[u8; 4] = b"DSFW";
pub const VERSION: u32 = 1;

/// Prior probability the score bias is initialized to, so untrained heads
/// start out mostly below the detection threshold.
pub const SCORE_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::WeightFormat(format!("dims {dims:?} imply {n} values, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Names the graph needs that are absent here, in graph order.
    pub fn missing_for(&self, graph: &LayerGraph) -> Vec<String> {
        graph
            .parameter_names()
            .into_iter()
            .filter(|(name, _)| !self.tensors.contains_key(name))
            .map(|(name, _)| name)
            .collect()
    }

    /// Untrained weights for every parameter of `graph`.
    ///
    /// Convolutions draw from N(0, 2 / fan_in); biases are zero except the
    /// score logits, which start at the [`SCORE_PRIOR`] log-odds; batch norms
    /// are neutral. Parameters are drawn in graph order from one stream, so a
    /// seed fully determines the store.
    pub fn seeded(graph: &LayerGraph, seed: u64) -> Self {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut store = Self::new();
        let prior_logit = -((1.0 - SCORE_PRIOR) / SCORE_PRIOR).ln() as f32;
        for node in &graph.nodes {
            for (suffix, dims) in node.op.param_shapes() {
                let n: usize = dims.iter().product();
                let data = match (suffix, &node.op) {
                    ("weight", op) => {
                        let fan_in = match *op {
                            Op::Conv { kernel, in_channels, .. } => kernel * kernel * in_channels,
                            Op::Depthwise { kernel, .. } => kernel * kernel,
                            Op::Pointwise { in_channels, .. } => in_channels,
                            _ => unreachable!("only convolutions carry weights"),
                        };
                        he_normal(&mut rng, n, fan_in)
                    }
                    ("bias", _) if node.name.ends_with(".score") => vec![prior_logit; n],
                    ("gamma", _) | ("running_var", _) => vec![1.0; n],
                    _ => vec![0.0; n],
                };
                store.insert(format!("{}.{suffix}", node.name), Tensor { dims, data });
            }
        }
        store
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let name_len =
                u16::try_from(name.len()).map_err(|_| Error::WeightFormat(format!("tensor name too long: {name}")))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let ndim = u8::try_from(t.dims.len())
                .map_err(|_| Error::WeightFormat(format!("tensor {name} has too many dims")))?;
            w.write_all(&[ndim])?;
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| Error::WeightFormat(format!("tensor {name} dim overflow")))?;
                w.write_all(&d.to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::WeightFormat("bad magic bytes (expected DSFW)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut store = Self::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::WeightFormat("tensor name is not UTF-8".into()))?
                .to_owned();
            let ndim = r.take(1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32()? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::WeightFormat(format!("tensor {name} is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::WeightFormat("size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if store.tensors.insert(name.clone(), Tensor { dims, data }).is_some() {
                return Err(Error::WeightFormat(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFormat(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(store)
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

fn he_normal(rng: &mut impl Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| normal.sample(rng) as f32).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
                Error::WeightFormat(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
