//! `TSCK` checkpoint files.
//!
//! Layout (little-endian): magic `TSCK`, u32 version, u32 config length, the
//! network config as JSON, u32 tensor count, then per tensor: u32 name length,
//! name bytes, u32 rank, rank x u32 dims, f32 values. Tensors are written in
//! the network's parameter order.

use std::fs;
use std::path::Path;

use super::{Module, NetworkConfig, SslNetwork};
use crate::error::{bail, Error, Result};
use crate::scalar::Scalar;

pub const CKPT_MAGIC: &[u8; 4] = b"TSCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &SslNetwork<T>) -> Self {
        let tensors = net
            .params()
            .into_iter()
            .map(|p| NamedTensor { name: p.name.clone(), shape: p.shape.clone(), values: p.value.iter().map(|v| v.as_f64() as f32).collect() })
            .collect();
        Self { config: net.config().clone(), tensors }
    }

    /// Fresh network of the stored architecture holding the stored values.
    pub fn to_network<T: Scalar>(&self) -> Result<SslNetwork<T>> {
        let mut net = SslNetwork::new(self.config.clone(), 0)?;
        self.apply(&mut net)?;
        Ok(net)
    }

    pub fn apply<T: Scalar>(&self, net: &mut SslNetwork<T>) -> Result<()> {
        let mut params = net.params_mut();
        if params.len() != self.tensors.len() {
            bail!(Validation, "checkpoint holds {} tensors, network has {}", self.tensors.len(), params.len());
        }
        for (p, t) in params.iter_mut().zip(&self.tensors) {
            if p.name != t.name || p.shape != t.shape {
                bail!(Validation, "checkpoint tensor {} {:?} does not match network tensor {} {:?}", t.name, t.shape, p.name, p.shape);
            }
            for (dst, &v) in p.value.iter_mut().zip(&t.values) {
                *dst = T::lit(v as f64);
            }
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut out, CKPT_VERSION as usize);
    let config = serde_json::to_vec(&ckpt.config).expect("config serializes");
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    put_u32(&mut out, ckpt.tensors.len());
    for t in &ckpt.tensors {
        put_u32(&mut out, t.name.len());
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            bail!(Corruption, "checkpoint truncated at byte {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != CKPT_MAGIC {
        bail!(Format, "not a checkpoint (bad magic)");
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != CKPT_VERSION as usize {
        bail!(Format, "unsupported checkpoint version {version}");
    }
    let len = r.u32()?;
    let config: NetworkConfig = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let values = r.take(numel * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push(NamedTensor { name, shape, values });
    }
    if r.pos != bytes.len() {
        bail!(Corruption, "{} trailing bytes in checkpoint", bytes.len() - r.pos);
    }
    Ok(Checkpoint { config, tensors })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
