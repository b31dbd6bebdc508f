//! Binary checkpoint format.
//!
//! ```text
//! "BSDN"                      magic
//! u32 LE                      format version (1)
//! u32 LE len + bytes          network config, canonical key = value text
//! u32 LE len + bytes          training config and state, same encoding
//! repeated tensor records:
//!   u32 LE len + bytes        tensor name
//!   4 x u32 LE                shape (N, C, H, W)
//!   N*C*H*W x f32 LE          values
//! u64 LE                      FNV-1a 64 of every preceding byte
//! ```
//!
//! Parameters are stored as `param/<name>`, Adam moments as `adam.m/<name>`
//! and `adam.v/<name>`. The training block carries `state.step`; together
//! with `seed` it fixes the per-step random streams.

use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::kv::{KvDoc, KvReader};
use crate::network::{build_network, Network, NetworkConfig};
use crate::tensor::{Shape, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"BSDN";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Named parameters in canonical network order.
    pub params: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub step: u64,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_bytes(out, name.as_bytes());
    for d in t.shape().0 {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    fn train_block(&self) -> KvDoc {
        let mut d = self.train.to_kv();
        d.push("state.step", self.step);
        d
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_bytes(&mut out, self.network.to_kv().to_text().as_bytes());
        put_bytes(&mut out, self.train_block().to_text().as_bytes());
        for (name, t) in &self.params {
            put_tensor(&mut out, &format!("param/{name}"), t);
        }
        for ((name, _), t) in self.params.iter().zip(&self.adam_m) {
            put_tensor(&mut out, &format!("adam.m/{name}"), t);
        }
        for ((name, _), t) in self.params.iter().zip(&self.adam_v) {
            put_tensor(&mut out, &format!("adam.v/{name}"), t);
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// The network described by the stored config, loaded with the stored parameters.
    pub fn restore_network(&self) -> Result<Network> {
        let mut net = build_network(&self.network, 0)?;
        net.load_params(&self.params)?;
        Ok(net)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        let net_text = r.string("network config")?;
        let train_text = r.string("training config")?;

        // everything up to the trailing checksum is tensor records
        if bytes.len() < r.pos + 8 {
            return Err(CheckpointError::Truncated("checksum").into());
        }
        let body_end = bytes.len() - 8;
        let mut tensors = Vec::new();
        while r.pos < body_end {
            let mut rec = Reader {
                bytes: &bytes[..body_end],
                pos: r.pos,
            };
            let name = rec.string("tensor name")?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = rec.u32("tensor shape")? as usize;
            }
            let shape = Shape(dims);
            let len = dims
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated("tensor data"))?;
            let raw = rec.take(len, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(shape, data)?));
            r.pos = rec.pos;
        }
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        let computed = fnv1a64(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::Checksum { stored, computed }.into());
        }

        let malformed = |e: Error| Error::from(CheckpointError::Malformed(e.to_string()));
        let network = NetworkConfig::from_kv(&KvDoc::parse(&net_text).map_err(malformed)?)
            .map_err(malformed)?;
        let train_doc = KvDoc::parse(&train_text).map_err(malformed)?;
        let mut kr = KvReader::new(&train_doc);
        let train = TrainConfig::read_kv(&mut kr).map_err(malformed)?;
        let step: u64 = kr.required("state.step").map_err(malformed)?;
        kr.finish().map_err(malformed)?;

        let mut params = Vec::new();
        let mut adam_m = Vec::new();
        let mut adam_v = Vec::new();
        for (name, t) in tensors {
            if let Some(n) = name.strip_prefix("param/") {
                params.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("adam.m/") {
                adam_m.push((n.to_string(), t));
            } else if let Some(n) = name.strip_prefix("adam.v/") {
                adam_v.push((n.to_string(), t));
            } else {
                return Err(CheckpointError::Malformed(format!("unexpected tensor {name}")).into());
            }
        }
        for (kind, list) in [("adam.m", &adam_m), ("adam.v", &adam_v)] {
            let aligned = list.len() == params.len()
                && list.iter().zip(&params).all(|((a, ta), (b, tb))| a == b && ta.shape() == tb.shape());
            if !aligned {
                return Err(CheckpointError::Malformed(format!("{kind} records do not match parameters")).into());
            }
        }
        Ok(Checkpoint {
            network,
            train,
            params,
            adam_m: adam_m.into_iter().map(|(_, t)| t).collect(),
            adam_v: adam_v.into_iter().map(|(_, t)| t).collect(),
            step,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")).into())
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.encode()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
