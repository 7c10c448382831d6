//! Binary checkpoint format.
//!
//! ```text
//! "MFCK"  u32 version
//! u32 meta_len, meta_len bytes of JSON metadata (network config, encoder)
//! tensor table: u32 count, then per tensor
//!     u32 name_len, name, u8 dtype (1 = f64), u32 rank, rank x u64 dims,
//!     numel x f64 data
//! u8 optimizer flag (0 none, 1 adam)
//!     adam: u64 step, f64 beta1, f64 beta2, f64 eps, tensor table m, tensor table v
//! 32-byte SHA-256 of everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Net, NetConfig};
use crate::engine::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::metatrain::AdamState;
use crate::mutenc::EncoderMode;

pub const MAGIC: &[u8; 4] = b"MFCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub net: NetConfig,
    pub encoder: EncoderMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet,
    pub optimizer: Option<AdamState>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_table(out: &mut Vec<u8>, set: &ParamSet) {
    out.extend((set.len() as u32).to_le_bytes());
    for (name, t) in set.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend((t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
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
            .ok_or_else(|| corrupt("unexpected end of file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn table(&mut self) -> Result<ParamSet> {
        let count = self.u32()?;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = self.u32()? as usize;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let dtype = self.u8()?;
            if dtype != DTYPE_F64 {
                return Err(corrupt(format!("tensor {name:?} has unsupported dtype {dtype}")));
            }
            let rank = self.u32()? as usize;
            let shape = (0..rank)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.saturating_mul(8) <= self.buf.len() - self.pos)
                .ok_or_else(|| corrupt(format!("tensor {name:?} shape {shape:?} is too large")))?;
            let data = (0..numel).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            set.insert(name, Tensor::new(shape, data)?);
        }
        Ok(set)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend((meta.len() as u32).to_le_bytes());
        out.extend(meta);
        put_table(&mut out, &self.params);
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend(adam.step.to_le_bytes());
                out.extend(adam.beta1.to_le_bytes());
                out.extend(adam.beta2.to_le_bytes());
                out.extend(adam.eps.to_le_bytes());
                put_table(&mut out, &adam.m);
                put_table(&mut out, &adam.v);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        Ok(out)
    }

    /// Parses a checkpoint and validates tensor shapes against its config.
    pub fn from_bytes(buf: &[u8]) -> Result<Checkpoint> {
        if buf.get(..4) != Some(&MAGIC[..]) {
            return Err(corrupt("bad magic bytes"));
        }
        let body_len = buf
            .len()
            .checked_sub(DIGEST_LEN)
            .ok_or_else(|| corrupt("unexpected end of file"))?;
        let (buf, digest) = buf.split_at(body_len);
        if Sha256::digest(buf).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(len)?)
            .map_err(|e| corrupt(format!("metadata: {e}")))?;
        let params = r.table()?;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
                let m = r.table()?;
                let v = r.table()?;
                Some(AdamState {
                    step,
                    beta1,
                    beta2,
                    eps,
                    m,
                    v,
                })
            }
            f => return Err(corrupt(format!("unknown optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(corrupt("trailing bytes after checkpoint"));
        }
        let net = Net::new(meta.net.clone()).map_err(|e| corrupt(e.to_string()))?;
        net.check_params(&params)
            .map_err(|e| corrupt(format!("shape mismatch: {e}")))?;
        if let Some(adam) = &optimizer {
            params
                .check_layout(&adam.m)
                .and_then(|_| params.check_layout(&adam.v))
                .map_err(|_| corrupt("optimizer state does not match parameters"))?;
        }
        Ok(Checkpoint {
            meta,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
