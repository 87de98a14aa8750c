//! Binary parameter checkpoints.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "HRMSCKPT"
//! version      u32       1
//! rng_seed     u64
//! hash_len     u32
//! config_hash  hash_len bytes, UTF-8
//! count        u32       number of records, in sorted-name order
//! record*:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   ndim       u32
//!   extents    ndim × u64
//!   data       product(extents) × f64, row-major
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a write/read cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HRMSCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn new(params: ParamStore, config_hash: impl Into<String>) -> Self {
        Self {
            params,
            config_hash: config_hash.into(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.params.rng_seed().to_le_bytes())?;
        write_str(w, &self.config_hash)?;
        w.write_all(&len_u32(self.params.len())?.to_le_bytes())?;
        for (name, t) in self.params.iter() {
            write_str(w, name)?;
            w.write_all(&len_u32(t.shape().len())?.to_le_bytes())?;
            for e in t.shape() {
                w.write_all(&(*e as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let seed = read_u64(r)?;
        let config_hash = read_str(r)?;
        let count = read_u32(r)?;
        let mut params = ParamStore::new(seed);
        for _ in 0..count {
            let name = read_str(r)?;
            let ndim = read_u32(r)? as usize;
            let shape = (0..ndim)
                .map(|_| read_u64(r).map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params
                .insert(name, Tensor::new(shape, data)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        Ok(Self {
            params,
            config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&len_u32(s.len())?.to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Checkpoint("invalid UTF-8 in string field".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamStore::new(0xDEAD_BEEF);
        p.init_glorot("scale1.proj", &[5, 4], 5, 4).unwrap();
        p.insert("odd", Tensor::new([3], vec![-0.0, f64::MIN_POSITIVE, 1e300]).unwrap())
            .unwrap();
        let ck = Checkpoint::new(p, "abc123");
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config_hash, "abc123");
        assert_eq!(back.params.rng_seed(), 0xDEAD_BEEF);
        assert!(back.params.same_values(&ck.params));
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_foreign_files() {
        let bytes = b"NOTACKPT\x01\x00\x00\x00";
        assert!(matches!(
            Checkpoint::read_from(&mut &bytes[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
