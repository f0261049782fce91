//! Binary checkpoint container.
//!
//! Layout, all integers `u32` little-endian:
//!
//! ```text
//! "BIATT1"
//! feature encoder_out hidden e_dim omega xi
//! repeated per tensor, in canonical parameter order:
//!     name_len name[name_len] rank dim[rank] f64-le[product(dim)]
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::attention::AttentionConfig;
use super::params::{ModelDims, ModelParams, Params};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 6] = b"BIATT1";

/// Trained weights plus the attention windows they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub attention: AttentionConfig,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.params.dims();
        let mut buf = Vec::with_capacity(16 + 8 * self.params.tensors().num_values());
        buf.extend_from_slice(MAGIC);
        for v in [
            d.feature,
            d.encoder_out,
            d.hidden,
            d.e_dim,
            self.attention.omega,
            self.attention.xi,
        ] {
            put_u32(&mut buf, v)?;
        }
        for (name, t) in self.params.tensors().entries() {
            put_u32(&mut buf, name.len())?;
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, t.rank())?;
            for &s in t.shape() {
                put_u32(&mut buf, s)?;
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing BIATT1 magic".into()));
        }
        let dims = ModelDims {
            feature: r.u32()?,
            encoder_out: r.u32()?,
            hidden: r.u32()?,
            e_dim: r.u32()?,
        };
        let attention = AttentionConfig {
            omega: r.u32()?,
            xi: r.u32()?,
        };
        dims.validate()?;

        let mut found: HashMap<String, Tensor> = HashMap::new();
        while !r.at_end() {
            let len = r.u32()?;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()?;
            if rank == 0 || rank > 2 {
                return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if found.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }

        let shapes = Params::shapes(&dims);
        let tensors = shapes.try_map(|name, shape| {
            let t = found
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match dims ({dims}), expected {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        })?;
        if let Some(extra) = found.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            params: ModelParams::new(dims, tensors)?,
            attention,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn small_checkpoint() -> Checkpoint {
        let dims = ModelDims {
            feature: 6,
            encoder_out: 5,
            hidden: 4,
            e_dim: 3,
        };
        Checkpoint {
            params: init_params(dims, 12).unwrap(),
            attention: AttentionConfig::new(7, 2),
        }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = small_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..6], b"BIATT1");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = small_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_dims = bytes.clone();
        wrong_dims[6] = 9; // feature = 9
        assert!(matches!(Checkpoint::from_bytes(&wrong_dims), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&bytes[30..60]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
