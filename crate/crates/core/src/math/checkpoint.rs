//! Flat binary parameter blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LAMPCKPT" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: utf-8 bytes | rank: u32 | dims: u64 × rank | values: f64 × prod(dims)
//! ```
//!
//! Values are always widened to `f64`, so `f32` and `f64` runs share a format.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{Mlp, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"LAMPCKPT";
pub const VERSION: u32 = 1;

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBundle {
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl TensorBundle {
    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    pub fn push_mlp<T: Scalar>(&mut self, prefix: &str, mlp: &Mlp<T>) {
        for (i, l) in mlp.layers().iter().enumerate() {
            self.push(format!("{prefix}.{i}.weight"), &l.weight);
            self.push(format!("{prefix}.{i}.bias"), &l.bias);
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrite the parameters of `mlp` from `prefix.*` entries, checking shapes.
    pub fn load_mlp<T: Scalar>(&self, prefix: &str, mlp: &mut Mlp<T>) -> Result<()> {
        let index: BTreeMap<&str, &Tensor<f64>> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (i, l) in mlp.layers_mut().iter_mut().enumerate() {
            for (suffix, dst) in [("weight", &mut l.weight), ("bias", &mut l.bias)] {
                let name = format!("{prefix}.{i}.{suffix}");
                let src = index
                    .get(name.as_str())
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if src.shape() != dst.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name}: checkpoint shape {:?} does not match network shape {:?}",
                        src.shape(),
                        dst.shape()
                    )));
                }
                for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
                    *d = T::lit(s);
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut tensors = Vec::new();
        while r.pos < bytes.len() {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let data = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::from_vec(&dims, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        Ok(TensorBundle { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated blob".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Activation;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn header_layout_is_fixed() {
        let mut b = TensorBundle::default();
        b.push("x", &Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], b"LAMPCKPT");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(bytes[16], b'x');
        assert_eq!(&bytes[17..21], &1u32.to_le_bytes());
        assert_eq!(&bytes[21..29], &2u64.to_le_bytes());
        assert_eq!(&bytes[29..37], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 45);
    }

    #[test]
    fn truncated_and_foreign_blobs_fail() {
        assert!(TensorBundle::from_bytes(b"NOTACKPT\x01\x00\x00\x00").is_err());
        let mut b = TensorBundle::default();
        b.push("w", &Tensor::<f64>::zeros(&[3, 3]));
        let bytes = b.to_bytes();
        assert!(TensorBundle::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn shape_mismatch_on_load_is_reported() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let a = Mlp::<f64>::init(&[3, 4, 2], Activation::Elu, Activation::Identity, &mut rng).unwrap();
        let mut b = Mlp::<f64>::init(&[3, 5, 2], Activation::Elu, Activation::Identity, &mut rng).unwrap();
        let mut bundle = TensorBundle::default();
        bundle.push_mlp("net", &a);
        assert!(matches!(bundle.load_mlp("net", &mut b), Err(Error::Checkpoint(_))));
    }

    proptest! {
        #[test]
        fn mlp_round_trips_bit_exact(seed in any::<u64>(), hidden in 1usize..9) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Mlp::<f64>::init(&[3, hidden, 2], Activation::Elu, Activation::Tanh, &mut rng).unwrap();
            let mut bundle = TensorBundle::default();
            bundle.push_mlp("net", &a);
            let decoded = TensorBundle::from_bytes(&bundle.to_bytes()).unwrap();
            let mut b = Mlp::<f64>::zeros(&[3, hidden, 2], Activation::Elu, Activation::Tanh).unwrap();
            decoded.load_mlp("net", &mut b).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
