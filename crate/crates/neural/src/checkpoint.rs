//! Binary checkpoint format.
//!
//! ```text
//! magic "ECLPCKPT" | version u32
//! kind   (u32 len + utf8)
//! step   u64
//! rng    56 bytes (seed, stream, word position)
//! config (u32 len + utf8 JSON)
//! count  u32
//! count × { name (u32 len + utf8) | ndim u32 | dims u32… | f32 payload }
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{NeuralError, Result};
use crate::param::Module;
use crate::rng::{SessionRng, RNG_STATE_BYTES};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ECLPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub step: u64,
    pub rng: SessionRng,
    /// Free-form JSON echo of the configuration that produced the weights.
    pub config: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture<M: Module + ?Sized>(
        kind: &str,
        module: &M,
        step: u64,
        rng: &SessionRng,
        config: String,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            step,
            rng: rng.clone(),
            config,
            tensors: module
                .params()
                .into_iter()
                .map(|(n, p)| (n, p.value.clone()))
                .collect(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored values into a module whose parameter names and shapes
    /// must match exactly.
    pub fn restore<M: Module + ?Sized>(&self, module: &mut M) -> Result<()> {
        let mut params = module.params_mut();
        if params.len() != self.tensors.len() {
            return Err(NeuralError::Checkpoint(format!(
                "checkpoint has {} tensors, module expects {}",
                self.tensors.len(),
                params.len()
            )));
        }
        for (name, p) in params.iter_mut() {
            let t = self
                .tensor(name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != p.shape() {
                return Err(NeuralError::ShapeMismatch {
                    context: "checkpoint restore",
                    left: t.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            p.value = t.clone();
            p.zero_grad();
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(NeuralError::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng.to_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NeuralError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let kind = r.string()?;
        let step = r.u64()?;
        let rng = SessionRng::from_bytes(r.take(RNG_STATE_BYTES)?)?;
        let config = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let payload = r.take(n * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(NeuralError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            step,
            rng,
            config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NeuralError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| NeuralError::Checkpoint(format!("invalid utf-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Dense;
    use crate::rng::SessionRng;

    #[test]
    fn save_load_save_is_identical() {
        let mut rng = SessionRng::new(5);
        let layer = Dense::new(4, 3, &mut rng);
        let ck = Checkpoint::capture("dense", &layer, 12, &rng, "{\"a\":1}".into());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let mut other = Dense::zeroed(4, 3);
        back.restore(&mut other).unwrap();
        assert_eq!(other.weight.data(), layer.weight.data());
    }

    #[test]
    fn truncated_and_wrong_kind_rejected() {
        let rng = SessionRng::new(0);
        let ck = Checkpoint::capture("dense", &Dense::zeroed(2, 2), 0, &rng, String::new());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(ck.expect_kind("gan").is_err());
        let mut wrong = Dense::zeroed(3, 2);
        assert!(ck.restore(&mut wrong).is_err());
    }
}
