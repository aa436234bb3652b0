//! Binary model container.
//!
//! ```text
//! "HYDM"                      4 bytes magic
//! version                     u16 LE
//! config_len                  u32 LE
//! config                      UTF-8 JSON {detector, hybrid}
//! tensor_count                u32 LE
//! tensor_count × {
//!     name_len  u32 LE, name bytes,
//!     rank      u32 LE, dims rank × u64 LE,
//!     payload   product(dims) × f64 LE
//! }
//! ```
//!
//! Parameters come first in model order, then for each batchnorm layer
//! `<layer>.running_mean`, `<layer>.running_var` and `<layer>.momentum_eps`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::Tensor;

use super::config::{DetectorConfig, HybridBlockConfig};
use super::model::{BnBuffer, Model, Param};

pub const MAGIC: &[u8; 4] = b"HYDM";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    detector: DetectorConfig,
    hybrid: Option<HybridBlockConfig>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    out.extend(t.to_le_bytes());
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        detector: model.detector_config().clone(),
        hybrid: model.hybrid_config().cloned(),
    })?;
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend((header.len() as u32).to_le_bytes());
    out.extend(&header);
    let count = model.params().len() + 3 * model.buffers().len();
    out.extend((count as u32).to_le_bytes());
    for p in model.params() {
        put_tensor(&mut out, &p.name, &p.tensor);
    }
    for b in model.buffers() {
        let s = &b.stats;
        let c = s.mean.len();
        put_tensor(&mut out, &format!("{}.running_mean", b.name), &Tensor::new(&[c], s.mean.clone())?);
        put_tensor(&mut out, &format!("{}.running_var", b.name), &Tensor::new(&[c], s.var.clone())?);
        put_tensor(&mut out, &format!("{}.momentum_eps", b.name), &Tensor::new(&[2], vec![s.momentum, s.eps])?);
    }
    Ok(out)
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
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} too large")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()?;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = self.u32()?;
        let dims = (0..rank).map(|_| self.u64()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let payload = self.take(count.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflows".into()))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(&dims, data)?))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()?;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let count = r.u32()?;
    let mut tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }

    let template = Model::build(header.detector.clone(), header.hybrid.clone(), 0)?;
    let n_params = template.params().len();
    if tensors.len() != n_params + 3 * template.buffers().len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, config implies {}",
            tensors.len(),
            n_params + 3 * template.buffers().len()
        )));
    }
    let stats = tensors.split_off(n_params);
    let params = tensors
        .into_iter()
        .map(|(name, tensor)| Param { name, tensor })
        .collect();
    let mut buffers = Vec::new();
    for (b, chunk) in template.buffers().iter().zip(stats.chunks_exact(3)) {
        let expect = |i: usize, suffix: &str| -> Result<&Tensor> {
            let (name, t) = &chunk[i];
            if *name != format!("{}.{suffix}", b.name) {
                return Err(Error::Format(format!("expected {}.{suffix}, found {name}", b.name)));
            }
            Ok(t)
        };
        let hyper = expect(2, "momentum_eps")?;
        if hyper.len() != 2 {
            return Err(Error::Format(format!("{}.momentum_eps must hold 2 values", b.name)));
        }
        buffers.push(BnBuffer {
            name: b.name.clone(),
            stats: RunningStats {
                mean: expect(0, "running_mean")?.data().to_vec(),
                var: expect(1, "running_var")?.data().to_vec(),
                momentum: hyper.data()[0],
                eps: hyper.data()[1],
            },
        });
    }
    Model::from_parts(header.detector, header.hybrid, params, buffers)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &to_bytes(model)?)
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        Model::build(DetectorConfig::desk(2, true), Some(HybridBlockConfig::default()), 7).unwrap()
    }

    #[test]
    fn byte_exact_round_trip() {
        let m = model();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(&bytes[..4], b"HYDM");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back.state_bytes(), m.state_bytes());
        assert_eq!(to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(from_bytes(&long), Err(Error::Format(_))));
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(from_bytes(&ver), Err(Error::Format(_))));
    }
}
