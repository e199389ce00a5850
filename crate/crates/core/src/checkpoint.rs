//! Binary checkpoints: config, step, parameters and optimizer moments.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CITCKPT\0" | version u32
//! config   u32 length + key=value text
//! meta     u32 length + key=value text
//! step u64 | adam present u8 [lr beta1 beta2 eps f64, clip u8 + f64]
//! tensors  u32 count, each: u32 name length + name, dtype u8, rank u8,
//!          u64 per extent, payload
//! ```
//!
//! Adam moments are stored as tensors named `adam.m/<param>` and
//! `adam.v/<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{parse_kv, CitConfig};
use crate::optim::{Adam, AdamConfig, Moments};
use crate::params::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CITCKPT\0";
const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: CitConfig,
    /// Free-form settings saved alongside, e.g. the training config.
    pub meta: BTreeMap<String, String>,
    pub step: u64,
    pub params: ParamStore<T>,
    pub adam: Option<Adam<T>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    out.push(T::DTYPE.tag());
    out.push(t.rank() as u8);
    for &e in t.shape() {
        put_u64(out, e as u64);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt file ({what})"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| corrupt(what))
    }

    /// Reads a tensor stored in either precision, converting to `T`.
    fn tensor<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let name = self.str("tensor name")?;
        let tag = self.u8("dtype")?;
        let dtype =
            DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = self.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("extent")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or_else(|| corrupt("extent"))?;
        let bytes = self.take(n.checked_mul(dtype.size()).ok_or_else(|| corrupt("payload"))?, "payload")?;
        let data: Vec<T> = match dtype {
            DType::F32 => bytes.chunks_exact(4).map(|b| T::c(f32::read_le(b) as f64)).collect(),
            DType::F64 => bytes.chunks_exact(8).map(|b| T::c(f64::read_le(b))).collect(),
        };
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

fn kv_text(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_str(&mut out, &self.config.to_string());
        put_str(&mut out, &kv_text(&self.meta));
        put_u64(&mut out, self.step);
        match &self.adam {
            Some(a) => {
                out.push(1);
                put_f64(&mut out, a.config.lr);
                put_f64(&mut out, a.config.beta1);
                put_f64(&mut out, a.config.beta2);
                put_f64(&mut out, a.config.eps);
                out.push(a.config.clip_norm.is_some() as u8);
                put_f64(&mut out, a.config.clip_norm.unwrap_or(0.0));
                put_u64(&mut out, a.step);
            }
            None => out.push(0),
        }
        let moments = self.adam.as_ref().map(|a| a.moments.len()).unwrap_or(0);
        put_u32(&mut out, (self.params.len() + 2 * moments) as u32);
        for (name, p) in self.params.iter() {
            put_tensor(&mut out, name, &p.value);
        }
        if let Some(a) = &self.adam {
            for (name, mo) in &a.moments {
                put_tensor(&mut out, &format!("{M_PREFIX}{name}"), &mo.m);
                put_tensor(&mut out, &format!("{V_PREFIX}{name}"), &mo.v);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let cfg_text = r.str("config")?;
        let cfg_kv = parse_kv(&cfg_text)?;
        let config = CitConfig::from_pairs(cfg_kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let meta = parse_kv(&r.str("meta")?)?;
        let step = r.u64("step")?;
        let mut adam = match r.u8("adam flag")? {
            0 => None,
            1 => {
                let lr = r.f64("lr")?;
                let beta1 = r.f64("beta1")?;
                let beta2 = r.f64("beta2")?;
                let eps = r.f64("eps")?;
                let has_clip = r.u8("clip flag")? != 0;
                let clip = r.f64("clip")?;
                let clip_norm = has_clip.then_some(clip);
                let mut a = Adam::new(AdamConfig { lr, beta1, beta2, eps, clip_norm })?;
                a.step = r.u64("adam step")?;
                Some(a)
            }
            f => return Err(Error::Checkpoint(format!("bad adam flag {f}"))),
        };
        let count = r.u32("tensor count")?;
        let mut params = ParamStore::new();
        let mut ms = BTreeMap::new();
        let mut vs = BTreeMap::new();
        for _ in 0..count {
            let (name, t) = r.tensor::<T>()?;
            if let Some(p) = name.strip_prefix(M_PREFIX) {
                ms.insert(p.to_string(), t);
            } else if let Some(p) = name.strip_prefix(V_PREFIX) {
                vs.insert(p.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        if let Some(a) = &mut adam {
            for (name, m) in ms {
                let v =
                    vs.remove(&name).ok_or_else(|| Error::Checkpoint(format!("second moment missing for {name}")))?;
                a.moments.insert(name, Moments { m, v });
            }
        }
        Ok(Checkpoint { config, meta, step, params, adam })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let mut params = ParamStore::new();
        params.insert("a.weight", Tensor::from_f64([2, 3], &[1.0, -2.5, 3.25, 0.0, 1e-7, -0.0]).unwrap());
        params.insert("b", Tensor::scalar(7.0));
        let mut adam = Adam::new(AdamConfig { clip_norm: Some(1.0), ..AdamConfig::default() }).unwrap();
        adam.step = 3;
        adam.moments.insert("b".into(), Moments { m: Tensor::scalar(0.5), v: Tensor::scalar(0.25) });
        let meta = [("steps".to_string(), "10".to_string())].into_iter().collect();
        Checkpoint { config: CitConfig::toy(), meta, step: 3, params, adam: Some(adam) }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let bits: Vec<u32> = back.params.value("a.weight").unwrap().data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits[5], (-0.0f32).to_bits());
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = sample().to_bytes();
        for cut in [0, 4, 12, bytes.len() - 1] {
            assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::<f32>::from_bytes(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn loads_into_other_precision() {
        let back = Checkpoint::<f64>::from_bytes(&sample().to_bytes()).unwrap();
        assert_eq!(back.params.value("a.weight").unwrap().data()[2], 3.25);
    }
}
