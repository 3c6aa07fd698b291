//! Versioned named-parameter checkpoint file.
//!
//! Layout (little endian):
//! ```text
//! magic "GQNLCKPT" | u32 version | u32 meta_len | meta utf8
//! u32 n_params, then per param: u32 name_len | name | u32 rank | u32 dims[rank] | f32 values
//! u8 has_adam; if 1: u64 step | f64 lr, beta1, beta2, eps | per param: f32 m | f32 v
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::adam::{AdamConfig, AdamState};
use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"GQNLCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Free-form metadata, typically the serialized model config.
    pub meta: String,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s(w: &mut impl Write, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| NnError::Checkpoint(e.to_string()))
    }
    fn f32s(&mut self, shape: &[usize]) -> Result<Tensor<f32>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n * 4)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::from_vec(shape, data)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, self.meta.len() as u32)?;
        w.write_all(self.meta.as_bytes())?;
        put_u32(&mut w, self.params.len() as u32)?;
        for (_, name, t) in self.params.iter() {
            put_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            put_u32(&mut w, t.shape().len() as u32)?;
            for &d in t.shape() {
                put_u32(&mut w, d as u32)?;
            }
            put_f32s(&mut w, t)?;
        }
        match &self.adam {
            None => w.write_all(&[0])?,
            Some(a) => {
                w.write_all(&[1])?;
                w.write_all(&a.step.to_le_bytes())?;
                for v in [a.config.learning_rate, a.config.beta1, a.config.beta2, a.config.eps] {
                    w.write_all(&v.to_le_bytes())?;
                }
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f32s(&mut w, m)?;
                    put_f32s(&mut w, v)?;
                }
            }
        }
        Ok(w)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let meta = r.string()?;
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let t = r.f32s(&shape)?;
            params.add(name, t);
        }
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let config = AdamConfig {
                    learning_rate: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    eps: r.f64()?,
                };
                let mut m = Vec::with_capacity(n);
                let mut v = Vec::with_capacity(n);
                for (_, _, t) in params.iter() {
                    m.push(r.f32s(t.shape())?);
                    v.push(r.f32s(t.shape())?);
                }
                Some(AdamState { config, step, m, v })
            }
            b => return Err(NnError::Checkpoint(format!("bad optimizer flag {b}"))),
        };
        if r.pos != buf.len() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint { meta, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// Copy values into `target`, requiring identical names and shapes.
    pub fn restore_into(&self, target: &mut ParamStore<f32>) -> Result<()> {
        if target.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "parameter count {} does not match model ({})",
                self.params.len(),
                target.len()
            )));
        }
        for (id, name, t) in self.params.iter() {
            let tid = target.id(name)?;
            if tid != id || target.get(tid).shape() != t.shape() {
                return Err(NnError::Checkpoint(format!("parameter `{name}` does not match model layout")));
            }
            *target.get_mut(tid) = t.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamStore::new();
        params.add_init("a.weight", &[3, 2, 2, 2], 8, &mut rng);
        params.add_zeros("a.bias", &[3]);
        let mut adam = AdamState::new(&params, AdamConfig::default());
        adam.step = 17;
        adam.m[0].data_mut()[1] = 0.25;
        Checkpoint {
            meta: "{\"profile\":\"desk\"}".into(),
            params,
            adam: Some(adam),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, c.meta);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.adam.as_ref().unwrap().step, 17);
    }

    #[test]
    fn rejects_truncation_and_version() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
