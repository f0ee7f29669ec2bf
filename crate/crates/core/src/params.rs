//! Named parameter storage plus the flat binary dump used for
//! reproducibility snapshots (sorter artifacts, model checkpoints).
//!
//! Dump layout (all integers little-endian):
//!   u32 magic "RALP", u32 version, u32 param count, then per parameter:
//!   u32 name length, name bytes (utf-8), u32 ndim, u32 * ndim extents,
//!   f64 * numel row-major values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

const MAGIC: u32 = 0x52414c50; // "RALP"
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.entries.iter().any(|p| p.name == name) {
            return Err(Error::DuplicateParam(name));
        }
        value.requires_grad = true;
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.push(Parameter { name, value, grad });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Uniform init in ±1/sqrt(fan_in).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut SeededRng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.range_f64(-bound, bound)).collect();
        self.add(name, Tensor::new(shape, data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if grad.shape() != entry.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set-grad",
                detail: format!(
                    "parameter `{}` has shape {:?}, gradient {:?}",
                    entry.name,
                    entry.value.shape(),
                    grad.shape()
                ),
            });
        }
        entry.grad = grad;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.numel()).sum()
    }

    /// True when every parameter value is bit-identical.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(&MAGIC.to_le_bytes());
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for p in &self.entries {
            let name = p.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &e in p.value.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in p.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        f.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut pos = 0usize;
        let take_u32 = |bytes: &[u8], pos: &mut usize| -> Result<u32> {
            if *pos + 4 > bytes.len() {
                return Err(Error::InvalidArgument("truncated parameter dump".into()));
            }
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            Ok(v)
        };
        if take_u32(&bytes, &mut pos)? != MAGIC {
            return Err(Error::InvalidArgument(format!(
                "{} is not a parameter dump (bad magic)",
                path.display()
            )));
        }
        let version = take_u32(&bytes, &mut pos)?;
        if version != VERSION {
            return Err(Error::InvalidArgument(format!("unsupported dump version {version}")));
        }
        let count = take_u32(&bytes, &mut pos)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = take_u32(&bytes, &mut pos)? as usize;
            if pos + name_len > bytes.len() {
                return Err(Error::InvalidArgument("truncated parameter dump".into()));
            }
            let name = String::from_utf8(bytes[pos..pos + name_len].to_vec())
                .map_err(|_| Error::InvalidArgument("parameter name is not utf-8".into()))?;
            pos += name_len;
            let ndim = take_u32(&bytes, &mut pos)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(take_u32(&bytes, &mut pos)? as usize);
            }
            let numel: usize = shape.iter().product();
            if pos + numel * 8 > bytes.len() {
                return Err(Error::InvalidArgument("truncated parameter dump".into()));
            }
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
                pos += 8;
            }
            store.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(matches!(s.add("w", Tensor::zeros(vec![1, 1])), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn uniform_init_within_bound() {
        let mut rng = SeededRng::new(11);
        let mut s = ParamStore::new();
        let id = s.add_uniform("w", vec![16, 16], 16, &mut rng).unwrap();
        let bound = 1.0 / 4.0;
        assert!(s.value(id).data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn same_seed_bit_identical_init() {
        let build = |seed| {
            let mut rng = SeededRng::new(seed);
            let mut s = ParamStore::new();
            s.add_uniform("w", vec![8, 8], 8, &mut rng).unwrap();
            s.add_uniform("b", vec![1, 8], 8, &mut rng).unwrap();
            s
        };
        assert!(build(5).bit_identical(&build(5)));
        assert!(!build(5).bit_identical(&build(6)));
    }

    #[test]
    fn dump_round_trips() {
        let mut rng = SeededRng::new(2);
        let mut s = ParamStore::new();
        s.add_uniform("layer.w", vec![3, 4], 3, &mut rng).unwrap();
        s.add_uniform("layer.b", vec![1, 4], 3, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        s.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert!(s.bit_identical(&loaded));
    }

    #[test]
    fn grad_shape_must_match() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(vec![2, 2])).unwrap();
        assert!(s.set_grad(id, Tensor::zeros(vec![2, 3])).is_err());
    }
}
