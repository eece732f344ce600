use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::NdArray;
use crate::error::{Error, Result};
use crate::io::{read_bytes, read_u64, write_u64};

pub const PARAM_MAGIC: &[u8; 8] = b"ROCCPAR1";

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: NdArray,
    pub grad: NdArray,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: &str, value: NdArray) -> Self {
        let grad = NdArray::zeros(value.shape());
        Self {
            name: name.to_string(),
            value,
            grad,
            trainable: true,
        }
    }
}

/// Named parameters in deterministic (lexicographic) order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Parameter>,
    seed: u64,
}

/// FNV-1a, stable across builds; mixes parameter names into the init seed.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: &str, value: NdArray) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        self.params
            .insert(name.to_string(), Parameter::new(name, value));
        Ok(())
    }

    /// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the stream
    /// depends only on the store seed and the parameter name.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.insert(name, NdArray::from_vec(shape, data)?)
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, NdArray::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&NdArray> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Overwrites a value in place, keeping shape.
    pub fn set_value(&mut self, name: &str, value: NdArray) -> Result<()> {
        let p = self
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.values_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        for p in self.params.values() {
            write_u64(w, p.name.len() as u64)?;
            w.write_all(p.name.as_bytes())?;
            write_u64(w, p.value.rank() as u64)?;
            for &e in p.value.shape() {
                write_u64(w, e as u64)?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a checkpoint. Gradients start at zero; everything is trainable.
    pub fn read_from<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != PARAM_MAGIC {
            return Err(bad("missing ROCCPAR1 magic"));
        }
        let mut cur = &bytes[8..];
        let mut store = ParamStore::new(0);
        while !cur.is_empty() {
            let n = read_u64(&mut cur).map_err(|_| bad("truncated name length"))? as usize;
            let name = String::from_utf8(read_bytes(&mut cur, n).map_err(|_| bad("truncated name"))?)
                .map_err(|_| bad("name is not utf-8"))?;
            let rank = read_u64(&mut cur).map_err(|_| bad("truncated rank"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut cur).map_err(|_| bad("truncated extent"))? as usize);
            }
            let count: usize = shape.iter().product();
            let raw = read_bytes(&mut cur, count * 8).map_err(|_| bad("truncated payload"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.insert(&name, NdArray::from_vec(&shape, data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f, path)
    }

    /// Copies values of every parameter present in `other` into `self`.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in other.iter() {
            self.set_value(&p.name, p.value.clone())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new(7);
        let mut b = ParamStore::new(7);
        a.init_uniform("w", &[4, 3], 4).unwrap();
        b.init_uniform("w", &[4, 3], 4).unwrap();
        assert_eq!(a.value("w").unwrap(), b.value("w").unwrap());
        assert!(a.value("w").unwrap().data().iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn init_is_independent_of_creation_order() {
        let mut a = ParamStore::new(1);
        a.init_uniform("x", &[3], 3).unwrap();
        a.init_uniform("y", &[3], 3).unwrap();
        let mut b = ParamStore::new(1);
        b.init_uniform("y", &[3], 3).unwrap();
        assert_eq!(a.value("y").unwrap(), b.value("y").unwrap());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut a = ParamStore::new(0);
        a.init_zeros("b", &[2]).unwrap();
        assert!(a.init_zeros("b", &[2]).is_err());
    }

    #[test]
    fn checkpoint_layout() {
        let mut s = ParamStore::new(0);
        s.insert("ab", NdArray::vector(&[1.5])).unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let mut expect = b"ROCCPAR1".to_vec();
        expect.extend(2u64.to_le_bytes());
        expect.extend(b"ab");
        expect.extend(1u64.to_le_bytes());
        expect.extend(1u64.to_le_bytes());
        expect.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, expect);
        let back = ParamStore::read_from(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.value("ab").unwrap().data(), &[1.5]);
    }

    #[test]
    fn zero_grad_clears() {
        let mut s = ParamStore::new(0);
        s.init_zeros("b", &[2]).unwrap();
        s.get_mut("b").unwrap().grad.fill(3.0);
        s.zero_grad();
        assert_eq!(s.get("b").unwrap().grad.data(), &[0.0, 0.0]);
    }
}
