//! Versioned binary container of named parameter arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    b"SQRWCKPT"
//! version  u32
//! meta_len u32, meta: JSON object of string → string (sorted keys)
//! count    u32
//! count × { name_len u32, name utf-8, ndim u32, dims u64 × ndim, values f64 × Π dims (row-major) }
//! ```
//!
//! Values are written as raw IEEE-754 bits, so a save/load round trip is
//! bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::dense::{Activation, Dense, DenseNet};

pub const MAGIC: &[u8; 8] = b"SQRWCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: BTreeMap<String, String>,
    arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("kind".to_string(), kind.to_string());
        metadata.insert(
            "created_by".to_string(),
            concat!("seqreward ", env!("CARGO_PKG_VERSION")).to_string(),
        );
        Self {
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Configuration(format!("checkpoint lacks metadata `{key}`")))
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            values,
        });
    }

    pub fn push_array2(&mut self, name: impl Into<String>, a: &Array2<f64>) {
        self.push(
            name,
            vec![a.nrows(), a.ncols()],
            a.iter().copied().collect(),
        );
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Configuration(format!("checkpoint lacks array `{name}`")))
    }

    pub fn get_array2(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.get(name)?;
        if a.shape.len() != 2 {
            return Err(Error::Configuration(format!(
                "array `{name}` has rank {}, expected 2",
                a.shape.len()
            )));
        }
        Array2::from_shape_vec((a.shape[0], a.shape[1]), a.values.clone())
            .map_err(|e| Error::Configuration(format!("array `{name}`: {e}")))
    }

    pub fn push_net(&mut self, prefix: &str, net: &DenseNet) {
        let acts: Vec<&str> = net.activations().iter().map(|a| a.name()).collect();
        self.set_meta(&format!("{prefix}.activations"), acts.join(","));
        for (name, p) in net.param_names(prefix).into_iter().zip(net.params()) {
            self.push_array2(name, p);
        }
    }

    pub fn get_net(&self, prefix: &str) -> Result<DenseNet> {
        let acts = self.meta(&format!("{prefix}.activations"))?;
        let mut layers = Vec::new();
        for (i, name) in acts.split(',').enumerate() {
            let activation = Activation::from_name(name)
                .ok_or_else(|| Error::Configuration(format!("unknown activation `{name}`")))?;
            layers.push(Dense {
                weight: self.get_array2(&format!("{prefix}.w{i}"))?,
                bias: self.get_array2(&format!("{prefix}.b{i}"))?,
                activation,
            });
        }
        DenseNet::from_layers(layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let meta_len = r.u32()? as usize;
        let metadata: BTreeMap<String, String> =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| e.to_string())?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| e.to_string())?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            arrays.push(NamedArray {
                name,
                shape,
                values,
            });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes".into());
        }
        Ok(Self { metadata, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err("truncated checkpoint".into()),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in proptest::collection::vec(any::<f64>(), 1..40),
            name in "[a-z]{1,8}(\\.[a-z0-9]{1,4})?",
        ) {
            let mut ck = Checkpoint::new("test");
            ck.set_meta("seed", 7);
            let n = values.len();
            ck.push(name.clone(), vec![n], values.clone());
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            let got = &back.get(&name).unwrap().values;
            prop_assert_eq!(got.len(), n);
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
        }
    }

    #[test]
    fn net_round_trip_and_rejects_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::new(
            &[3, 5, 2],
            &[Activation::Relu, Activation::Sigmoid],
            &mut rng,
        );
        let mut ck = Checkpoint::new("net");
        ck.push_net("q", &net);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.get_net("q").unwrap(), net);
        let mut bytes = ck.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
