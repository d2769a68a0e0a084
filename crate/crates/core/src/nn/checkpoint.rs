//! Versioned JSON parameter checkpoints.
//!
//! A checkpoint is an ordered list of `(name, shape, row-major values)`
//! records plus free-form metadata. Floats are written in shortest
//! round-trip form, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "vflhlp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub tag: String,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            tag: tag.into(),
            meta: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Self {
        self.meta.insert(
            key.to_string(),
            serde_json::to_value(value).expect("metadata serializes"),
        );
        self
    }

    pub fn meta_as<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key '{key}'")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    /// Appends every tensor of `params` under `prefix`.
    pub fn push_params<P: ParamSet>(&mut self, prefix: &str, params: &P) {
        params.visit(prefix, &mut |name, shape, values| {
            self.tensors.push(TensorRecord {
                name: name.to_string(),
                shape: shape.to_vec(),
                values: values.to_vec(),
            })
        });
    }

    /// Fills `params` from the tensors stored under `prefix`; names and
    /// shapes must match exactly.
    pub fn load_params<P: ParamSet>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let by_name: BTreeMap<&str, &TensorRecord> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        let mut err = None;
        params.visit_mut(prefix, &mut |name, shape, values| {
            if err.is_some() {
                return;
            }
            match by_name.get(name) {
                None => err = Some(Error::Checkpoint(format!("tensor '{name}' missing"))),
                Some(t) if t.shape != shape || t.values.len() != values.len() => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor '{name}' has shape {:?}, expected {shape:?}",
                        t.shape
                    )))
                }
                Some(t) => values.copy_from_slice(&t.values),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        for t in &ck.tensors {
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Checkpoint(format!("tensor '{}' length/shape mismatch", t.name)));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::encoder::{Encoder, EncoderSpec};
    use crate::rng::stream;
    use proptest::prelude::*;

    fn spec() -> EncoderSpec {
        EncoderSpec {
            cardinalities: vec![3, 2],
            numerical: 1,
            embed_dim: 2,
            widths: vec![4, 2],
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), scale in -1e6f64..1e6) {
            let mut enc = Encoder::init(&spec(), &mut stream(seed, "ck"));
            enc.mlp.layers[0].weights.mapv_inplace(|w| w * scale);
            let mut ck = Checkpoint::new("test").with_meta("seed", seed);
            ck.push_params("encoder", &enc);
            let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
            let mut restored = enc.zeros_like();
            back.load_params("encoder", &mut restored).unwrap();
            let a: Vec<u64> = enc.flatten().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = restored.flatten().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.meta_as::<u64>("seed").unwrap(), seed);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let enc = Encoder::init(&spec(), &mut stream(1, "ck"));
        let mut ck = Checkpoint::new("t");
        ck.push_params("encoder", &enc);
        let mut other_spec = spec();
        other_spec.widths = vec![5, 2];
        let mut other = Encoder::init(&other_spec, &mut stream(1, "ck"));
        assert!(ck.load_params("encoder", &mut other).is_err());
        assert!(ck.load_params("missing", &mut enc.clone()).is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut ck = Checkpoint::new("t");
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
