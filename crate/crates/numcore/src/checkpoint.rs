//! Parameter checkpoints: a JSON object mapping each parameter name to its
//! shape and row-major values.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! exact rounding, so save followed by load reproduces every bit.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Checkpoint {
    pub params: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    CheckpointEntry { shape: t.shape().to_vec(), values: t.data().to_vec() },
                )
            })
            .collect();
        Checkpoint { params }
    }

    /// Overwrites every parameter of `store` from the checkpoint. The name
    /// sets and shapes must match exactly.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        for (name, _) in store.iter() {
            if !self.params.contains_key(name) {
                return Err(NumError::UnknownParam(format!("{name} (missing from checkpoint)")));
            }
        }
        for (name, entry) in &self.params {
            let tensor = Tensor::new(entry.shape.clone(), entry.values.clone())?;
            store.assign(name, tensor)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        for entry in ckpt.params.values() {
            Tensor::new(entry.shape.clone(), entry.values.clone())?;
        }
        Ok(ckpt)
    }

    /// Writes to a sibling temp file and renames, so an interrupted save never
    /// clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awkward_floats_round_trip_bit_exactly() {
        let values = vec![
            0.1,
            -0.0,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            5e-324,
            f64::MAX,
            -123456.789e-300,
            std::f64::consts::PI,
        ];
        let mut store = ParamStore::new();
        store.register("w", Tensor::matrix(2, 4, values.clone()).unwrap()).unwrap();
        let json = Checkpoint::from_store(&store).to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        let got = &back.params["w"].values;
        for (a, b) in values.iter().zip(got) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn apply_rejects_shape_mismatch() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(vec![2]).unwrap()).unwrap();
        let mut ckpt = Checkpoint::from_store(&store);
        ckpt.params.insert("w".into(), CheckpointEntry { shape: vec![3], values: vec![0.0; 3] });
        assert!(ckpt.apply_to(&mut store).is_err());
    }

    #[test]
    fn apply_rejects_missing_parameter() {
        let mut store = ParamStore::new();
        store.register("w", Tensor::zeros(vec![2]).unwrap()).unwrap();
        let ckpt = Checkpoint::default();
        assert!(ckpt.apply_to(&mut store).is_err());
    }
}
