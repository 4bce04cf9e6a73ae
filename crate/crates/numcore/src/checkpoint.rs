//! Parameter checkpoints: a JSON manifest plus one raw little-endian f64 blob.
//!
//! `<stem>.json` holds `[{name, shape, offset}]` with `offset` counted in
//! values; `<stem>.bin` holds the concatenated data.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::param::ParamStore;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save(store: &ParamStore, stem: &Path) -> Result<()> {
    let (manifest_path, blob_path) = paths(stem);
    let mut manifest = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut offset = 0;
    for (_, p) in store.iter() {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value().shape().to_vec(),
            offset,
        });
        for v in p.value().data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.value().len();
    }
    fs::write(manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(blob_path, blob)?;
    Ok(())
}

/// Overwrites the values of every parameter in `store` from a checkpoint.
/// Names and shapes must match exactly.
pub fn load_into(store: &mut ParamStore, stem: &Path) -> Result<()> {
    let (manifest_path, blob_path) = paths(stem);
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let blob = fs::read(blob_path)?;
    if blob.len() % 8 != 0 {
        return Err(NumError::Invalid("blob length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if manifest.len() != store.len() {
        return Err(NumError::Invalid(format!(
            "checkpoint has {} parameters, model has {}",
            manifest.len(),
            store.len()
        )));
    }
    for entry in &manifest {
        let id = store.id(&entry.name)?;
        let param = store.get_mut(id);
        if param.value().shape() != entry.shape.as_slice() {
            return Err(NumError::shape("checkpoint", param.value().shape(), &entry.shape));
        }
        let n = param.value().len();
        let src = values.get(entry.offset..entry.offset + n).ok_or(NumError::OutOfRange {
            what: "checkpoint blob",
            index: entry.offset + n,
            size: values.len(),
        })?;
        param.value_mut().data_mut().copy_from_slice(src);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let mut a = ParamStore::new();
        a.add("w", Tensor::matrix(2, 2, vec![1.0, -0.1, 1e-300, f64::MAX]));
        a.add("b", Tensor::row_vector(vec![0.5, std::f64::consts::PI]));
        save(&a, &stem).unwrap();

        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(&[2, 2]));
        b.add("b", Tensor::zeros(&[1, 2]));
        load_into(&mut b, &stem).unwrap();
        for ((_, x), (_, y)) in a.iter().zip(b.iter()) {
            assert_eq!(x.value(), y.value());
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let mut a = ParamStore::new();
        a.add("w", Tensor::zeros(&[2, 2]));
        save(&a, &stem).unwrap();
        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(&[1, 4]));
        assert!(load_into(&mut b, &stem).is_err());
    }
}
