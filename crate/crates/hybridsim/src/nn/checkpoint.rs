//! Versioned parameter checkpoints: named tensors plus the manifest that
//! produced them, as JSON. Floats print in shortest round-trip form, so a
//! save/load cycle reproduces values exactly.

use super::{NnError, ParamSet};
use crate::autodiff::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub manifest: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn save_params(
    path: &Path,
    params: &ParamSet,
    manifest: serde_json::Value,
) -> Result<(), NnError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        manifest,
        tensors: params
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect(),
    };
    let body = serde_json::to_string(&ckpt).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    fs::write(path, body).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Load a checkpoint; tensors come back in file order with their manifest.
pub fn load_params(path: &Path) -> Result<(ParamSet, serde_json::Value), NnError> {
    let body = fs::read_to_string(path)
        .map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    let mut ps = ParamSet::new();
    for t in ckpt.tensors {
        ps.add(&t.name, Tensor::new(t.shape, t.data))?;
    }
    Ok((ps, ckpt.manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        ps.add("w", Tensor::matrix(3, 4, data)).unwrap();
        ps.add("b", Tensor::vector(vec![0.1, -1e-300, 2.5e17])).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        save_params(&path, &ps, serde_json::json!({"kind": "test"})).unwrap();
        let (loaded, manifest) = load_params(&path).unwrap();

        assert_eq!(manifest["kind"], "test");
        assert_eq!(loaded.len(), ps.len());
        for ((n1, t1), (n2, t2)) in loaded.iter().zip(ps.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"version":99,"manifest":null,"tensors":[]}"#).unwrap();
        assert!(load_params(&path).is_err());
    }
}
