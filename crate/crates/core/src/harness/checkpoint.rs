//! `*.ckpt.json`: a JSON manifest plus the parameters as a base64 blob of
//! little-endian `f32`.

use super::HarnessError;
use crate::policy::{ParamEntry, PolicyHyper, PolicyParams};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "ucpo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    format: String,
    version: u32,
    hyper: PolicyHyper,
    manifest: Vec<ParamEntry>,
    /// Training steps the parameters have seen.
    e_base: u64,
    sha256: String,
    params: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub e_base: u64,
}

/// Hex SHA-256 of the little-endian `f32` parameter blob.
pub fn params_hash(params: &PolicyParams) -> String {
    let digest = Sha256::digest(params.to_le_f32_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(path: &Path, params: &PolicyParams, e_base: u64) -> Result<(), HarnessError> {
    params.validate()?;
    let wire = Wire {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        hyper: params.hyper.clone(),
        manifest: params.manifest.clone(),
        e_base,
        sha256: params_hash(params),
        params: B64.encode(params.to_le_f32_bytes()),
    };
    std::fs::write(path, serde_json::to_string_pretty(&wire)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, HarnessError> {
    let wire: Wire = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if wire.format != CHECKPOINT_FORMAT {
        return Err(HarnessError::Incompatible(format!("format {:?}", wire.format)));
    }
    if wire.version != CHECKPOINT_VERSION {
        return Err(HarnessError::Incompatible(format!(
            "version {} (supported {CHECKPOINT_VERSION})",
            wire.version
        )));
    }
    if wire.manifest != wire.hyper.manifest() {
        return Err(HarnessError::Incompatible("manifest does not match its hyperparameters".into()));
    }
    let bytes = B64
        .decode(wire.params.as_bytes())
        .map_err(|e| HarnessError::Incompatible(format!("parameter blob: {e}")))?;
    let values = PolicyParams::values_from_le_f32_bytes(&bytes);
    let params = PolicyParams::from_values(wire.hyper, values)?;
    if params_hash(&params) != wire.sha256 {
        return Err(HarnessError::Incompatible("parameter hash mismatch".into()));
    }
    Ok(Checkpoint {
        params,
        e_base: wire.e_base,
    })
}

/// Loads a checkpoint and checks it against the expected architecture.
pub fn warm_start(path: &Path, expected: &PolicyHyper) -> Result<Checkpoint, HarnessError> {
    let ck = load_checkpoint(path)?;
    if &ck.params.hyper != expected || ck.params.manifest != expected.manifest() {
        return Err(HarnessError::Incompatible(format!(
            "checkpoint has {:?}, config expects {:?}",
            ck.params.hyper, expected
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Preset;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt.json");
        let p = PolicyParams::init(PolicyHyper::preset(Preset::Small), 4).unwrap();
        save_checkpoint(&path, &p, 1234).unwrap();
        let ck = warm_start(&path, &p.hyper).unwrap();
        assert_eq!(ck.e_base, 1234);
        assert_eq!(ck.params.values.len(), p.values.len());
        assert!(ck.params.values.iter().zip(&p.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(params_hash(&ck.params), params_hash(&p));
    }

    #[test]
    fn mismatched_shape_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt.json");
        let p = PolicyParams::init(PolicyHyper::preset(Preset::Tiny), 4).unwrap();
        save_checkpoint(&path, &p, 0).unwrap();
        let other = PolicyHyper {
            embed_dim: 16,
            ..PolicyHyper::preset(Preset::Tiny)
        };
        assert!(matches!(warm_start(&path, &other), Err(HarnessError::Incompatible(_))));
    }

    #[test]
    fn corrupted_blob_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt.json");
        let p = PolicyParams::init(PolicyHyper::preset(Preset::Tiny), 4).unwrap();
        save_checkpoint(&path, &p, 0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["version"] = serde_json::json!(99);
        std::fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(HarnessError::Incompatible(_))));
    }
}
