//! Run configuration document and content digests.
//!
//! A [`RunConfig`] collects every knob of the pipeline in one JSON document.
//! Artifacts written by the command-line tools embed the digest of the
//! configuration that produced them so downstream stages can refuse
//! mismatched inputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fmcw::RadarConfig;
use crate::heads::LossConfig;
use crate::learnable::InitScheme;
use crate::teacher::{CfarConfig, SpConfig};
use crate::trainer::TrainConfig;

/// Canonical JSON serialization: recursively key-sorted objects with no
/// whitespace. `serde_json` objects are backed by a BTreeMap, so
/// serializing through `Value` sorts keys; float formatting is the
/// shortest round-trip form and identical across platforms.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    serde_json::to_string(&v).map_err(|e| Error::Config(format!("serialization failed: {e}")))
}

/// Hex SHA-256 of the canonical JSON serialization of a value.
pub fn digest<T: Serialize>(value: &T) -> Result<String> {
    let canon = canonical_json(value)?;
    let mut h = Sha256::new();
    h.update(canon.as_bytes());
    Ok(format!("{:x}", h.finalize()))
}

/// Optional path section of a run configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

/// The full pipeline configuration. Unknown keys are rejected on parse;
/// omitted sections fall back to the defaults documented on each type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub radar: RadarConfig,
    pub sp: SpConfig,
    pub cfar: CfarConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub init: InitScheme,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Parses a run configuration from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Digest of the whole document.
    pub fn digest(&self) -> Result<String> {
        digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable_and_key_order_independent() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": [1.5, 2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a": [1.5, 2], "b": 1}"#).unwrap();
        assert_eq!(digest(&a).unwrap(), digest(&b).unwrap());
        assert_eq!(canonical_json(&a).unwrap(), r#"{"a":[1.5,2],"b":1}"#);
    }

    #[test]
    fn default_run_config_round_trips() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.digest().unwrap(), back.digest().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"not_a_key": 1}"#);
        assert!(err.is_err());
    }
}
