use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EdgeTypeMode, NetworkConfig, NetworkParams};
use crate::error::{MugError, Result};
use crate::numerics::AdamState;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Settings a checkpoint must agree with before it can be loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub hidden: usize,
    pub cheb_order: usize,
    pub gn_groups: usize,
    pub input_dim: usize,
    pub edge_type_mode: EdgeTypeMode,
    pub template_hash: String,
}

impl ConfigEcho {
    pub fn new(config: &NetworkConfig, template_hash: &str) -> Self {
        Self {
            hidden: config.hidden,
            cheb_order: config.cheb_order,
            gn_groups: config.gn_groups,
            input_dim: config.input_dim,
            edge_type_mode: config.edge_type_mode,
            template_hash: template_hash.to_string(),
        }
    }

    /// Lists every field that differs from `expected`.
    pub fn mismatches(&self, expected: &ConfigEcho) -> Vec<String> {
        let mut out = Vec::new();
        let mut cmp = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name}: checkpoint has {a}, config has {b}"));
            }
        };
        cmp("hidden", self.hidden.to_string(), expected.hidden.to_string());
        cmp("cheb_order", self.cheb_order.to_string(), expected.cheb_order.to_string());
        cmp("gn_groups", self.gn_groups.to_string(), expected.gn_groups.to_string());
        cmp("input_dim", self.input_dim.to_string(), expected.input_dim.to_string());
        cmp(
            "edge_type_mode",
            format!("{:?}", self.edge_type_mode),
            format!("{:?}", expected.edge_type_mode),
        );
        cmp("template_hash", self.template_hash.clone(), expected.template_hash.clone());
        out
    }
}

/// Parameters plus optional optimizer state, written as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub echo: ConfigEcho,
    pub params: NetworkParams,
    #[serde(default)]
    pub optimizer: Option<AdamState>,
    /// Epochs fully completed.
    #[serde(default)]
    pub epoch: usize,
    #[serde(default)]
    pub step: u64,
}

impl Checkpoint {
    pub fn new(params: NetworkParams, template_hash: &str) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            echo: ConfigEcho::new(&params.config, template_hash),
            params,
            optimizer: None,
            epoch: 0,
            step: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a checkpoint without checking it against a config.
    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| MugError::Config(format!("malformed checkpoint {}: {e}", path.display())))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(MugError::Config(format!(
                "checkpoint version {} is not supported",
                ck.version
            )));
        }
        ck.params.check_layout()?;
        if ck.echo != ConfigEcho::new(&ck.params.config, &ck.echo.template_hash) {
            return Err(MugError::Config("checkpoint echo disagrees with its parameters".into()));
        }
        Ok(ck)
    }

    /// Reads a checkpoint and rejects it unless its echo equals `expected`.
    pub fn load(path: &Path, expected: &ConfigEcho) -> Result<Self> {
        let ck = Self::load_unchecked(path)?;
        let bad = ck.echo.mismatches(expected);
        if !bad.is_empty() {
            return Err(MugError::Config(format!("checkpoint mismatch: {}", bad.join("; "))));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_params;

    #[test]
    fn round_trip_and_echo_validation() {
        let p = init_params(3, 8, 2, EdgeTypeMode::Shared).unwrap();
        let ck = Checkpoint::new(p, "abc");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path, &ck.echo).unwrap();
        assert_eq!(back, ck);

        let mut other = ck.echo.clone();
        other.hidden = 16;
        other.template_hash = "def".into();
        let err = Checkpoint::load(&path, &other).unwrap_err().to_string();
        assert!(err.contains("hidden") && err.contains("template_hash"), "{err}");
    }
}
