use std::path::{Path, PathBuf};

use mug_core::body_template::load_template;
use mug_core::metrics::MetricConfig;
use mug_core::synthetic_data::GeneratorConfig;
use mug_core::trainer::{Assets, TrainConfig};
use mug_core::{MugError, Result};
use serde::{Deserialize, Serialize};

/// Settings shared by every command.
///
/// Precedence, highest first: command-line flags, keys of the `--config`
/// TOML file, built-in defaults. The top-level `seed` drives data
/// generation, initialization and augmentation alike.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Template JSON file; the bundled body when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Seed of the scaled shape bank built for an external template.
    pub bank_seed: u64,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            template: None,
            bank_seed: 11,
            generator: GeneratorConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricConfig::default(),
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub hidden: Option<usize>,
    pub cheb_order: Option<usize>,
    pub template: Option<PathBuf>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MugError::Config(format!("bad config: {}", e.message())))?;
        if cfg.train.seed != 0 {
            return Err(MugError::Config("set the top-level `seed` key, not `train.seed`".into()));
        }
        Ok(cfg)
    }

    /// Reads the optional config file and applies `overrides` on top.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| MugError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        let o = overrides;
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(e) = o.epsilon {
            cfg.train.epsilon = e;
        }
        if let Some(h) = o.hidden {
            cfg.train.hidden = h;
        }
        if let Some(q) = o.cheb_order {
            cfg.train.cheb_order = q;
        }
        if let Some(t) = &o.template {
            cfg.template = Some(t.clone());
        }
        if let Some(n) = o.epochs {
            cfg.train.epochs = n;
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        let m = &self.metrics;
        if !(m.pck_threshold > 0.0 && m.match_gate > 0.0) {
            return Err(MugError::Config("metric thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn assets(&self) -> Result<Assets> {
        match &self.template {
            Some(p) => Assets::from_template(load_template(p)?, self.bank_seed),
            None => Ok(Assets::bundled()),
        }
    }
}

/// Record of how an output was produced. Every artifact carries one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunEcho {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

/// Builds the global worker pool, capped by `MUG_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MUG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| MugError::Config(format!("MUG_THREADS must be a positive integer, got {v:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
