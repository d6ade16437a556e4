use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use afpnkit_core::metrics::{EvalConfig, SizeBuckets};
use afpnkit_core::neck::NeckConfig;
use afpnkit_core::search::{ControllerConfig, PpoConfig};

/// Search settings that are not per-invocation flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub batch_size: usize,
    pub ppo: PpoConfig,
    pub controller: ControllerConfig,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = afpnkit_core::search::SearchConfig::default();
        SearchSettings { batch_size: d.batch_size, ppo: d.ppo, controller: d.controller }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub neck: NeckConfig,
    pub policy: Option<PathBuf>,
    pub iou_threshold: f64,
    pub buckets: SizeBuckets,
    /// Square input resolution used by neck-check and bench.
    pub resize: usize,
    pub search: SearchSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            neck: NeckConfig::default(),
            policy: None,
            iou_threshold: 0.5,
            buckets: SizeBuckets::default(),
            resize: 608,
            search: SearchSettings::default(),
        }
    }
}

impl RunConfig {
    /// Defaults when `path` is `None`. A relative `policy` path resolves
    /// against the config file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(p), Some(dir)) = (&cfg.policy, path.parent()) {
            if p.is_relative() {
                cfg.policy = Some(dir.join(p));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.resize > 0, "resize must be positive");
        ensure!(
            self.iou_threshold > 0.0 && self.iou_threshold <= 1.0,
            "iou_threshold {} must lie in (0, 1]",
            self.iou_threshold
        );
        self.buckets.validate()?;
        self.neck.validate()?;
        Ok(())
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig { iou_threshold: self.iou_threshold, buckets: self.buckets }
    }
}
