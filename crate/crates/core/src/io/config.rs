//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 3
//! horizon = 10
//! [depth]
//! filter_radius = 8
//! [depth.motion]
//! inlier_eps = 4.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth::DepthParams;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_HORIZON, DEFAULT_MAX_DEPTH, DEFAULT_STARTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub depth: DepthParams,
    pub horizon: usize,
    pub starts: usize,
    /// Single source of randomness; overrides `depth.motion.rng_seed`.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Ground truth beyond this depth is ignored by the metrics, meters.
    pub max_depth: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            depth: DepthParams::default(),
            horizon: DEFAULT_HORIZON,
            starts: DEFAULT_STARTS,
            seed: 0,
            output_dir: None,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        self.depth.validate()?;
        if self.horizon == 0 || self.starts == 0 {
            return Err(Error::invalid("horizon and starts must be >= 1"));
        }
        if !(self.max_depth > 0.0) {
            return Err(Error::invalid("max_depth must be > 0"));
        }
        Ok(())
    }

    /// Pipeline parameters with the run seed applied.
    pub fn depth_params(&self) -> DepthParams {
        let mut p = self.depth.clone();
        p.motion.rng_seed = self.seed;
        p
    }
}
