//! Run configuration: one TOML file names the model, the training
//! schedule, the sequences and the evaluation protocol.
//!
//! ```toml
//! [model]
//! preset = "compact"
//! variant = "Mc"
//!
//! [training]
//! lambda_index = 3
//!
//! [[data]]
//! kind = "file"
//! source = "seq/BasketballPass.yuv"
//! format = "yuv420p"
//! width = 416
//! height = 240
//! frames = 96
//!
//! [[data]]
//! kind = "synthetic"
//! name = "drift"
//! width = 64
//! height = 64
//! frames = 33
//! dx = 1.5
//!
//! [eval]
//! frames = 96
//! intra_period = 32
//! checkpoints = ["ckpt/lambda0.ckpt", "ckpt/lambda1.ckpt"]
//! ```
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::frame::{load_sequence, Frame, SequenceSpec};
use crate::synthetic::{moving_texture, Motion};
use crate::train::TrainingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `standard`, `compact` or `tiny`.
    pub preset: String,
    pub variant: Option<Variant>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            preset: "standard".into(),
            variant: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut c = ModelConfig::preset(&self.preset)?;
        if let Some(v) = self.variant {
            c = c.with_variant(v);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default)]
    pub dx: f64,
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    File(SequenceSpec),
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn name(&self) -> String {
        match self {
            DataSource::File(s) => s.name(),
            DataSource::Synthetic(s) => s.name.clone(),
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            DataSource::File(s) => s.frames,
            DataSource::Synthetic(s) => s.frames,
        }
    }

    /// First `n` frames.
    pub fn load(&self, n: usize) -> Result<Vec<Frame>> {
        match self {
            DataSource::File(s) => load_sequence(s, n),
            DataSource::Synthetic(s) => {
                if n > s.frames {
                    return Err(Error::Contract(format!(
                        "requested {n} frames but '{}' declares {}",
                        s.name, s.frames
                    )));
                }
                moving_texture(n, s.height, s.width, Motion { dx: s.dx, dy: s.dy }, s.seed)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub frames: usize,
    pub intra_period: usize,
    /// One checkpoint per rate point.
    pub checkpoints: Vec<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            frames: 96,
            intra_period: 32,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingConfig,
    pub data: Vec<DataSource>,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.training.validate()?;
        if c.eval.intra_period == 0 {
            return Err(Error::Config("intra period must be at least 1".into()));
        }
        Ok(c)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut c = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut c.data {
            if let DataSource::File(s) = d {
                resolve(&mut s.source);
            }
        }
        c.eval.checkpoints.iter_mut().for_each(resolve);
        if let Some(dir) = &mut c.training.checkpoint_dir {
            resolve(dir);
        }
        Ok(c)
    }

    /// Source named `name`, or the first one.
    pub fn source(&self, name: Option<&str>) -> Result<&DataSource> {
        match name {
            None => self.data.first().ok_or_else(|| Error::Config("config lists no data".into())),
            Some(n) => self
                .data
                .iter()
                .find(|d| d.name() == n)
                .ok_or_else(|| Error::Config(format!("config has no sequence named '{n}'"))),
        }
    }
}
