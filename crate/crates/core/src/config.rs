//! Model widths and ablation variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which context path the model runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Temporal mining only; no recurrent chain, no fusion.
    Ma,
    /// Recurrent chain feeds temporal mining; no spatial branch, no fusion.
    Mb,
    /// Chain, spatial and temporal mining, and fusion.
    #[serde(alias = "full")]
    Mc,
}

impl Variant {
    pub fn uses_chain(self) -> bool {
        self != Variant::Ma
    }

    pub fn uses_spatial(self) -> bool {
        self == Variant::Mc
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Ma => "Ma",
            Variant::Mb => "Mb",
            Variant::Mc => "Mc",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Ma" | "ma" => Ok(Variant::Ma),
            "Mb" | "mb" => Ok(Variant::Mb),
            "Mc" | "mc" | "full" => Ok(Variant::Mc),
            other => Err(Error::Config(format!("unknown variant '{other}' (expected Ma, Mb, Mc or full)"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Channel widths of every sub-network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden channels of both recurrent cells.
    pub hidden: usize,
    /// Context widths at full, half and quarter resolution.
    pub levels: [usize; 3],
    /// Channels of the reconstructed-frame feature carried to the next frame.
    pub feature: usize,
    /// Channels of the context latent.
    pub latent: usize,
    /// Internal width of the context transforms.
    pub codec_width: usize,
    /// Channels of the motion latent.
    pub motion_latent: usize,
    /// Internal width of the motion transforms.
    pub motion_width: usize,
    /// Channels of both hyper-latents.
    pub hyper: usize,
    /// Width of the flow estimator convolutions.
    pub flow_width: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl ModelConfig {
    /// Reference widths.
    pub fn standard() -> Self {
        ModelConfig {
            hidden: 48,
            levels: [48, 64, 96],
            feature: 64,
            latent: 96,
            codec_width: 64,
            motion_latent: 64,
            motion_width: 64,
            hyper: 64,
            flow_width: 32,
            variant: Variant::Mc,
        }
    }

    /// Narrow widths with the same topology, for quick CPU runs.
    pub fn compact() -> Self {
        ModelConfig {
            hidden: 16,
            levels: [16, 24, 32],
            feature: 24,
            latent: 32,
            codec_width: 32,
            motion_latent: 24,
            motion_width: 24,
            hyper: 24,
            flow_width: 16,
            variant: Variant::Mc,
        }
    }

    /// Minimal widths for gradient checks and structural tests.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 4,
            levels: [4, 6, 8],
            feature: 5,
            latent: 6,
            codec_width: 6,
            motion_latent: 4,
            motion_width: 4,
            hyper: 4,
            flow_width: 4,
            variant: Variant::Mc,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard()),
            "compact" => Ok(Self::compact()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!(
                "unknown model preset '{other}' (expected standard, compact or tiny)"
            ))),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [
            self.hidden,
            self.levels[0],
            self.levels[1],
            self.levels[2],
            self.feature,
            self.latent,
            self.codec_width,
            self.motion_latent,
            self.motion_width,
            self.hyper,
            self.flow_width,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}
