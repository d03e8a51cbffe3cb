pub mod bdrate;
pub mod bitstream;
pub mod chain;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod context;
pub mod entropy;
pub mod error;
pub mod frame;
pub mod fusion;
pub mod heatmap;
pub mod latent;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod motion;
pub mod protocol;
pub mod run;
pub mod synthetic;
pub mod train;

pub use config::{ModelConfig, Variant};
pub use error::{Error, Result};
pub use frame::{Frame, PixelFormat, SequenceSpec};
