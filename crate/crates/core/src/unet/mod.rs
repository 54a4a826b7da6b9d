//! U-shaped vision Mamba network for single-channel super-resolution.

mod block;
pub mod checkpoint;
mod config;
pub mod count;
pub mod layers;
mod model;
mod params;


pub use block::{BlockOptions, SsmIds, VisionMambaBlock};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use config::{UNetConfig, LEVELS};
pub use count::{param_count, param_report, ParamReport};
pub use model::{DecoderLevel, EncoderLevel, MambaUNet, PatchMerge, MODULE_GROUPS};
pub use params::{Builder, Ctx, Init, ParamId, ParamSpec, ParamStore};
