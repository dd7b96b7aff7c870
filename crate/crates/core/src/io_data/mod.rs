//! File formats, partial-depth simulation, synthetic scenes and run
//! configuration.

pub mod config;
pub mod png_io;
pub mod resample;
pub mod rig;
pub mod scene;

pub use config::{Manifest, RunConfig};
pub use png_io::{load_depth_png, load_image_png, save_depth_png, save_image_png};
pub use resample::{resample, PartialDepth, ResampleMode};
pub use rig::{default_rig, RigPreset};
pub use scene::{render_scene, FrameTime, ScenePreset, SyntheticScene};
