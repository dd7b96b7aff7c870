//! Run configuration (TOML) and the manifest every command writes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::io_data::resample::ResampleMode;
use crate::io_data::scene::{ScenePreset, SyntheticScene};
use crate::losses::LossWeights;
use crate::metrics::{ProtocolKind, RangeFilter, ScaleProtocol};
use crate::pdc::{GeneratorSpec, PdcConfig, StageRecord};
use crate::propagation::DEFAULT_STAGE_COUNT;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory every command writes into.
    pub output: PathBuf,
    /// RGB image at time t.
    pub image: Option<PathBuf>,
    /// Partial depth (16-bit PNG).
    pub partial: Option<PathBuf>,
    /// Full ground-truth depth, for resampling and the noisy-oracle generator.
    pub ground_truth: Option<PathBuf>,
    /// Optional coarse full-frame depth to be scale-adjusted at every stage.
    pub coarse: Option<PathBuf>,
    /// Directories of per-image predictions, ground truth and partial depth
    /// for evaluation, matched by file name.
    pub pred_dir: Option<PathBuf>,
    pub gt_dir: Option<PathBuf>,
    pub partial_dir: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            image: None,
            partial: None,
            ground_truth: None,
            coarse: None,
            pred_dir: None,
            gt_dir: None,
            partial_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub preset: ScenePreset,
    pub width: usize,
    pub height: usize,
    /// Horizontal and vertical field of view, degrees.
    pub camera_fov: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: ScenePreset::default(),
            width: 256,
            height: 192,
            camera_fov: (41.3, 31.3),
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.width, self.height, self.camera_fov.0, self.camera_fov.1)
    }

    pub fn build(&self) -> Result<SyntheticScene> {
        self.preset.build(self.width, self.height, self.intrinsics()?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationConfig {
    /// Number of propagation stages between the partial rect and the frame.
    pub stages: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGE_COUNT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub protocol: ProtocolKind,
    /// Scale of protocol F.
    pub fixed_scale: Option<f64>,
    /// Exclusive ground-truth range, meters.
    pub min_depth: Option<f64>,
    pub max_depth: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::Partial,
            fixed_scale: None,
            min_depth: None,
            max_depth: None,
        }
    }
}

impl MetricsConfig {
    pub fn scale_protocol(&self) -> Result<ScaleProtocol> {
        ScaleProtocol::new(self.protocol, self.fixed_scale)
    }

    pub fn range_filter(&self) -> Option<RangeFilter> {
        (self.min_depth.is_some() || self.max_depth.is_some()).then_some(RangeFilter {
            min: self.min_depth,
            max: self.max_depth,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random draw derives from it.
    pub seed: u64,
    pub paths: PathsConfig,
    pub scene: SceneConfig,
    pub resample: ResampleMode,
    pub propagation: PropagationConfig,
    pub generator: GeneratorSpec,
    pub pdc: PdcConfig,
    pub losses: LossWeights,
    pub metrics: MetricsConfig,
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every violation is reported as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        self.pdc.validate().map_err(as_config_error)?;
        self.losses.validate().map_err(as_config_error)?;
        self.resample.validate().map_err(as_config_error)?;
        self.generator.validate().map_err(as_config_error)?;
        self.scene.intrinsics().map_err(as_config_error)?;
        if self.scene.width == 0 || self.scene.height == 0 {
            return Err(Error::Config("scene width and height must be >= 1".into()));
        }
        if self.propagation.stages == 0 {
            return Err(Error::Config("propagation.stages must be >= 1".into()));
        }
        if let Some(s) = self.metrics.fixed_scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Config(format!("metrics.fixed_scale must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes to JSON");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Record written next to every command's outputs; together with the
/// embedded config it is enough to re-run the command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Command-line overrides applied on top of the config file.
    pub overrides: Vec<String>,
    /// Effective configuration after overrides.
    pub config: RunConfig,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    /// Per-stage derived seeds and selections.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<StageRecord>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, overrides: &[String]) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            overrides: overrides.to_vec(),
            config: config.clone(),
            outputs: Vec::new(),
            stages: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    /// Write `manifest.json` into `dir`; returns its path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes to JSON");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::BadFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 7

[paths]
output = "runs/a"
image = "frame.png"

[scene]
width = 64
height = 48
preset = { kind = "fronto-plane", depth = 3.0, step = 0.1 }

[resample]
kind = "bottom"
fraction_w = 0.5
fraction_h = 0.3

[propagation]
stages = 3

[generator]
kind = "noisy-oracle"
sigma = 0.01

[pdc]
lambda = 2.0
norm = "l2"

[losses]
alpha = 0.8

[metrics]
protocol = "F"
fixed_scale = 1.5
max_depth = 80.0
"#;

    #[test]
    fn parses_every_section() {
        let c = RunConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.propagation.stages, 3);
        assert_eq!(c.generator.name(), "noisy-oracle");
        assert_eq!(c.pdc.lambda, 2.0);
        assert_eq!(c.pdc.samples_per_stage, 5);
        assert_eq!(c.metrics.scale_protocol().unwrap(), ScaleProtocol::Fixed(1.5));
        assert_eq!(c.metrics.range_filter(), Some(RangeFilter::below(80.0)));
        assert_eq!(c.scene.build().unwrap().width, 64);
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            "sedd = 1",
            "[pdc]\nlamda = 1.0",
            "[generator]\nkind = \"magic\"",
            "[pdc]\nlambda = -1.0",
            "[propagation]\nstages = 0",
            "[resample]\nkind = \"center\"\nfraction_w = 0.0\nfraction_h = 1.0",
            "[generator]\nkind = \"guided-interpolator\"\nradius = 0",
            "[metrics]\nfixed_scale = 0.0",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("synth", &RunConfig::default(), &["seed=3".into()]);
        m.outputs.push("depth.png".into());
        let p = m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
    }
}
