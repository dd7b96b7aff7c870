//! Built-in hypothesis generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{HypothesisGenerator, StageInput};
use crate::error::{Error, Result};
use crate::raster::{masked_median, DepthMap};

/// Smallest depth a generator may emit.
const MIN_DEPTH: f64 = 1e-3;

/// Generator selection as written in the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorSpec {
    NoisyOracle {
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        jitter: f64,
    },
    GuidedInterpolator {
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default = "default_power")]
        power: f64,
        #[serde(default = "default_sigma_intensity")]
        sigma_intensity: f64,
    },
    ConstantFill,
}

fn default_radius() -> usize {
    4
}
fn default_power() -> f64 {
    2.0
}
fn default_sigma_intensity() -> f64 {
    0.1
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::GuidedInterpolator {
            radius: default_radius(),
            power: default_power(),
            sigma_intensity: default_sigma_intensity(),
        }
    }
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::NoisyOracle { .. } => "noisy-oracle",
            GeneratorSpec::GuidedInterpolator { .. } => "guided-interpolator",
            GeneratorSpec::ConstantFill => "constant-fill",
        }
    }

    /// Instantiate the generator. `ground_truth` is the full-frame depth
    /// and is only used by the noisy oracle.
    pub fn build(&self, ground_truth: Option<&DepthMap>) -> Result<Box<dyn HypothesisGenerator>> {
        Ok(match *self {
            GeneratorSpec::NoisyOracle { sigma, jitter } => {
                let gt = ground_truth.ok_or(Error::OracleUnavailable)?;
                Box::new(NoisyOracle::new(gt.clone(), sigma, jitter)?)
            }
            GeneratorSpec::GuidedInterpolator {
                radius,
                power,
                sigma_intensity,
            } => Box::new(GuidedInterpolator::new(radius, power, sigma_intensity)?),
            GeneratorSpec::ConstantFill => Box::new(ConstantFill),
        })
    }

    /// Generator `name` with default parameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "noisy-oracle" => Ok(GeneratorSpec::NoisyOracle { sigma: 0.0, jitter: 0.0 }),
            "guided-interpolator" => Ok(GeneratorSpec::default()),
            "constant-fill" => Ok(GeneratorSpec::ConstantFill),
            other => Err(Error::Config(format!(
                "unknown generator {other:?}; available: {}",
                builtin_generators().join(", ")
            ))),
        }
    }

    /// Check the parameters without needing real inputs.
    pub fn validate(&self) -> Result<()> {
        self.build(Some(&DepthMap::zeros(1, 1))).map(|_| ())
    }
}

/// Names of the generators shipped with the crate.
pub fn builtin_generators() -> &'static [&'static str] {
    &["noisy-oracle", "guided-interpolator", "constant-fill"]
}

/// Ground truth perturbed by a per-sample global scale factor drawn from
/// `U[1 - jitter, 1 + jitter]` and per-pixel Gaussian noise of std `sigma`.
#[derive(Clone, Debug)]
pub struct NoisyOracle {
    ground_truth: DepthMap,
    sigma: f64,
    jitter: f64,
}

impl NoisyOracle {
    pub fn new(ground_truth: DepthMap, sigma: f64, jitter: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("noisy-oracle sigma must be >= 0, got {sigma}")));
        }
        if !(0.0..1.0).contains(&jitter) {
            return Err(Error::Config(format!("noisy-oracle jitter must lie in [0, 1), got {jitter}")));
        }
        Ok(Self {
            ground_truth,
            sigma,
            jitter,
        })
    }
}

impl HypothesisGenerator for NoisyOracle {
    fn name(&self) -> &'static str {
        "noisy-oracle"
    }

    fn generate(&self, input: &StageInput<'_>, _sample_index: usize, seed: u64) -> Result<DepthMap> {
        let gt = self.ground_truth.crop(input.rect)?;
        input.mixed.ensure_dims(gt.dims())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = if self.jitter > 0.0 {
            rng.random_range(1.0 - self.jitter..=1.0 + self.jitter)
        } else {
            1.0
        };
        let noise = if self.sigma > 0.0 {
            Some(Normal::new(0.0, self.sigma).expect("sigma is finite and positive"))
        } else {
            None
        };
        // Holes in the ground truth fall back to the mixed depth, then to
        // the ground-truth median.
        let fallback = masked_median(&gt).or_else(|_| masked_median(input.mixed))?;
        let values = gt
            .values()
            .iter()
            .zip(input.mixed.values())
            .map(|(&g, &m)| {
                let base = if g > 0.0 {
                    g
                } else if m > 0.0 {
                    m
                } else {
                    fallback
                };
                let n = noise.map_or(0.0, |d| d.sample(&mut rng));
                (base * scale + n).max(MIN_DEPTH)
            })
            .collect();
        DepthMap::new(gt.width(), gt.height(), values)
    }
}

/// Fills the holes of the mixed depth by inverse-distance weighting of the
/// valid pixels, attenuated by image intensity difference.
///
/// The search window starts at `radius` and doubles until it holds at
/// least one valid pixel.
#[derive(Clone, Debug)]
pub struct GuidedInterpolator {
    radius: usize,
    power: f64,
    sigma_intensity: f64,
}

impl GuidedInterpolator {
    pub fn new(radius: usize, power: f64, sigma_intensity: f64) -> Result<Self> {
        if radius == 0 {
            return Err(Error::Config("guided-interpolator radius must be >= 1".into()));
        }
        if !(power.is_finite() && power >= 0.0) {
            return Err(Error::Config(format!("guided-interpolator power must be >= 0, got {power}")));
        }
        if !(sigma_intensity.is_finite() && sigma_intensity > 0.0) {
            return Err(Error::Config(format!(
                "guided-interpolator sigma_intensity must be > 0, got {sigma_intensity}"
            )));
        }
        Ok(Self {
            radius,
            power,
            sigma_intensity,
        })
    }

    fn fill_pixel(&self, input: &StageInput<'_>, x: usize, y: usize) -> Option<f64> {
        let d = input.mixed;
        let (w, h) = d.dims();
        let gray = input.image.gray(x, y);
        let mut r = self.radius;
        loop {
            let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
            let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
            let (mut num, mut den) = (0.0, 0.0);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    let v = d.get(xx, yy);
                    if v <= 0.0 {
                        continue;
                    }
                    let dx = xx as f64 - x as f64;
                    let dy = yy as f64 - y as f64;
                    let dist = (dx * dx + dy * dy).sqrt();
                    let dg = (input.image.gray(xx, yy) - gray).abs();
                    let wgt = (-dg / self.sigma_intensity).exp() / dist.powf(self.power);
                    num += wgt * v;
                    den += wgt;
                }
            }
            if den > 0.0 {
                return Some(num / den);
            }
            if x0 == 0 && y0 == 0 && x1 == w - 1 && y1 == h - 1 {
                return None;
            }
            r *= 2;
        }
    }
}

impl HypothesisGenerator for GuidedInterpolator {
    fn name(&self) -> &'static str {
        "guided-interpolator"
    }

    fn generate(&self, input: &StageInput<'_>, _sample_index: usize, _seed: u64) -> Result<DepthMap> {
        let d = input.mixed;
        input.image.ensure_dims(d.dims())?;
        if d.valid_count() == 0 {
            return Err(Error::EmptyMask);
        }
        let mut values = d.values().to_vec();
        let w = d.width();
        for y in 0..d.height() {
            for x in 0..w {
                if !d.is_valid(x, y) {
                    values[y * w + x] = self.fill_pixel(input, x, y).ok_or(Error::EmptyMask)?;
                }
            }
        }
        DepthMap::new(w, d.height(), values)
    }
}

/// Fills every hole with the median of the mixed depth.
#[derive(Clone, Copy, Debug, Default)]
pub struct ConstantFill;

impl HypothesisGenerator for ConstantFill {
    fn name(&self) -> &'static str {
        "constant-fill"
    }

    fn generate(&self, input: &StageInput<'_>, _sample_index: usize, _seed: u64) -> Result<DepthMap> {
        let m = masked_median(input.mixed)?;
        input.mixed.map(|v| if v > 0.0 { v } else { m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{ImageFrame, Rect};

    fn input<'a>(image: &'a ImageFrame, mixed: &'a DepthMap) -> StageInput<'a> {
        StageInput {
            stage_index: 1,
            rect: Rect::full(mixed.width(), mixed.height()).unwrap(),
            image,
            mixed,
        }
    }

    #[test]
    fn noisy_oracle_without_noise_is_ground_truth() {
        let gt = DepthMap::from_fn(8, 6, |x, y| 2.0 + x as f64 * 0.1 + y as f64).unwrap();
        let gen = NoisyOracle::new(gt.clone(), 0.0, 0.0).unwrap();
        let img = ImageFrame::constant(4, 3, 0.5).unwrap();
        let mixed = DepthMap::zeros(4, 3);
        let rect = Rect::new(2, 1, 4, 3).unwrap();
        let si = StageInput {
            stage_index: 2,
            rect,
            image: &img,
            mixed: &mixed,
        };
        for k in 0..3 {
            assert_eq!(gen.generate(&si, k, 99 + k as u64).unwrap(), gt.crop(rect).unwrap());
        }
    }

    #[test]
    fn noisy_oracle_is_seeded() {
        let gt = DepthMap::constant(6, 6, 5.0).unwrap();
        let gen = NoisyOracle::new(gt, 0.2, 0.1).unwrap();
        let img = ImageFrame::constant(6, 6, 0.5).unwrap();
        let mixed = DepthMap::zeros(6, 6);
        let si = input(&img, &mixed);
        let a = gen.generate(&si, 0, 11).unwrap();
        assert_eq!(a, gen.generate(&si, 0, 11).unwrap());
        assert_ne!(a, gen.generate(&si, 0, 12).unwrap());
        assert_eq!(a.valid_count(), 36);
    }

    #[test]
    fn noisy_oracle_needs_ground_truth() {
        let spec = GeneratorSpec::NoisyOracle {
            sigma: 0.0,
            jitter: 0.0,
        };
        assert!(matches!(spec.build(None), Err(Error::OracleUnavailable)));
    }

    #[test]
    fn guided_interpolator_identity_on_full_input() {
        let d = DepthMap::from_fn(7, 5, |x, y| 1.0 + (x * y) as f64).unwrap();
        let img = ImageFrame::from_fn(7, 5, |x, _| [x as f64 / 7.0; 3]).unwrap();
        let gen = GuidedInterpolator::new(2, 2.0, 0.1).unwrap();
        assert_eq!(gen.generate(&input(&img, &d), 0, 0).unwrap(), d);
    }

    #[test]
    fn guided_interpolator_fills_far_holes() {
        let d = DepthMap::from_fn(20, 20, |x, y| if x < 2 && y < 2 { 4.0 } else { 0.0 }).unwrap();
        let img = ImageFrame::constant(20, 20, 0.3).unwrap();
        let gen = GuidedInterpolator::new(1, 2.0, 0.1).unwrap();
        let out = gen.generate(&input(&img, &d), 0, 0).unwrap();
        assert!(out.values().iter().all(|&v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn guided_interpolator_prefers_similar_intensity() {
        // Hole at x = 2 between a dark 1 m pixel and a bright 9 m pixel; the
        // hole itself is dark.
        let d = DepthMap::new(5, 1, vec![0.0, 1.0, 0.0, 9.0, 0.0]).unwrap();
        let img = ImageFrame::new(5, 1, vec![[0.0; 3], [0.0; 3], [0.0; 3], [1.0; 3], [1.0; 3]]).unwrap();
        let gen = GuidedInterpolator::new(1, 2.0, 0.1).unwrap();
        let out = gen.generate(&input(&img, &d), 0, 0).unwrap();
        assert!(out.get(2, 0) < 1.01);
        assert!(out.get(4, 0) > 8.99);
    }

    #[test]
    fn constant_fill_uses_median() {
        let d = DepthMap::new(6, 1, vec![1.0, 0.0, 3.0, 0.0, 8.0, 0.0]).unwrap();
        let img = ImageFrame::constant(6, 1, 0.5).unwrap();
        let out = ConstantFill.generate(&input(&img, &d), 0, 0).unwrap();
        assert_eq!(out.values(), &[1.0, 3.0, 3.0, 3.0, 8.0, 3.0]);
    }

    #[test]
    fn spec_parses_from_toml() {
        let s: GeneratorSpec = toml::from_str("kind = \"noisy-oracle\"\nsigma = 0.1").unwrap();
        assert_eq!(s, GeneratorSpec::NoisyOracle { sigma: 0.1, jitter: 0.0 });
        assert!(toml::from_str::<GeneratorSpec>("kind = \"noisy-oracle\"\nsgma = 0.1").is_err());
        assert!(toml::from_str::<GeneratorSpec>("kind = \"bogus\"").is_err());
        let c: GeneratorSpec = toml::from_str("kind = \"constant-fill\"").unwrap();
        assert_eq!(c.name(), "constant-fill");
        assert_eq!(builtin_generators().len(), 3);
    }
}
