//! Simulated small-FoV partial depth, cut out of a full ground-truth map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Rect};

pub const DEFAULT_KEEP_RATE: f64 = 0.25;

/// Region where the random mode may place the rect center, as fractions of
/// the frame: `[x_min, x_max] x [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for CenterBounds {
    /// The central third of the frame.
    fn default() -> Self {
        Self {
            x: (1.0 / 3.0, 2.0 / 3.0),
            y: (1.0 / 3.0, 2.0 / 3.0),
        }
    }
}

fn default_keep_rate() -> f64 {
    DEFAULT_KEEP_RATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ResampleMode {
    Center {
        fraction_w: f64,
        fraction_h: f64,
    },
    Sparse {
        fraction_w: f64,
        fraction_h: f64,
        #[serde(default = "default_keep_rate")]
        keep_rate: f64,
        #[serde(default)]
        seed: u64,
    },
    Random {
        fraction_w: f64,
        fraction_h: f64,
        #[serde(default)]
        bounds: CenterBounds,
        #[serde(default)]
        seed: u64,
    },
    Bottom {
        fraction_w: f64,
        fraction_h: f64,
    },
}

impl Default for ResampleMode {
    fn default() -> Self {
        ResampleMode::Center {
            fraction_w: 0.5,
            fraction_h: 0.5,
        }
    }
}

impl ResampleMode {
    pub fn name(&self) -> &'static str {
        match self {
            ResampleMode::Center { .. } => "center",
            ResampleMode::Sparse { .. } => "sparse",
            ResampleMode::Random { .. } => "random",
            ResampleMode::Bottom { .. } => "bottom",
        }
    }

    pub fn fractions(&self) -> (f64, f64) {
        match *self {
            ResampleMode::Center { fraction_w, fraction_h }
            | ResampleMode::Sparse { fraction_w, fraction_h, .. }
            | ResampleMode::Random { fraction_w, fraction_h, .. }
            | ResampleMode::Bottom { fraction_w, fraction_h } => (fraction_w, fraction_h),
        }
    }

    /// Replace the seed of the seeded modes.
    pub fn with_seed(mut self, s: u64) -> Self {
        if let ResampleMode::Sparse { seed, .. } | ResampleMode::Random { seed, .. } = &mut self {
            *seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::DegenerateRegion(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        let (fw, fh) = self.fractions();
        unit("fraction_w", fw)?;
        unit("fraction_h", fh)?;
        match self {
            ResampleMode::Sparse { keep_rate, .. } => unit("keep_rate", *keep_rate),
            ResampleMode::Random { bounds, .. } => {
                for (lo, hi) in [bounds.x, bounds.y] {
                    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                        return Err(Error::DegenerateRegion(format!("bad center bounds [{lo}, {hi}]")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Partial depth together with the rect it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialDepth {
    pub depth: DepthMap,
    pub rect: Rect,
}

fn rect_size(w: usize, h: usize, fw: f64, fh: f64) -> Result<(usize, usize)> {
    let rw = ((w as f64 * fw).round() as usize).min(w);
    let rh = ((h as f64 * fh).round() as usize).min(h);
    if rw == 0 || rh == 0 {
        return Err(Error::DegenerateRegion(format!(
            "fractions ({fw}, {fh}) leave no pixel of a {w}x{h} frame"
        )));
    }
    Ok((rw, rh))
}

/// Offset along one axis that puts the rect center uniformly in `[lo, hi]`
/// (fractions of `n`), restricted to placements that stay inside the frame.
fn random_offset(rng: &mut ChaCha8Rng, n: usize, len: usize, (lo, hi): (f64, f64)) -> Result<usize> {
    let half = len as f64 / 2.0;
    let a = (lo * n as f64).max(half);
    let b = (hi * n as f64).min(n as f64 - half);
    if a > b {
        return Err(Error::DegenerateRegion(format!(
            "no center in [{lo}, {hi}] keeps a {len}-pixel span inside {n} pixels"
        )));
    }
    let c = if a == b { a } else { rng.random_range(a..=b) };
    Ok(((c - half).round().max(0.0) as usize).min(n - len))
}

/// Rect selected by `mode` on a `width x height` frame.
pub fn resample_rect(width: usize, height: usize, mode: &ResampleMode) -> Result<Rect> {
    mode.validate()?;
    let (fw, fh) = mode.fractions();
    let (rw, rh) = rect_size(width, height, fw, fh)?;
    let centered = ((width - rw) / 2, (height - rh) / 2);
    let (x0, y0) = match mode {
        ResampleMode::Center { .. } | ResampleMode::Sparse { .. } => centered,
        ResampleMode::Bottom { .. } => (centered.0, height - rh),
        ResampleMode::Random { bounds, seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let x0 = random_offset(&mut rng, width, rw, bounds.x)?;
            let y0 = random_offset(&mut rng, height, rh, bounds.y)?;
            (x0, y0)
        }
    };
    Rect::new(x0, y0, rw, rh)
}

/// Zero out everything outside the selected rect; sparse mode additionally
/// keeps each pixel inside with probability `keep_rate`.
pub fn resample(gt: &DepthMap, mode: &ResampleMode) -> Result<PartialDepth> {
    let rect = resample_rect(gt.width(), gt.height(), mode)?;
    let keep = |x: usize, y: usize| rect.contains(x, y);
    let depth = match mode {
        ResampleMode::Sparse { keep_rate, seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            // One draw per rect pixel in raster order, valid or not.
            let mut draws = Vec::with_capacity(rect.area());
            for _ in 0..rect.area() {
                draws.push(rng.random::<f64>() < *keep_rate);
            }
            DepthMap::from_fn(gt.width(), gt.height(), |x, y| {
                if keep(x, y) && draws[(y - rect.y0) * rect.width + (x - rect.x0)] {
                    gt.get(x, y)
                } else {
                    0.0
                }
            })?
        }
        _ => DepthMap::from_fn(gt.width(), gt.height(), |x, y| if keep(x, y) { gt.get(x, y) } else { 0.0 })?,
    };
    Ok(PartialDepth { depth, rect })
}
