//! Forward evaluators for the self-supervision losses.
//!
//! Nothing here computes gradients; the functions return scalar loss values
//! for given predictions so an external trainer (or a test) can score them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    scale_translation, ssim_channel, warp, CameraIntrinsics, CameraRig, Photometric, PhotometricNorm, PoseSE3,
    DEFAULT_ALPHA,
};
use crate::raster::{median_in_place, masked_median, DepthMap, Grid, ImageFrame};
use crate::resize::{downsample_depth_nearest_valid, image_pyramid, resize_depth_nearest_valid, resize_image_bilinear};

/// Number of pyramid levels the multi-scale losses sum over.
pub const PYRAMID_LEVELS: usize = 5;

/// Default SSIM weight of the pseudo-depth loss.
pub const DEFAULT_ALPHA_PSEUDO: f64 = 0.95;

pub const AUGMENT_VALUE_RANGE: (f64, f64) = (0.8, 1.2);
pub const AUGMENT_SIZE_RANGE: (f64, f64) = (0.5, 1.8);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Teacher network: photometric, partial and smoothness weights.
    pub w_pe: f64,
    pub w_p: f64,
    pub w_s: f64,
    /// Generator: photometric, pseudo-depth and adversarial weights.
    pub w_peg: f64,
    pub w_pse: f64,
    pub w_g: f64,
    /// Per pyramid level weights of the photometric loss.
    pub scale_weights: Vec<f64>,
    pub alpha: f64,
    pub alpha_pseudo: f64,
    pub photometric_norm: PhotometricNorm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_pe: 1.0,
            w_p: 1.0,
            w_s: 1.0,
            w_peg: 1.0,
            w_pse: 1.0,
            w_g: 1.0,
            scale_weights: (0..PYRAMID_LEVELS).map(|s| 0.5f64.powi(s as i32)).collect(),
            alpha: DEFAULT_ALPHA,
            alpha_pseudo: DEFAULT_ALPHA_PSEUDO,
            photometric_norm: PhotometricNorm::L1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_pe", self.w_pe),
            ("w_p", self.w_p),
            ("w_s", self.w_s),
            ("w_peg", self.w_peg),
            ("w_pse", self.w_pse),
            ("w_g", self.w_g),
            ("alpha", self.alpha),
            ("alpha_pseudo", self.alpha_pseudo),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("losses.{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.alpha > 1.0 || self.alpha_pseudo > 1.0 {
            return Err(Error::Config("losses.alpha and losses.alpha_pseudo must be <= 1".into()));
        }
        if self.scale_weights.is_empty() || self.scale_weights.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("losses.scale_weights must be non-empty, finite and >= 0".into()));
        }
        Ok(())
    }

    /// Term weights multiplied by `k`. Level weights and `alpha` values are
    /// left alone.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            w_pe: self.w_pe * k,
            w_p: self.w_p * k,
            w_s: self.w_s * k,
            w_peg: self.w_peg * k,
            w_pse: self.w_pse * k,
            w_g: self.w_g * k,
            ..self.clone()
        }
    }

    fn photometric(&self) -> Result<Photometric> {
        Photometric::new(self.alpha, self.photometric_norm)
    }
}

/// Frames at `t - 1`, `t` and `t + 1`.
#[derive(Clone, Copy, Debug)]
pub struct FrameTriplet<'a> {
    pub prev: &'a ImageFrame,
    pub current: &'a ImageFrame,
    pub next: &'a ImageFrame,
}

/// Poses taking camera-`t` points into the cameras at `t - 1` and `t + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosePair {
    pub to_prev: PoseSE3,
    pub to_next: PoseSE3,
}

impl PosePair {
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Ok(Self {
            to_prev: scale_translation(&self.to_prev, s)?,
            to_next: scale_translation(&self.to_next, s)?,
        })
    }
}

/// Sum over pyramid levels of the weighted mean per-pixel minimum
/// reprojection error against the two neighbouring frames.
///
/// Level `s` uses frames downsampled `s` times and intrinsics rescaled to
/// match. A pixel enters the mean when at least one warp covers it.
pub fn loss_photometric_multiscale(
    frames: &FrameTriplet<'_>,
    depth_pyramid: &[DepthMap],
    poses: &PosePair,
    intrinsics: &CameraIntrinsics,
    w: &LossWeights,
) -> Result<f64> {
    if depth_pyramid.len() != w.scale_weights.len() {
        return Err(Error::dims(
            (w.scale_weights.len(), 1),
            (depth_pyramid.len(), 1),
        ));
    }
    let levels = depth_pyramid.len() - 1;
    frames.prev.ensure_dims(frames.current.dims())?;
    frames.next.ensure_dims(frames.current.dims())?;
    let cur = image_pyramid(frames.current, levels)?;
    let prev = image_pyramid(frames.prev, levels)?;
    let next = image_pyramid(frames.next, levels)?;
    let photometric = w.photometric()?;

    let mut total = 0.0;
    for (s, depth) in depth_pyramid.iter().enumerate() {
        depth.ensure_dims(cur[s].dims())?;
        let k = intrinsics.downscaled(s as u32);
        let mut best: Grid<f64> = Grid::filled(depth.width(), depth.height(), f64::INFINITY);
        for (src, pose) in [(&prev[s], poses.to_prev), (&next[s], poses.to_next)] {
            let (warped, mask) = warp(src, depth, &CameraRig::new(k, pose)?)?;
            let err = photometric.error_map(&warped, &cur[s])?;
            for y in 0..depth.height() {
                for x in 0..depth.width() {
                    if mask.get(x, y) && err.get(x, y) < best.get(x, y) {
                        best.set(x, y, err.get(x, y));
                    }
                }
            }
        }
        let (sum, n) = best
            .as_slice()
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(a, n), v| (a + v, n + 1));
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        total += w.scale_weights[s] * sum / n as f64;
    }
    Ok(total)
}

/// Partial depth at every pyramid level of `depth_pyramid`.
pub fn partial_pyramid(partial: &DepthMap, levels: usize) -> Result<Vec<DepthMap>> {
    (0..levels)
        .map(|s| downsample_depth_nearest_valid(partial, 1 << s))
        .collect()
}

/// Sum over levels of the mean absolute error on the partial-valid pixels.
pub fn loss_partial(depth_pyramid: &[DepthMap], partial: &DepthMap) -> Result<f64> {
    if partial.valid_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let parts = partial_pyramid(partial, depth_pyramid.len())?;
    let mut total = 0.0;
    for (d, p) in depth_pyramid.iter().zip(&parts) {
        d.ensure_dims(p.dims())?;
        let (sum, n) = d
            .values()
            .iter()
            .zip(p.values())
            .filter(|(_, &pv)| pv > 0.0)
            .fold((0.0, 0usize), |(s, n), (&dv, &pv)| (s + (dv - pv).abs(), n + 1));
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        total += sum / n as f64;
    }
    Ok(total)
}

/// Edge-aware smoothness of mean-normalized depth.
///
/// Forward differences; the x term is averaged over the `(w-1) x h`
/// horizontal pairs and the y term over the `w x (h-1)` vertical pairs.
/// Image gradients are channel means of absolute differences.
pub fn loss_smooth(depth: &DepthMap, image: &ImageFrame) -> Result<f64> {
    image.ensure_dims(depth.dims())?;
    let (w, h) = depth.dims();
    let mean = depth.values().iter().sum::<f64>() / (w * h) as f64;
    if mean == 0.0 {
        return Ok(0.0);
    }
    let d = |x: usize, y: usize| depth.get(x, y) / mean;
    let di = |a: [f64; 3], b: [f64; 3]| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;

    let mut loss = 0.0;
    if w > 1 {
        let mut sx = 0.0;
        for y in 0..h {
            for x in 0..w - 1 {
                let gi = di(image.get(x + 1, y), image.get(x, y));
                sx += (d(x + 1, y) - d(x, y)).abs() * (-gi).exp();
            }
        }
        loss += sx / ((w - 1) * h) as f64;
    }
    if h > 1 {
        let mut sy = 0.0;
        for y in 0..h - 1 {
            for x in 0..w {
                let gi = di(image.get(x, y + 1), image.get(x, y));
                sy += (d(x, y + 1) - d(x, y)).abs() * (-gi).exp();
            }
        }
        loss += sy / (w * (h - 1)) as f64;
    }
    Ok(loss)
}

/// Inputs of the teacher-network objective.
#[derive(Clone, Copy, Debug)]
pub struct StnInputs<'a> {
    pub frames: FrameTriplet<'a>,
    pub depth_pyramid: &'a [DepthMap],
    pub poses: PosePair,
    pub intrinsics: CameraIntrinsics,
    pub partial: &'a DepthMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StnLoss {
    pub photometric: f64,
    pub partial: f64,
    pub smooth: f64,
    pub total: f64,
}

pub fn loss_stn(inputs: &StnInputs<'_>, w: &LossWeights) -> Result<StnLoss> {
    w.validate()?;
    let photometric = loss_photometric_multiscale(
        &inputs.frames,
        inputs.depth_pyramid,
        &inputs.poses,
        &inputs.intrinsics,
        w,
    )?;
    let partial = loss_partial(inputs.depth_pyramid, inputs.partial)?;
    let smooth = loss_smooth(&inputs.depth_pyramid[0], inputs.frames.current)?;
    Ok(StnLoss {
        photometric,
        partial,
        smooth,
        total: w.w_pe * photometric + w.w_p * partial + w.w_s * smooth,
    })
}

/// Rescale `blur` so that its median over the partial mask matches the
/// median of the partial depth. Returns the map and the scale factor.
pub fn pseudo_depth(blur: &DepthMap, partial: &DepthMap) -> Result<(DepthMap, f64)> {
    blur.ensure_dims(partial.dims())?;
    let mut under_mask: Vec<f64> = blur
        .values()
        .iter()
        .zip(partial.values())
        .filter(|(&b, &p)| p > 0.0 && b > 0.0)
        .map(|(&b, _)| b)
        .collect();
    let den = median_in_place(&mut under_mask).ok_or(Error::EmptyOverlap)?;
    let num = masked_median(partial)?;
    let s = num / den;
    Ok((blur.scaled(s)?, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLoss {
    /// Mean of `alpha / 2 * (1 - SSIM)`.
    pub ssim_term: f64,
    /// Mean absolute difference of the normalized maps.
    pub l1_term: f64,
    pub total: f64,
}

/// SSIM/L1 comparison of two depth maps after dividing both by their
/// shared maximum. Averaged over pixels valid in both maps.
pub fn loss_pseudo(pseudo: &DepthMap, prediction: &DepthMap, alpha: f64) -> Result<PseudoLoss> {
    prediction.ensure_dims(pseudo.dims())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidValue(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let norm = pseudo
        .values()
        .iter()
        .chain(prediction.values())
        .copied()
        .fold(0.0, f64::max);
    if norm == 0.0 {
        return Err(Error::EmptyMask);
    }
    let a = pseudo.grid().map(|v| v / norm);
    let b = prediction.grid().map(|v| v / norm);
    let s = ssim_channel(&a, &b)?;
    let (mut ssim_sum, mut l1_sum, mut n) = (0.0, 0.0, 0usize);
    for i in 0..a.as_slice().len() {
        if pseudo.values()[i] > 0.0 && prediction.values()[i] > 0.0 {
            ssim_sum += 0.5 * alpha * (1.0 - s.as_slice()[i]);
            l1_sum += (a.as_slice()[i] - b.as_slice()[i]).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let ssim_term = ssim_sum / n as f64;
    let l1_term = l1_sum / n as f64;
    Ok(PseudoLoss {
        ssim_term,
        l1_term,
        total: ssim_term + l1_term,
    })
}

/// Discriminator scores for one propagation stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GanScores {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
}

fn mean_log(scores: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if scores.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &s in scores {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::ScoreOutOfRange(s));
        }
        sum += f(s).ln();
    }
    Ok(sum / scores.len() as f64)
}

/// `E[log D(real)] + E[log(1 - D(fake))]` for externally computed scores.
/// An empty list contributes 0.
pub fn gan_loss_eval(real: &[f64], fake: &[f64]) -> Result<f64> {
    Ok(mean_log(real, |s| s)? + mean_log(fake, |s| 1.0 - s)?)
}

/// [`gan_loss_eval`] summed over stages.
pub fn gan_loss(stages: &[GanScores]) -> Result<f64> {
    stages.iter().map(|g| gan_loss_eval(&g.real, &g.fake)).sum()
}

/// Inputs of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct PpgInputs<'a> {
    pub frames: FrameTriplet<'a>,
    /// Generator output at every pyramid level.
    pub depth_pyramid: &'a [DepthMap],
    /// Poses as estimated at the teacher's scale.
    pub poses: PosePair,
    pub intrinsics: CameraIntrinsics,
    /// Teacher depth at full resolution.
    pub blur: &'a DepthMap,
    pub partial: &'a DepthMap,
    pub gan: &'a [GanScores],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpgLoss {
    pub photometric: f64,
    pub pseudo: f64,
    pub gan: f64,
    /// Median ratio applied to the teacher depth and pose translations.
    pub scale: f64,
    pub total: f64,
}

/// Generator objective: photometric loss with translations rescaled to the
/// partial-depth scale, pseudo-depth loss and adversarial term.
pub fn loss_ppg(inputs: &PpgInputs<'_>, w: &LossWeights) -> Result<PpgLoss> {
    w.validate()?;
    let (pseudo, scale) = pseudo_depth(inputs.blur, inputs.partial)?;
    let poses = inputs.poses.scaled(scale)?;
    let photometric = loss_photometric_multiscale(&inputs.frames, inputs.depth_pyramid, &poses, &inputs.intrinsics, w)?;
    let pseudo = loss_pseudo(&pseudo, &inputs.depth_pyramid[0], w.alpha_pseudo)?.total;
    let gan = gan_loss(inputs.gan)?;
    Ok(PpgLoss {
        photometric,
        pseudo,
        gan,
        scale,
        total: w.w_peg * photometric + w.w_pse * pseudo + w.w_g * gan,
    })
}

/// Random depth-value and size scale for discriminator augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSample {
    pub value_scale: f64,
    pub size_scale: f64,
}

impl AugmentSample {
    pub const IDENTITY: AugmentSample = AugmentSample {
        value_scale: 1.0,
        size_scale: 1.0,
    };
}

pub fn sample_augment(seed: u64) -> AugmentSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentSample {
        value_scale: rng.random_range(AUGMENT_VALUE_RANGE.0..=AUGMENT_VALUE_RANGE.1),
        size_scale: rng.random_range(AUGMENT_SIZE_RANGE.0..=AUGMENT_SIZE_RANGE.1),
    }
}

/// Multiply depth by the value scale and resize the RGB-D pair by the size
/// scale.
pub fn apply_augment(depth: &DepthMap, image: &ImageFrame, a: &AugmentSample) -> Result<(DepthMap, ImageFrame)> {
    image.ensure_dims(depth.dims())?;
    let scaled = depth.scaled(a.value_scale)?;
    if a.size_scale == 1.0 {
        return Ok((scaled, image.clone()));
    }
    if !(a.size_scale.is_finite() && a.size_scale > 0.0) {
        return Err(Error::NonPositiveScale(a.size_scale));
    }
    let w = ((depth.width() as f64 * a.size_scale).round() as usize).max(1);
    let h = ((depth.height() as f64 * a.size_scale).round() as usize).max(1);
    Ok((
        resize_depth_nearest_valid(&scaled, w, h)?,
        resize_image_bilinear(image, w, h)?,
    ))
}
