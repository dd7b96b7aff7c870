//! Pinhole camera model, depth-based reprojection and the SSIM/L1
//! photometric comparison used by every loss evaluator.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, Grid, ImageFrame};

/// SSIM stabilizers for intensities in [0, 1].
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Default SSIM/L1 mixing weight.
pub const DEFAULT_ALPHA: f64 = 0.85;

const ORTHO_TOL: f64 = 1e-9;
// Sample coordinates this close to an integer are snapped onto it.
const SNAP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidValue(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidValue("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Intrinsics of a `width x height` camera with the given full fields of
    /// view (degrees) and the principal point at the image center.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64, vfov_deg: f64) -> Result<Self> {
        let fx = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        let fy = 0.5 * height as f64 / (0.5 * vfov_deg.to_radians()).tan();
        Self::new(fx, fy, 0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Camera-frame point seen at pixel `(u, v)` with z-depth `depth`.
    #[inline]
    pub fn back_project(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Pixel coordinates of a camera-frame point, `None` behind the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Intrinsics after `levels` rounds of 2x2 area downsampling.
    /// Pixel centers sit on integer coordinates, so the principal point maps
    /// as `c' = (c + 0.5) / 2 - 0.5` per level.
    pub fn downscaled(&self, levels: u32) -> Self {
        let f = 0.5f64.powi(levels as i32);
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: (self.cx + 0.5) * f - 0.5,
            cy: (self.cy + 0.5) * f - 0.5,
        }
    }
}

/// Rigid transform mapping points from one camera frame into another:
/// `p' = rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct PoseSE3 {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Row-major rotation and translation as plain arrays.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl TryFrom<PoseRepr> for PoseSE3 {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = r.rotation;
        PoseSE3::new(
            Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            Vector3::from(r.translation),
        )
    }
}

impl From<PoseSE3> for PoseRepr {
    fn from(p: PoseSE3) -> Self {
        let r = p.rotation;
        PoseRepr {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl PoseSE3 {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidValue("translation must be finite".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ORTHO_TOL && (det - 1.0).abs() <= ORTHO_TOL) {
            return Err(Error::InvalidValue(format!(
                "rotation is not orthonormal (|RtR - I| = {ortho:e}, det = {det})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Result<Self> {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation of `angle` radians about `axis`, followed by `t`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, t: Vector3<f64>) -> Result<Self> {
        let r = if angle == 0.0 {
            Matrix3::identity()
        } else {
            let axis = Unit::try_new(axis, 1e-12)
                .ok_or_else(|| Error::InvalidValue("rotation axis has zero length".into()))?;
            *Rotation3::from_axis_angle(&axis, angle).matrix()
        };
        Self::new(r, t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }
}

/// Scale the translation of `pose` by `s`, keeping its rotation.
pub fn scale_translation(pose: &PoseSE3, s: f64) -> Result<PoseSE3> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::NonPositiveScale(s));
    }
    Ok(PoseSE3 {
        rotation: pose.rotation,
        translation: pose.translation * s,
    })
}

/// Intrinsics plus the pose taking target-camera points into the source camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: CameraIntrinsics,
    pub relative_pose: PoseSE3,
}

impl CameraRig {
    pub fn new(intrinsics: CameraIntrinsics, relative_pose: PoseSE3) -> Result<Self> {
        intrinsics.validate()?;
        Ok(Self {
            intrinsics,
            relative_pose,
        })
    }
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}

/// Bilinear lookup at continuous pixel coordinates. Returns `None` when the
/// point falls outside `[0, w-1] x [0, h-1]`.
pub fn sample_bilinear(img: &ImageFrame, u: f64, v: f64) -> Option<[f64; 3]> {
    let (w, h) = img.dims();
    let (u, v) = (snap(u), snap(v));
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let x0 = u.floor() as usize;
    let y0 = v.floor() as usize;
    let a = u - x0 as f64;
    let b = v - y0 as f64;
    // On the last row/column the far neighbour carries zero weight.
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p00 = img.get(x0, y0);
    if a == 0.0 && b == 0.0 {
        return Some(p00);
    }
    let p10 = img.get(x1, y0);
    let p01 = img.get(x0, y1);
    let p11 = img.get(x1, y1);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = (1.0 - a) * (1.0 - b) * p00[c]
            + a * (1.0 - b) * p10[c]
            + (1.0 - a) * b * p01[c]
            + a * b * p11[c];
    }
    Some(out)
}

/// Synthesize the target view from `src` using the target depth and the rig.
///
/// Each target pixel with valid depth is back-projected, moved into the
/// source camera by `rig.relative_pose`, projected and bilinearly sampled.
/// Pixels without depth, behind the source camera or landing outside `src`
/// are masked out and set to 0.
pub fn warp(src: &ImageFrame, depth_tgt: &DepthMap, rig: &CameraRig) -> Result<(ImageFrame, BinaryMask)> {
    let (w, h) = depth_tgt.dims();
    let k = &rig.intrinsics;
    let pose = &rig.relative_pose;
    let mut out = Grid::filled(w, h, [0.0; 3]);
    let mut mask = Grid::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let d = depth_tgt.get(x, y);
            if d <= 0.0 {
                continue;
            }
            let p = pose.transform(&k.back_project(x as f64, y as f64, d));
            let Some((u, v)) = k.project(&p) else {
                continue;
            };
            if let Some(px) = sample_bilinear(src, u, v) {
                out.set(x, y, px.map(|c| c.clamp(0.0, 1.0)));
                mask.set(x, y, true);
            }
        }
    }
    Ok((ImageFrame::from_grid(out)?, mask))
}

#[inline]
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// 3x3 box mean with reflect-101 borders.
pub fn box_mean3(g: &Grid<f64>) -> Grid<f64> {
    let (w, h) = g.dims();
    Grid::from_fn(w, h, |x, y| {
        let mut s = 0.0;
        for dy in -1isize..=1 {
            let yy = reflect101(y as isize + dy, h);
            for dx in -1isize..=1 {
                s += g.get(reflect101(x as isize + dx, w), yy);
            }
        }
        s / 9.0
    })
}

/// Local single-channel SSIM over 3x3 windows.
pub fn ssim_channel(a: &Grid<f64>, b: &Grid<f64>) -> Result<Grid<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    let (w, h) = a.dims();
    let mu_a = box_mean3(a);
    let mu_b = box_mean3(b);
    let aa = box_mean3(&Grid::from_fn(w, h, |x, y| a.get(x, y) * a.get(x, y)));
    let bb = box_mean3(&Grid::from_fn(w, h, |x, y| b.get(x, y) * b.get(x, y)));
    let ab = box_mean3(&Grid::from_fn(w, h, |x, y| a.get(x, y) * b.get(x, y)));
    Ok(Grid::from_fn(w, h, |x, y| {
        let (ma, mb) = (mu_a.get(x, y), mu_b.get(x, y));
        let va = aa.get(x, y) - ma * ma;
        let vb = bb.get(x, y) - mb * mb;
        let cov = ab.get(x, y) - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
        (num / den).clamp(-1.0, 1.0)
    }))
}

/// Per-pixel SSIM averaged over the three channels.
pub fn ssim(a: &ImageFrame, b: &ImageFrame) -> Result<Grid<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::dims(a.dims(), b.dims()));
    }
    let maps = (0..3)
        .map(|c| ssim_channel(&a.channel(c), &b.channel(c)))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = a.dims();
    Ok(Grid::from_fn(w, h, |x, y| {
        (maps[0].get(x, y) + maps[1].get(x, y) + maps[2].get(x, y)) / 3.0
    }))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhotometricNorm {
    /// Channel-mean absolute difference.
    #[default]
    L1,
    /// Channel root-mean-square difference.
    L2,
}

impl PhotometricNorm {
    #[inline]
    fn pixel(self, a: [f64; 3], b: [f64; 3]) -> f64 {
        match self {
            PhotometricNorm::L1 => ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0,
            PhotometricNorm::L2 => {
                (((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)) / 3.0).sqrt()
            }
        }
    }
}

/// `alpha/2 * (1 - SSIM) + |a - b|` comparison of two images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Photometric {
    pub alpha: f64,
    pub norm: PhotometricNorm,
}

impl Default for Photometric {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            norm: PhotometricNorm::L1,
        }
    }
}

impl Photometric {
    pub fn new(alpha: f64, norm: PhotometricNorm) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidValue(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha, norm })
    }

    /// Per-pixel error over the whole frame.
    pub fn error_map(&self, warped: &ImageFrame, target: &ImageFrame) -> Result<Grid<f64>> {
        if warped.dims() != target.dims() {
            return Err(Error::dims(target.dims(), warped.dims()));
        }
        let (w, h) = target.dims();
        let s = if self.alpha > 0.0 {
            Some(ssim(warped, target)?)
        } else {
            None
        };
        Ok(Grid::from_fn(w, h, |x, y| {
            let structural = s.as_ref().map_or(0.0, |s| 0.5 * self.alpha * (1.0 - s.get(x, y)));
            structural + self.norm.pixel(warped.get(x, y), target.get(x, y))
        }))
    }

    /// Mean error over the masked pixels.
    pub fn error(&self, warped: &ImageFrame, target: &ImageFrame, mask: &BinaryMask) -> Result<f64> {
        let map = self.error_map(warped, target)?;
        if mask.dims() != map.dims() {
            return Err(Error::dims(map.dims(), mask.dims()));
        }
        let (sum, n) = map
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (&e, _)| (s + e, n + 1));
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(sum / n as f64)
    }
}

/// Masked SSIM/L1 photometric error with the L1 norm.
pub fn photometric_error(warped: &ImageFrame, target: &ImageFrame, mask: &BinaryMask, alpha: f64) -> Result<f64> {
    Photometric::new(alpha, PhotometricNorm::L1)?.error(warped, target, mask)
}
