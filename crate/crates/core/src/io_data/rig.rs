//! Camera and MEMS LiDAR geometry of the reference hardware.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::CameraIntrinsics;
use crate::raster::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigPreset {
    pub width: usize,
    pub height: usize,
    /// Camera horizontal and vertical field of view, degrees.
    pub camera_fov: (f64, f64),
    /// LiDAR horizontal and vertical field of view, degrees.
    pub lidar_fov: (f64, f64),
    /// Share of the image width and height covered by the LiDAR.
    pub fraction_w: f64,
    pub fraction_h: f64,
    /// Centered image region the LiDAR sees.
    pub lidar_rect: Rect,
}

/// Share of a pinhole image spanned by a narrower, co-centered frustum.
pub fn fov_fraction(inner_deg: f64, outer_deg: f64) -> f64 {
    (inner_deg.to_radians() / 2.0).tan() / (outer_deg.to_radians() / 2.0).tan()
}

impl RigPreset {
    pub fn new(width: usize, height: usize, camera_fov: (f64, f64), lidar_fov: (f64, f64)) -> Result<Self> {
        let fraction_w = fov_fraction(lidar_fov.0, camera_fov.0);
        let fraction_h = fov_fraction(lidar_fov.1, camera_fov.1);
        let rw = ((width as f64 * fraction_w).round() as usize).clamp(1, width);
        let rh = ((height as f64 * fraction_h).round() as usize).clamp(1, height);
        let lidar_rect = Rect::new((width - rw) / 2, (height - rh) / 2, rw, rh)?;
        Ok(Self {
            width,
            height,
            camera_fov,
            lidar_fov,
            fraction_w,
            fraction_h,
            lidar_rect,
        })
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.width, self.height, self.camera_fov.0, self.camera_fov.1)
    }

    /// Same optics at a different resolution.
    pub fn at_resolution(&self, width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, self.camera_fov, self.lidar_fov)
    }
}

/// 1536x1024 camera with a 41.3 x 31.3 degree FoV and a 14.5 x 16.2 degree LiDAR.
pub fn default_rig() -> RigPreset {
    RigPreset::new(1536, 1024, (41.3, 31.3), (14.5, 16.2)).expect("preset geometry is valid")
}
