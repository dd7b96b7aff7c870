//! Analytic ray-cast scenes with exact depth, used as ground truth.
//!
//! World and camera frames follow the usual vision convention: x right,
//! y down, z forward. Frame poses map camera points into the world.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::raster::{DepthMap, Grid, ImageFrame};

const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Pattern {
    Constant { albedo: [f64; 3] },
    /// Alternating squares of side `cell` meters.
    Checker { cell: f64, a: [f64; 3], b: [f64; 3] },
    /// `base * (1 + amplitude * sin(2 pi s / period) * sin(2 pi t / period))`.
    Sinusoid { period: f64, base: [f64; 3], amplitude: f64 },
}

impl Pattern {
    /// Albedo at surface coordinates `(s, t)`, clamped to [0, 1].
    pub fn albedo(&self, s: f64, t: f64) -> [f64; 3] {
        let raw = match self {
            Pattern::Constant { albedo } => *albedo,
            Pattern::Checker { cell, a, b } => {
                let parity = ((s / cell).floor() + (t / cell).floor()).rem_euclid(2.0);
                if parity < 0.5 {
                    *a
                } else {
                    *b
                }
            }
            Pattern::Sinusoid { period, base, amplitude } => {
                let m = 1.0 + amplitude * (TAU * s / period).sin() * (TAU * t / period).sin();
                base.map(|c| c * m)
            }
        };
        raw.map(|c| c.clamp(0.0, 1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Surface {
    /// Infinite plane through `point` with the given normal.
    Plane { point: [f64; 3], normal: [f64; 3], pattern: Pattern },
    /// Axis-aligned box.
    Box { center: [f64; 3], half_extent: [f64; 3], pattern: Pattern },
}

struct Hit {
    t: f64,
    normal: Vector3<f64>,
    texcoord: (f64, f64),
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

/// Two unit vectors spanning the plane orthogonal to `n`.
fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = helper.cross(n).normalize();
    (u, n.cross(&u))
}

impl Surface {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        match self {
            Surface::Plane { point, normal, .. } => {
                let n = v3(*normal).normalize();
                let denom = dir.dot(&n);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let p = v3(*point);
                let t = (p - origin).dot(&n) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let (tu, tv) = tangent_basis(&n);
                let rel = origin + dir * t - p;
                Some(Hit {
                    t,
                    normal: n,
                    texcoord: (rel.dot(&tu), rel.dot(&tv)),
                })
            }
            Surface::Box { center, half_extent, .. } => {
                let (c, h) = (v3(*center), v3(*half_extent));
                let (mut t_near, mut t_far) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for i in 0..3 {
                    let (lo, hi) = (c[i] - h[i], c[i] + h[i]);
                    if dir[i].abs() < 1e-15 {
                        if origin[i] < lo || origin[i] > hi {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((lo - origin[i]) / dir[i], (hi - origin[i]) / dir[i]);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    if a > t_near {
                        t_near = a;
                        axis = i;
                    }
                    t_far = t_far.min(b);
                }
                if t_near > t_far || t_near <= HIT_EPS {
                    return None;
                }
                let mut normal = Vector3::zeros();
                normal[axis] = -dir[axis].signum();
                let p = origin + dir * t_near;
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                Some(Hit {
                    t: t_near,
                    normal,
                    texcoord: (p[i] - c[i], p[j] - c[j]),
                })
            }
        }
    }

    fn pattern(&self) -> &Pattern {
        match self {
            Surface::Plane { pattern, .. } | Surface::Box { pattern, .. } => pattern,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameTime {
    Prev,
    Current,
    Next,
}

impl FrameTime {
    pub const ALL: [FrameTime; 3] = [FrameTime::Prev, FrameTime::Current, FrameTime::Next];

    pub fn index(self) -> usize {
        match self {
            FrameTime::Prev => 0,
            FrameTime::Current => 1,
            FrameTime::Next => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameTime::Prev => "prev",
            FrameTime::Current => "current",
            FrameTime::Next => "next",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticScene {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub surfaces: Vec<Surface>,
    /// Direction towards the light, world frame.
    pub light_dir: [f64; 3],
    /// Shading floor so surfaces facing away from the light stay visible.
    pub ambient: f64,
    /// Camera-to-world poses at t-1, t, t+1.
    pub poses: [PoseSE3; 3],
}

impl SyntheticScene {
    pub fn pose(&self, time: FrameTime) -> &PoseSE3 {
        &self.poses[time.index()]
    }

    /// Pose mapping points of the `target` camera into the `source` camera,
    /// the convention [`crate::geometry::warp`] expects.
    pub fn relative_pose(&self, target: FrameTime, source: FrameTime) -> PoseSE3 {
        self.pose(source).inverse().compose(self.pose(target))
    }
}

/// Render the image and z-depth seen at `time`.
pub fn render_scene(s: &SyntheticScene, time: FrameTime) -> Result<(ImageFrame, DepthMap)> {
    if s.surfaces.is_empty() {
        return Err(Error::NoIntersection { x: 0, y: 0 });
    }
    if !(0.0..=1.0).contains(&s.ambient) {
        return Err(Error::InvalidValue(format!("ambient must lie in [0, 1], got {}", s.ambient)));
    }
    let light = v3(s.light_dir).normalize();
    let pose = s.pose(time);
    let origin = *pose.translation();
    let k = &s.intrinsics;
    let mut pixels = Vec::with_capacity(s.width * s.height);
    let mut depth = Vec::with_capacity(s.width * s.height);
    for y in 0..s.height {
        for x in 0..s.width {
            let ray_cam = k.back_project(x as f64, y as f64, 1.0);
            let dir = pose.rotation() * ray_cam;
            let hit = s
                .surfaces
                .iter()
                .filter_map(|surf| surf.intersect(&origin, &dir).map(|h| (h, surf)))
                .min_by(|a, b| a.0.t.total_cmp(&b.0.t))
                .ok_or(Error::NoIntersection { x, y })?;
            let (h, surf) = hit;
            let shade = s.ambient + (1.0 - s.ambient) * h.normal.dot(&light).abs();
            let albedo = surf.pattern().albedo(h.texcoord.0, h.texcoord.1);
            pixels.push(albedo.map(|c| (c * shade).clamp(0.0, 1.0)));
            // The camera ray has unit z, so the ray parameter is the z-depth.
            depth.push(h.t);
        }
    }
    Ok((
        ImageFrame::from_grid(Grid::from_vec(s.width, s.height, pixels)?)?,
        DepthMap::new(s.width, s.height, depth)?,
    ))
}

fn sinusoid(base: f64) -> Pattern {
    Pattern::Sinusoid {
        period: 0.4,
        base: [base, 0.9 * base, 0.8 * base],
        amplitude: 0.5,
    }
}

/// Built-in scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenePreset {
    /// Textured wall facing the camera at `depth` meters; the camera moves
    /// `step` meters forward per frame.
    FrontoPlane { depth: f64, step: f64 },
    /// Wall at `depth` meters on the optical axis, turned by `angle_deg`
    /// about the vertical axis; the camera moves `step` meters sideways.
    ObliquePlane { depth: f64, angle_deg: f64, step: f64 },
    /// Floor, back wall and a box on the floor; the camera moves forward
    /// and yaws slightly.
    Desk { step: f64 },
}

impl Default for ScenePreset {
    fn default() -> Self {
        ScenePreset::Desk { step: 0.05 }
    }
}

impl ScenePreset {
    pub fn build(&self, width: usize, height: usize, intrinsics: CameraIntrinsics) -> Result<SyntheticScene> {
        intrinsics.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue("scene size must be non-empty".into()));
        }
        let translate = |v: Vector3<f64>| PoseSE3::from_translation(v);
        let (surfaces, poses) = match *self {
            ScenePreset::FrontoPlane { depth, step } => (
                vec![Surface::Plane {
                    point: [0.0, 0.0, depth],
                    normal: [0.0, 0.0, -1.0],
                    pattern: sinusoid(0.8),
                }],
                [
                    translate(Vector3::new(0.0, 0.0, -step))?,
                    PoseSE3::identity(),
                    translate(Vector3::new(0.0, 0.0, step))?,
                ],
            ),
            ScenePreset::ObliquePlane { depth, angle_deg, step } => {
                let a = angle_deg.to_radians();
                (
                    vec![Surface::Plane {
                        point: [0.0, 0.0, depth],
                        normal: [a.sin(), 0.0, -a.cos()],
                        pattern: sinusoid(0.8),
                    }],
                    [
                        translate(Vector3::new(-step, 0.0, 0.0))?,
                        PoseSE3::identity(),
                        translate(Vector3::new(step, 0.0, 0.0))?,
                    ],
                )
            }
            ScenePreset::Desk { step } => {
                let yaw = |sgn: f64| PoseSE3::from_axis_angle(Vector3::y(), sgn * 0.01, Vector3::new(0.0, 0.0, sgn * step));
                (
                    vec![
                        Surface::Plane {
                            point: [0.0, 1.2, 0.0],
                            normal: [0.0, -1.0, 0.0],
                            pattern: sinusoid(0.6),
                        },
                        Surface::Plane {
                            point: [0.0, 0.0, 8.0],
                            normal: [0.0, 0.0, -1.0],
                            pattern: sinusoid(0.9),
                        },
                        Surface::Box {
                            center: [0.3, 0.7, 4.0],
                            half_extent: [0.5, 0.5, 0.5],
                            pattern: Pattern::Checker {
                                cell: 0.25,
                                a: [0.85, 0.5, 0.3],
                                b: [0.35, 0.2, 0.1],
                            },
                        },
                    ],
                    [yaw(-1.0)?, PoseSE3::identity(), yaw(1.0)?],
                )
            }
        };
        Ok(SyntheticScene {
            width,
            height,
            intrinsics,
            surfaces,
            light_dir: [0.3, -1.0, -0.5],
            ambient: 0.3,
            poses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{warp, CameraRig};

    fn k(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::from_fov(w, h, 41.3, 31.3).unwrap()
    }

    #[test]
    fn fronto_plane_depth_is_constant() {
        let s = ScenePreset::FrontoPlane { depth: 3.5, step: 0.25 }.build(32, 24, k(32, 24)).unwrap();
        let (_, d) = render_scene(&s, FrameTime::Current).unwrap();
        assert!(d.values().iter().all(|&v| v == 3.5));
        let (_, d) = render_scene(&s, FrameTime::Next).unwrap();
        assert!(d.values().iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn oblique_plane_matches_closed_form() {
        let (w, h) = (40, 30);
        let intr = k(w, h);
        let s = ScenePreset::ObliquePlane { depth: 4.0, angle_deg: 35.0, step: 0.1 }.build(w, h, intr).unwrap();
        let (_, d) = render_scene(&s, FrameTime::Current).unwrap();
        let a = 35f64.to_radians();
        let n = Vector3::new(a.sin(), 0.0, -a.cos());
        let c = n.dot(&Vector3::new(0.0, 0.0, 4.0));
        for y in 0..h {
            for x in 0..w {
                let ray = intr.back_project(x as f64, y as f64, 1.0);
                let z = c / n.dot(&ray);
                assert!((d.get(x, y) - z).abs() <= 1e-12 * z, "({x}, {y})");
            }
        }
    }

    #[test]
    fn box_occludes_back_wall() {
        let s = ScenePreset::default().build(64, 48, k(64, 48)).unwrap();
        let (img, d) = render_scene(&s, FrameTime::Current).unwrap();
        assert_eq!(d.valid_count(), 64 * 48);
        let (min, max) = d.values().iter().fold((f64::MAX, 0.0f64), |a, &v| (a.0.min(v), a.1.max(v)));
        assert!((3.0..4.0).contains(&min), "{min}");
        assert!((max - 8.0).abs() < 1e-9 || max < 8.0);
        assert_eq!(render_scene(&s, FrameTime::Current).unwrap().0, img);
    }

    #[test]
    fn rays_missing_everything_are_errors() {
        let mut s = ScenePreset::FrontoPlane { depth: 2.0, step: 0.0 }.build(8, 8, k(8, 8)).unwrap();
        s.surfaces = vec![Surface::Box {
            center: [0.0, 0.0, 5.0],
            half_extent: [0.01, 0.01, 0.01],
            pattern: Pattern::Constant { albedo: [1.0; 3] },
        }];
        assert!(matches!(render_scene(&s, FrameTime::Current), Err(Error::NoIntersection { .. })));
    }

    #[test]
    fn rendered_depth_and_pose_explain_neighbour_frames() {
        let (w, h) = (96, 72);
        for preset in [
            ScenePreset::FrontoPlane { depth: 4.0, step: 0.1 },
            ScenePreset::ObliquePlane { depth: 4.0, angle_deg: 30.0, step: 0.1 },
        ] {
            let s = preset.build(w, h, k(w, h)).unwrap();
            let (cur, d) = render_scene(&s, FrameTime::Current).unwrap();
            for src in [FrameTime::Prev, FrameTime::Next] {
                let (img, _) = render_scene(&s, src).unwrap();
                let rig = CameraRig::new(s.intrinsics, s.relative_pose(FrameTime::Current, src)).unwrap();
                let (warped, mask) = warp(&img, &d, &rig).unwrap();
                let mut sum = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        if mask.get(x, y) {
                            let (a, b) = (warped.get(x, y), cur.get(x, y));
                            sum += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
                        }
                    }
                }
                let mean = sum / mask.count() as f64;
                assert!(mask.count() > w * h / 2);
                assert!(mean <= 1e-2, "{preset:?} {src:?}: {mean}");
            }
        }
    }

    #[test]
    fn scene_serde_round_trip() {
        let s = ScenePreset::default().build(8, 6, k(8, 6)).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SyntheticScene>(&j).unwrap(), s);
    }
}
