//! Deterministic synthetic scenes with known geometry.
//!
//! Cameras sit on a horizontal arc facing the origin. Each pixel is
//! unprojected onto the layout surface to give one flat Gaussian per pixel,
//! colored by a seeded procedural texture. Ground-truth images are renders
//! of the pooled Gaussians of all views, quantized to 8 bits.

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianPrimitive, GaussianSet};
use crate::renderer::rasterize;
use crate::scene::{Scene, SceneView};

pub const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];
const CAMERA_DISTANCE: f64 = 4.0;
const ARC_HALF_ANGLE: f64 = 0.25;
const FOLD_SLOPE: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Plane,
    TwoPlanes,
    RandomBlobs,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Layout::Plane),
            "two_planes" => Ok(Layout::TwoPlanes),
            "random_blobs" => Ok(Layout::RandomBlobs),
            other => Err(Error::InvalidArgument(format!("unknown layout '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub views: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub layout: Layout,
}

struct Sphere {
    center: Vector3<f64>,
    radius: f64,
}

struct Surface {
    layout: Layout,
    spheres: Vec<Sphere>,
}

struct Hit {
    point: Vector3<f64>,
    normal: Vector3<f64>,
    distance: f64,
}

fn plane_hit(o: &Vector3<f64>, d: &Vector3<f64>, n: Vector3<f64>, offset: f64) -> Option<f64> {
    // Plane n . p = offset
    let denom = n.dot(d);
    if denom.abs() < 1e-12 {
        return None;
    }
    let t = (offset - n.dot(o)) / denom;
    (t > 1e-6).then_some(t)
}

impl Surface {
    fn new(layout: Layout, rng: &mut ChaCha8Rng) -> Self {
        let spheres = if layout == Layout::RandomBlobs {
            let count = rng.random_range(3..=5);
            (0..count)
                .map(|_| Sphere {
                    center: Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-0.8..0.0),
                    ),
                    radius: rng.random_range(0.25..0.5),
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { layout, spheres }
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Hit {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, normal: Vector3<f64>| {
            if best.as_ref().is_none_or(|b| t < b.distance) {
                best = Some(Hit {
                    point: o + d * t,
                    normal,
                    distance: t,
                });
            }
        };
        let back = Vector3::new(0.0, 0.0, -1.0);
        match self.layout {
            Layout::Plane => {
                if let Some(t) = plane_hit(o, d, Vector3::z(), 0.0) {
                    consider(t, back);
                }
            }
            Layout::TwoPlanes => {
                if let Some(t) = plane_hit(o, d, Vector3::z(), 0.0) {
                    if (o + d * t).x <= 0.0 {
                        consider(t, back);
                    }
                }
                let n = Vector3::new(-FOLD_SLOPE, 0.0, 1.0);
                if let Some(t) = plane_hit(o, d, n, 0.0) {
                    if (o + d * t).x > 0.0 {
                        consider(t, -n.normalize());
                    }
                }
            }
            Layout::RandomBlobs => {
                if let Some(t) = plane_hit(o, d, Vector3::z(), 0.6) {
                    consider(t, back);
                }
                for s in &self.spheres {
                    let oc = o - s.center;
                    let b = oc.dot(d);
                    let c = oc.norm_squared() - s.radius * s.radius;
                    let disc = b * b - c;
                    if disc >= 0.0 {
                        let t = -b - disc.sqrt();
                        if t > 1e-6 {
                            consider(t, (o + d * t - s.center) / s.radius);
                        }
                    }
                }
            }
        }
        best.unwrap_or_else(|| {
            let t = CAMERA_DISTANCE;
            Hit {
                point: o + d * t,
                normal: -d,
                distance: t,
            }
        })
    }
}

struct Texture {
    freq: [f64; 2],
    phase: [[f64; 2]; 3],
    checker: f64,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self {
            freq: [rng.random_range(2.0..6.0), rng.random_range(2.0..6.0)],
            phase: std::array::from_fn(|_| {
                [
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            }),
            checker: rng.random_range(2.0..4.0),
        }
    }

    fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let cell = (p.x * self.checker).floor() + (p.y * self.checker).floor();
        let bump = if cell.rem_euclid(2.0) == 0.0 { 0.15 } else { -0.15 };
        std::array::from_fn(|c| {
            let [a, b] = self.phase[c];
            let wave = (self.freq[0] * p.x + a).sin() * (self.freq[1] * (p.y + 0.3 * p.z) + b).cos();
            (0.5 + 0.3 * wave + bump).clamp(0.0, 1.0)
        })
    }
}

/// Cameras for `count` views spread over the arc.
pub fn arc_cameras(count: usize, height: usize, width: usize) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let theta = if count == 1 {
                0.0
            } else {
                -ARC_HALF_ANGLE + 2.0 * ARC_HALF_ANGLE * i as f64 / (count - 1) as f64
            };
            arc_camera(theta, height, width)
        })
        .collect()
}

/// Camera on the arc at angle `theta` (radians) from the central view.
pub fn arc_camera(theta: f64, height: usize, width: usize) -> Camera {
    let position = Vector3::new(
        CAMERA_DISTANCE * theta.sin(),
        0.0,
        -CAMERA_DISTANCE * theta.cos(),
    );
    let focal = 1.2 * width.max(height) as f64;
    Camera::look_at(position, Vector3::zeros(), Vector3::y(), focal, width, height)
}

/// Held-out cameras halfway between consecutive input views (or one
/// slightly off-center camera for single-view scenes).
pub fn novel_cameras(spec: &SyntheticSpec) -> Vec<Camera> {
    if spec.views <= 1 {
        return vec![arc_camera(0.5 * ARC_HALF_ANGLE, spec.height, spec.width)];
    }
    let step = 2.0 * ARC_HALF_ANGLE / (spec.views - 1) as f64;
    (0..spec.views - 1)
        .map(|i| arc_camera(-ARC_HALF_ANGLE + step * (i as f64 + 0.5), spec.height, spec.width))
        .collect()
}

/// Builds the scene in memory.
pub fn synthesize_scene(spec: &SyntheticSpec) -> Result<Scene> {
    if spec.views == 0 || spec.height < 8 || spec.width < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic scenes need N >= 1 and H, W >= 8 (got N={}, {}x{})",
            spec.views, spec.height, spec.width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let surface = Surface::new(spec.layout, &mut rng);
    let texture = Texture::new(&mut rng);
    let cameras = arc_cameras(spec.views, spec.height, spec.width);

    let sets: Vec<GaussianSet> = cameras
        .iter()
        .enumerate()
        .map(|(view, cam)| {
            let mut prims = Vec::with_capacity(spec.height * spec.width);
            for row in 0..spec.height {
                for col in 0..spec.width {
                    let (o, d) = cam.pixel_ray(col, row);
                    let hit = surface.intersect(&o, &d);
                    let mut normal = hit.normal;
                    if normal.z < 0.0 {
                        normal = -normal;
                    }
                    let rotation = UnitQuaternion::rotation_between(&Vector3::z(), &normal)
                        .unwrap_or_else(UnitQuaternion::identity);
                    let q = rotation.quaternion();
                    let footprint = hit.distance / cam.fx;
                    let tilt = normal.dot(&d).abs().max(0.3);
                    let lateral = 0.7 * footprint / tilt;
                    prims.push(GaussianPrimitive::from_rgb(
                        hit.point.into(),
                        rng.random_range(0.3..=1.0),
                        [lateral, lateral, 0.1 * lateral],
                        [q.w, q.i, q.j, q.k],
                        texture.color(&hit.point),
                    ));
                }
            }
            GaussianSet::pixel_aligned(prims, view)
        })
        .collect();

    let pooled = GaussianSet::concat(&sets);
    let views = cameras
        .into_iter()
        .zip(sets)
        .map(|(camera, gaussians)| SceneView {
            image: rasterize(&pooled, &camera, BACKGROUND).quantized(),
            camera,
            gaussians,
        })
        .collect();
    Ok(Scene::new(views))
}

/// Builds the scene and writes it under `dir`; returns the manifest path.
pub fn generate_synthetic_scene(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let scene = synthesize_scene(spec)?;
    super::write_scene(&scene, dir)
}
