//! Forward splatting rasterizer and a brute-force reference renderer.
//!
//! Both renderers share the projection and per-pixel alpha math. The tiled
//! renderer restricts each Gaussian to the pixels inside its 3-sigma square,
//! skips alphas below `1/255`, and stops once transmittance drops under
//! `1e-4`. The reference renderer does none of that.

use nalgebra::{Matrix2, Matrix2x3, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianPrimitive, GaussianSet};
use crate::grid::{Grid, ImageView, ScalarMap};

pub const NEAR_PLANE: f64 = 0.01;
pub const ALPHA_CAP: f64 = 0.99;
pub const ALPHA_FLOOR: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
pub const DILATION: f64 = 0.3;
pub const TILE_SIZE: usize = 16;
pub const REFERENCE_MAX_GAUSSIANS: usize = 10_000;

/// A Gaussian projected to screen space.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Position of the primitive in its input set.
    pub index: usize,
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// `3 * sqrt(max eigenvalue of cov2d)`.
    pub radius: f64,
    conic: [f64; 3],
}

impl ProjectedGaussian {
    /// Capped alpha at a screen position, before the `1/255` floor.
    #[inline]
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d[0];
        let dy = y - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        (self.opacity * power.exp()).min(ALPHA_CAP)
    }

    /// Inclusive pixel column and row ranges whose sample centers lie within
    /// `radius` of the mean on both axes, clipped to the image.
    fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let span = |m: f64, limit: usize| -> Option<(usize, usize)> {
            let lo = (m - self.radius - 0.5).ceil().max(0.0);
            let hi = (m + self.radius - 0.5).floor().min(limit as f64 - 1.0);
            (lo <= hi).then_some((lo as usize, hi as usize))
        };
        let (c0, c1) = span(self.mean2d[0], width)?;
        let (r0, r1) = span(self.mean2d[1], height)?;
        Some((c0, c1, r0, r1))
    }
}

/// EWA projection of one Gaussian; `None` when culled by the near plane or
/// when its factors are invalid.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera) -> Option<ProjectedGaussian> {
    project_indexed(g, cam, 0)
}

fn project_indexed(g: &GaussianPrimitive, cam: &Camera, index: usize) -> Option<ProjectedGaussian> {
    let world = g.center_vec();
    let t = cam.to_camera(&world);
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let sigma = g.covariance().ok()?;
    let (x, y, z) = (t.x, t.y, t.z);
    let jac = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let w = cam.rotation();
    let m = jac * w;
    let mut cov2d = m * sigma * m.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += DILATION;
    cov2d[(1, 1)] += DILATION;

    let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();

    let dir: Vector3<f64> = (world - cam.center()).normalize();
    Some(ProjectedGaussian {
        index,
        mean2d: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        cov2d,
        depth: z,
        color: g.color_toward(&dir),
        opacity: g.opacity,
        radius: 3.0 * lambda_max.sqrt(),
        conic: [c / det, -b / det, a / det],
    })
}

/// Projects a set and sorts front-to-back, ties broken by input index.
pub fn project_sorted(set: &GaussianSet, cam: &Camera) -> Vec<ProjectedGaussian> {
    let mut projected: Vec<ProjectedGaussian> = set
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_indexed(g, cam, i))
        .collect();
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    projected
}

/// Image plus per-pixel compositing diagnostics.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: ImageView,
    /// Transmittance left for the background.
    pub transmittance: ScalarMap,
    /// Sum of `alpha * T` over contributing Gaussians.
    pub weight: ScalarMap,
}

pub fn rasterize(set: &GaussianSet, cam: &Camera, background: [f64; 3]) -> ImageView {
    rasterize_detailed(set, cam, background).image
}

pub fn rasterize_detailed(set: &GaussianSet, cam: &Camera, background: [f64; 3]) -> RenderOutput {
    let (width, height) = (cam.width, cam.height);
    let projected = project_sorted(set, cam);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);

    // Per-tile lists of (sorted position, pixel bounds), in depth order.
    type Bounds = (usize, usize, usize, usize);
    let mut bins: Vec<Vec<(usize, Bounds)>> = vec![Vec::new(); tiles_x * tiles_y];
    for (k, pg) in projected.iter().enumerate() {
        let Some(bounds) = pg.pixel_bounds(width, height) else {
            continue;
        };
        let (c0, c1, r0, r1) = bounds;
        for ty in r0 / TILE_SIZE..=r1 / TILE_SIZE {
            for tx in c0 / TILE_SIZE..=c1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push((k, bounds));
            }
        }
    }

    let tiles: Vec<(usize, Vec<[f64; 5]>)> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut out = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for row in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height) {
                for col in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width) {
                    let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
                    let mut rgb = [0.0; 3];
                    let mut t = 1.0;
                    let mut weight = 0.0;
                    for &(k, (c0, c1, r0, r1)) in list {
                        if col < c0 || col > c1 || row < r0 || row > r1 {
                            continue;
                        }
                        let pg = &projected[k];
                        let alpha = pg.alpha_at(px, py);
                        if alpha < ALPHA_FLOOR {
                            continue;
                        }
                        let w = alpha * t;
                        for c in 0..3 {
                            rgb[c] += w * pg.color[c];
                        }
                        weight += w;
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_CUTOFF {
                            break;
                        }
                    }
                    out.push([rgb[0], rgb[1], rgb[2], t, weight]);
                }
            }
            (tile, out)
        })
        .collect();

    let mut image = Grid::filled(width, height, background);
    let mut transmittance = Grid::filled(width, height, 1.0);
    let mut weight = Grid::filled(width, height, 0.0);
    for (tile, pixels) in tiles {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        let mut it = pixels.into_iter();
        for row in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(height) {
            for col in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(width) {
                let [r, g, b, t, w] = it.next().expect("tile pixel count");
                image.set(
                    col,
                    row,
                    [
                        r + t * background[0],
                        g + t * background[1],
                        b + t * background[2],
                    ],
                );
                transmittance.set(col, row, t);
                weight.set(col, row, w);
            }
        }
    }
    RenderOutput {
        image,
        transmittance,
        weight,
    }
}

/// Evaluates every Gaussian at every pixel with no culling shortcuts.
pub fn reference_rasterize(set: &GaussianSet, cam: &Camera, background: [f64; 3]) -> Result<ImageView> {
    if set.len() > REFERENCE_MAX_GAUSSIANS {
        return Err(Error::InvalidArgument(format!(
            "reference renderer accepts at most {REFERENCE_MAX_GAUSSIANS} Gaussians, got {}",
            set.len()
        )));
    }
    let projected = project_sorted(set, cam);
    Ok(Grid::from_fn(cam.width, cam.height, |col, row| {
        let (px, py) = (col as f64 + 0.5, row as f64 + 0.5);
        let mut rgb = [0.0; 3];
        let mut t = 1.0;
        for pg in &projected {
            let alpha = pg.alpha_at(px, py);
            for c in 0..3 {
                rgb[c] += alpha * t * pg.color[c];
            }
            t *= 1.0 - alpha;
        }
        [
            rgb[0] + t * background[0],
            rgb[1] + t * background[1],
            rgb[2] + t * background[2],
        ]
    }))
}
