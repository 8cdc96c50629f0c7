//! Photometric and geometric variation maps and their binarization.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::grid::{BinaryMap, Grid, ImageView, NormalMap, ScalarMap};

/// How the preservation ratio maps to the binarization quantile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMode {
    /// Threshold at the `rho` quantile; about `1 - rho` of pixels are high-variation.
    #[default]
    Literal,
    /// Threshold at the `1 - rho` quantile; about `rho` of pixels are high-variation.
    Complement,
}

impl std::str::FromStr for QuantileMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(QuantileMode::Literal),
            "complement" => Ok(QuantileMode::Complement),
            other => Err(Error::InvalidArgument(format!("unknown quantile mode '{other}'"))),
        }
    }
}

/// Per-pixel `sqrt(|dI/dx|^2 + |dI/dy|^2)` over three channels, using central
/// differences with replicated borders.
pub fn gradient_magnitude(grid: &Grid<[f64; 3]>) -> ScalarMap {
    let (w, h) = (grid.width, grid.height);
    Grid::from_fn(w, h, |col, row| {
        let left = grid.get(col.saturating_sub(1), row);
        let right = grid.get((col + 1).min(w - 1), row);
        let up = grid.get(col, row.saturating_sub(1));
        let down = grid.get(col, (row + 1).min(h - 1));
        let mut sq = 0.0;
        for c in 0..3 {
            let dx = 0.5 * (right[c] - left[c]);
            let dy = 0.5 * (down[c] - up[c]);
            sq += dx * dx + dy * dy;
        }
        sq.sqrt()
    })
}

pub fn photometric_variation(image: &ImageView) -> ScalarMap {
    gradient_magnitude(image)
}

/// Unit normals of the camera-frame point map formed by a pixel-aligned set.
///
/// Each normal is `normalize(dP/dx x dP/dy)`; pixels whose cross product
/// vanishes get `(0, 0, 1)`.
pub fn point_map_normals(gaussians: &GaussianSet, camera: &Camera) -> Result<NormalMap> {
    let (w, h) = (camera.width, camera.height);
    gaussians.check_pixel_aligned(h, w)?;
    let points: Vec<Vector3<f64>> = gaussians
        .primitives
        .iter()
        .map(|g| camera.to_camera(&g.center_vec()))
        .collect();
    let at = |col: usize, row: usize| &points[row * w + col];
    Ok(Grid::from_fn(w, h, |col, row| {
        let dx = (at((col + 1).min(w - 1), row) - at(col.saturating_sub(1), row)) * 0.5;
        let dy = (at(col, (row + 1).min(h - 1)) - at(col, row.saturating_sub(1))) * 0.5;
        let n = dx.cross(&dy);
        let norm = n.norm();
        if norm > 1e-12 && norm.is_finite() {
            (n / norm).into()
        } else {
            [0.0, 0.0, 1.0]
        }
    }))
}

pub fn geometric_variation(normals: &NormalMap) -> ScalarMap {
    gradient_magnitude(normals)
}

/// `q`-quantile with linear interpolation between the closest order statistics.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("quantile {q} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinarizedVariation {
    pub combined: ScalarMap,
    pub threshold: f64,
    pub binary: BinaryMap,
}

/// Averages the two maps and marks pixels strictly above the quantile threshold.
pub fn combined_binary_variation(
    photo: &ScalarMap,
    geo: &ScalarMap,
    rho: f64,
    mode: QuantileMode,
) -> Result<BinarizedVariation> {
    photo.ensure_same_shape(geo, "variation maps")?;
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "preservation ratio {rho} outside (0, 1]"
        )));
    }
    let combined = Grid {
        width: photo.width,
        height: photo.height,
        data: photo
            .data
            .iter()
            .zip(&geo.data)
            .map(|(p, g)| (p + g) / 2.0)
            .collect(),
    };
    let q = match mode {
        QuantileMode::Literal => rho,
        QuantileMode::Complement => 1.0 - rho,
    };
    let threshold = quantile(&combined.data, q)?;
    let binary = Grid {
        width: combined.width,
        height: combined.height,
        data: combined.data.iter().map(|&v| u8::from(v > threshold)).collect(),
    };
    Ok(BinarizedVariation {
        combined,
        threshold,
        binary,
    })
}

/// Every intermediate map of the variation step for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationMaps {
    pub photometric: ScalarMap,
    pub normals: NormalMap,
    pub geometric: ScalarMap,
    pub combined: ScalarMap,
    pub threshold: f64,
    pub binary: BinaryMap,
}

pub fn compute_variation_maps(
    image: &ImageView,
    gaussians: &GaussianSet,
    camera: &Camera,
    rho: f64,
    mode: QuantileMode,
) -> Result<VariationMaps> {
    let photometric = photometric_variation(image);
    let normals = point_map_normals(gaussians, camera)?;
    let geometric = geometric_variation(&normals);
    let BinarizedVariation {
        combined,
        threshold,
        binary,
    } = combined_binary_variation(&photometric, &geometric, rho, mode)?;
    Ok(VariationMaps {
        photometric,
        normals,
        geometric,
        combined,
        threshold,
        binary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianPrimitive;
    use approx::assert_relative_eq;
    use nalgebra::Matrix4;
    use proptest::prelude::*;

    fn map(values: &[f64]) -> ScalarMap {
        Grid::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_image_has_no_variation() {
        let img = ImageView::filled(5, 4, [0.3, 0.6, 0.9]);
        assert!(photometric_variation(&img).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_row_central_differences() {
        let img = Grid::from_vec(4, 1, [0.0, 0.2, 0.4, 0.6].map(|v| [v; 3]).to_vec()).unwrap();
        let g = photometric_variation(&img);
        for (got, d) in g.data.iter().zip([0.1, 0.2, 0.2, 0.1]) {
            assert_relative_eq!(*got, 3f64.sqrt() * d, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkerboard_cancels_away_from_the_border() {
        // Period-2 alternation: symmetric differences vanish in the interior;
        // only the replicated edges see a one-sided step.
        let img = ImageView::from_fn(6, 5, |c, r| [((c + r) % 2) as f64; 3]);
        let g = photometric_variation(&img);
        for r in 0..5 {
            for c in 0..6 {
                let border_x = c == 0 || c == 5;
                let border_y = r == 0 || r == 4;
                let per_axis = 3f64.sqrt() * 0.5;
                let expected = match (border_x, border_y) {
                    (false, false) => 0.0,
                    (true, true) => per_axis * 2f64.sqrt(),
                    _ => per_axis,
                };
                assert_relative_eq!(*g.get(c, r), expected, epsilon = 1e-12);
            }
        }
    }

    fn grid_set(w: usize, h: usize, point: impl Fn(usize, usize) -> [f64; 3]) -> (GaussianSet, Camera) {
        let mut prims = Vec::new();
        for r in 0..h {
            for c in 0..w {
                prims.push(GaussianPrimitive::from_rgb(point(c, r), 0.5, [0.1; 3], [1.0, 0.0, 0.0, 0.0], [0.5; 3]));
            }
        }
        let cam = Camera {
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
            world_to_camera: Matrix4::identity(),
        };
        (GaussianSet::pixel_aligned(prims, 0), cam)
    }

    #[test]
    fn fronto_parallel_plane_has_constant_normal() {
        let (set, cam) = grid_set(6, 5, |c, r| [c as f64 * 0.1, r as f64 * 0.1, 5.0]);
        let n = point_map_normals(&set, &cam).unwrap();
        for v in &n.data {
            assert_relative_eq!(v[2].abs(), 1.0, epsilon = 1e-12);
        }
        assert!(geometric_variation(&n).data.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn tilted_plane_normal() {
        // x + z = 6
        let (set, cam) = grid_set(6, 5, |c, r| {
            let x = c as f64 * 0.2 - 0.5;
            [x, r as f64 * 0.2, 6.0 - x]
        });
        let n = point_map_normals(&set, &cam).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for v in &n.data {
            let dot = v[0] * s + v[2] * s;
            assert_relative_eq!(dot.abs(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_points_give_sentinel() {
        let (set, cam) = grid_set(4, 4, |_, _| [0.0, 0.0, 3.0]);
        let n = point_map_normals(&set, &cam).unwrap();
        assert!(n.data.iter().all(|v| *v == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn normals_need_pixel_alignment() {
        let (mut set, cam) = grid_set(4, 4, |c, r| [c as f64, r as f64, 3.0]);
        set.primitives.pop();
        assert!(matches!(
            point_map_normals(&set, &cam),
            Err(Error::NotPixelAligned { .. })
        ));
    }

    #[test]
    fn seam_between_half_planes() {
        let normals = Grid::from_fn(6, 3, |c, _| if c < 3 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] });
        let g = geometric_variation(&normals);
        for r in 0..3 {
            assert_relative_eq!(*g.get(2, r), 2f64.sqrt() / 2.0, epsilon = 1e-12);
            assert_relative_eq!(*g.get(3, r), 2f64.sqrt() / 2.0, epsilon = 1e-12);
            assert_eq!(*g.get(0, r), 0.0);
            assert_eq!(*g.get(5, r), 0.0);
        }
    }

    #[test]
    fn quantile_examples() {
        let zero = map(&[0.0; 4]);
        let lit = combined_binary_variation(&map(&[2.0, 4.0, 6.0, 8.0]), &zero, 0.5, QuantileMode::Literal).unwrap();
        assert_eq!(lit.combined.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(lit.threshold, 2.5);
        assert_eq!(lit.binary.data, vec![0, 0, 1, 1]);

        let comp = combined_binary_variation(&map(&[2.0, 4.0, 6.0, 8.0]), &zero, 0.25, QuantileMode::Complement).unwrap();
        assert_eq!(comp.threshold, 3.25);
        assert_eq!(comp.binary.data, vec![0, 0, 0, 1]);

        let full = combined_binary_variation(&map(&[2.0, 4.0, 6.0, 8.0]), &zero, 1.0, QuantileMode::Literal).unwrap();
        assert_eq!(full.threshold, 4.0);
        assert_eq!(full.binary.count_ones(), 0);
    }

    #[test]
    fn ratio_must_be_in_unit_interval() {
        let m = map(&[1.0, 2.0]);
        for rho in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(combined_binary_variation(&m, &m, rho, QuantileMode::Literal).is_err());
        }
        assert!(combined_binary_variation(&m, &map(&[1.0]), 0.5, QuantileMode::Literal).is_err());
    }

    proptest! {
        #[test]
        fn one_fraction_tracks_rho(
            seed_values in prop::collection::hash_set(0u32..1_000_000, 4..300),
            rho in 0.01..=1.0f64,
        ) {
            let values: Vec<f64> = seed_values.into_iter().map(f64::from).collect();
            let n = values.len() as f64;
            let m = map(&values);
            let zero = map(&vec![0.0; values.len()]);
            // combined = values / 2, still distinct
            let lit = combined_binary_variation(&m, &zero, rho, QuantileMode::Literal).unwrap();
            let frac = lit.binary.count_ones() as f64 / n;
            prop_assert!((frac - (1.0 - rho)).abs() <= 1.0 / n + 1e-12);
            let comp = combined_binary_variation(&m, &zero, rho, QuantileMode::Complement).unwrap();
            let frac = comp.binary.count_ones() as f64 / n;
            prop_assert!((frac - rho).abs() <= 1.0 / n + 1e-12);
        }

        #[test]
        fn unit_normal_variation_is_bounded(
            raw in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 30)
        ) {
            let data: Vec<[f64; 3]> = raw.into_iter().map(|v| {
                let n = Vector3::from(v);
                if n.norm() < 1e-3 { [0.0, 0.0, 1.0] } else { n.normalize().into() }
            }).collect();
            let normals = Grid::from_vec(6, 5, data).unwrap();
            for v in geometric_variation(&normals).data {
                prop_assert!((0.0..=2.0).contains(&v));
            }
        }
    }
}
