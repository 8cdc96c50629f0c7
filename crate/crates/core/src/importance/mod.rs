//! Importance mask generation for one view.
//!
//! Pipeline: variation maps, quantile binarization, high/low partition,
//! key-seeded merge of the low-variation Gaussians, and projection of the
//! retained centers back onto the image plane.

mod merge;
mod variation;

use serde::{Deserialize, Serialize};

pub use merge::{merge_cluster, single_step_kmeans_merge, MergeOutput};
pub use variation::{
    combined_binary_variation, compute_variation_maps, geometric_variation, gradient_magnitude,
    photometric_variation, point_map_normals, quantile, BinarizedVariation, QuantileMode,
    VariationMaps,
};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianPrimitive, GaussianSet};
use crate::grid::{BinaryMap, Grid};
use crate::scene::SceneView;

pub const DEFAULT_PATCH_SIZE: usize = 4;
/// Centers at or closer than this camera-frame depth are not projected.
pub const MASK_NEAR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceConfig {
    pub patch_size: usize,
    pub quantile_mode: QuantileMode,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            quantile_mode: QuantileMode::Literal,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceSelection {
    pub maps: VariationMaps,
    /// Pixels whose Gaussians are high-variation, ascending.
    pub high_indices: Vec<usize>,
    /// Complement of `high_indices`, ascending.
    pub low_indices: Vec<usize>,
    /// Key pixels seeding the merge (a subset of `low_indices`).
    pub key_indices: Vec<usize>,
    /// Merged low-variation Gaussians.
    pub merged: GaussianSet,
    /// Member pixels of each merged Gaussian.
    pub clusters: Vec<Vec<usize>>,
    /// Pixels hit by at least one retained center.
    pub mask: BinaryMap,
}

/// Splits pixel indices by the binary map: `(high, low)`.
pub fn partition_by_variation(
    gaussians: &GaussianSet,
    binary: &BinaryMap,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if gaussians.len() != binary.len() {
        return Err(Error::shape("binary map", gaussians.len(), binary.len()));
    }
    let (high, low): (Vec<usize>, Vec<usize>) = (0..binary.len()).partition(|&j| binary.data[j] != 0);
    Ok((high, low))
}

/// Marks every pixel that receives at least one projected center.
pub fn project_mask<'a>(
    centers: impl IntoIterator<Item = &'a GaussianPrimitive>,
    camera: &Camera,
) -> BinaryMap {
    let mut mask = Grid::filled(camera.width, camera.height, 0u8);
    for g in centers {
        if let Some((col, row)) = camera.project_to_pixel(&g.center_vec(), MASK_NEAR) {
            mask.set(col, row, 1);
        }
    }
    mask
}

/// Partition, merge and projection given precomputed variation maps.
pub fn collect_important(
    view: &SceneView,
    maps: VariationMaps,
    config: &ImportanceConfig,
) -> Result<ImportanceSelection> {
    let set = &view.gaussians;
    set.check_pixel_aligned(view.camera.height, view.camera.width)?;
    let (high, low) = partition_by_variation(set, &maps.binary)?;
    let low_set = GaussianSet {
        primitives: low.iter().map(|&j| set.primitives[j].clone()).collect(),
        source_view: set.source_view,
        source_pixel: Some(low.clone()),
    };
    let merge = single_step_kmeans_merge(&low_set, view.camera.width, config.patch_size)?;
    let retained = high
        .iter()
        .map(|&j| &set.primitives[j])
        .chain(merge.merged.primitives.iter());
    let mask = project_mask(retained, &view.camera);
    Ok(ImportanceSelection {
        maps,
        high_indices: high,
        low_indices: low,
        key_indices: merge.key_indices,
        merged: merge.merged,
        clusters: merge.clusters,
        mask,
    })
}

/// Runs the full mask pipeline for one pixel-aligned view at ratio `rho`.
pub fn build_importance_selection(
    view: &SceneView,
    rho: f64,
    config: &ImportanceConfig,
) -> Result<ImportanceSelection> {
    let maps = compute_variation_maps(
        &view.image,
        &view.gaussians,
        &view.camera,
        rho,
        config.quantile_mode,
    )?;
    collect_important(view, maps, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synthetic::{synthesize_scene, Layout, SyntheticSpec};

    fn view(layout: Layout, seed: u64) -> SceneView {
        synthesize_scene(&SyntheticSpec {
            views: 2,
            height: 12,
            width: 16,
            seed,
            layout,
        })
        .unwrap()
        .views
        .swap_remove(0)
    }

    #[test]
    fn partition_examples() {
        let set = GaussianSet::new(vec![
            GaussianPrimitive::from_rgb([0.0; 3], 1.0, [1.0; 3], [1.0, 0.0, 0.0, 0.0], [0.5; 3]);
            4
        ]);
        let b = Grid::from_vec(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(partition_by_variation(&set, &b).unwrap(), (vec![0, 3], vec![1, 2]));
        let ones = Grid::filled(2, 2, 1);
        assert_eq!(partition_by_variation(&set, &ones).unwrap(), (vec![0, 1, 2, 3], vec![]));
        let zeros = Grid::filled(2, 2, 0);
        assert_eq!(partition_by_variation(&set, &zeros).unwrap(), (vec![], vec![0, 1, 2, 3]));
        assert!(partition_by_variation(&set, &Grid::filled(3, 1, 0)).is_err());
    }

    #[test]
    fn all_high_pixels_round_trip_to_full_mask() {
        let v = view(Layout::RandomBlobs, 2);
        let mut maps = compute_variation_maps(&v.image, &v.gaussians, &v.camera, 0.5, QuantileMode::Literal).unwrap();
        maps.binary.data.fill(1);
        let sel = collect_important(&v, maps, &ImportanceConfig::default()).unwrap();
        assert_eq!(sel.mask.count_ones(), sel.mask.len());
        assert!(sel.key_indices.is_empty() && sel.merged.is_empty());
    }

    #[test]
    fn rho_one_literal_leaves_only_merged_centers() {
        let v = view(Layout::TwoPlanes, 4);
        let sel = build_importance_selection(&v, 1.0, &ImportanceConfig::default()).unwrap();
        assert!(sel.high_indices.is_empty());
        assert_eq!(sel.key_indices.len(), 3 * 4);
        assert!(sel.mask.count_ones() <= 12usize.div_ceil(4) * 16usize.div_ceil(4));
    }

    #[test]
    fn high_pixels_are_always_masked() {
        for layout in [Layout::Plane, Layout::TwoPlanes, Layout::RandomBlobs] {
            let v = view(layout, 7);
            for rho in [0.1, 0.5, 0.9] {
                let sel = build_importance_selection(&v, rho, &ImportanceConfig::default()).unwrap();
                for &j in &sel.high_indices {
                    assert_eq!(sel.mask.data[j], 1);
                }
                assert!(sel.key_indices.iter().all(|k| sel.low_indices.binary_search(k).is_ok()));
                assert_eq!(sel.high_indices.len() + sel.low_indices.len(), v.gaussians.len());
            }
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let v = view(Layout::RandomBlobs, 1);
        let cfg = ImportanceConfig {
            patch_size: 4,
            quantile_mode: QuantileMode::Complement,
        };
        let a = build_importance_selection(&v, 0.3, &cfg).unwrap();
        let b = build_importance_selection(&v, 0.3, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
