//! Key-seeded single-step K-means over low-variation Gaussians.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{factor_covariance, GaussianPrimitive, GaussianSet};

/// Eigenvalue floor used when refactoring merged covariances.
const MIN_VARIANCE: f64 = 1e-18;

/// Result of clustering a low-variation set around its key Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutput {
    /// Source pixels of the key Gaussians, ascending.
    pub key_indices: Vec<usize>,
    /// One Gaussian per cluster, in cluster order.
    pub merged: GaussianSet,
    /// Source pixels of each cluster's members, ascending.
    pub clusters: Vec<Vec<usize>>,
}

/// Static 3D k-d tree answering nearest-point queries; ties go to the lowest
/// point id.
struct KdTree {
    points: Vec<(Vector3<f64>, usize)>,
}

impl KdTree {
    fn new(mut points: Vec<(Vector3<f64>, usize)>) -> Self {
        fn build(slice: &mut [(Vector3<f64>, usize)], depth: usize) {
            if slice.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = slice.len() / 2;
            slice.select_nth_unstable_by(mid, |a, b| {
                a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1))
            });
            let (left, right) = slice.split_at_mut(mid);
            build(left, depth + 1);
            build(&mut right[1..], depth + 1);
        }
        build(&mut points, 0);
        Self { points }
    }

    fn nearest(&self, q: &Vector3<f64>) -> Option<usize> {
        fn search(
            slice: &[(Vector3<f64>, usize)],
            depth: usize,
            q: &Vector3<f64>,
            best: &mut Option<(f64, usize)>,
        ) {
            if slice.is_empty() {
                return;
            }
            let mid = slice.len() / 2;
            let (p, id) = &slice[mid];
            let d2 = (p - q).norm_squared();
            let better = match best {
                None => true,
                Some((bd, bid)) => d2 < *bd || (d2 == *bd && id < bid),
            };
            if better {
                *best = Some((d2, *id));
            }
            let axis = depth % 3;
            let delta = q[axis] - p[axis];
            let (near, far) = if delta < 0.0 {
                (&slice[..mid], &slice[mid + 1..])
            } else {
                (&slice[mid + 1..], &slice[..mid])
            };
            search(near, depth + 1, q, best);
            // Equal distances must still be visited for the id tie-break.
            if best.is_none_or(|(bd, _)| delta * delta <= bd) {
                search(far, depth + 1, q, best);
            }
        }
        let mut best = None;
        search(&self.points, 0, q, &mut best);
        best.map(|(_, id)| id)
    }
}

/// Opacity-weighted moment matching of a cluster.
///
/// Weights are the opacities (uniform if they are all zero); the merged
/// opacity is the maximum member opacity. A single member is returned as is.
pub fn merge_cluster(members: &[&GaussianPrimitive]) -> Result<GaussianPrimitive> {
    match members {
        [] => return Err(Error::InvalidArgument("cannot merge an empty cluster".into())),
        [single] => return Ok((*single).clone()),
        _ => {}
    }
    let total_alpha: f64 = members.iter().map(|g| g.opacity).sum();
    let uniform = !(total_alpha > 0.0);
    let weight = |g: &GaussianPrimitive| if uniform { 1.0 } else { g.opacity };
    let total = if uniform { members.len() as f64 } else { total_alpha };

    let mean = members
        .iter()
        .fold(Vector3::zeros(), |acc, g| acc + g.center_vec() * weight(g))
        / total;
    let mut cov = Matrix3::zeros();
    for g in members {
        let d = g.center_vec() - mean;
        cov += (g.covariance()? + d * d.transpose()) * weight(g);
    }
    cov /= total;
    let (scale, rotation) = factor_covariance(&cov, MIN_VARIANCE);

    let basis = members.iter().map(|g| g.sh.len()).max().unwrap_or(1);
    let mut sh = vec![[0.0; 3]; basis];
    for g in members {
        for (k, rgb) in g.sh.iter().enumerate() {
            for c in 0..3 {
                sh[k][c] += weight(g) * rgb[c];
            }
        }
    }
    for rgb in &mut sh {
        for v in rgb.iter_mut() {
            *v /= total;
        }
    }
    let opacity = members.iter().map(|g| g.opacity).fold(0.0, f64::max);
    Ok(GaussianPrimitive {
        center: mean.into(),
        opacity,
        scale,
        rotation,
        sh,
    })
}

/// Clusters `low_set` around key Gaussians and merges each cluster.
///
/// Keys are members whose source pixel is the top-left pixel of its
/// `patch x patch` block. Each member joins the key with the nearest center
/// (keys always join their own cluster). With no keys, every member is a
/// singleton and the merge is the identity.
pub fn single_step_kmeans_merge(
    low_set: &GaussianSet,
    image_width: usize,
    patch: usize,
) -> Result<MergeOutput> {
    if patch == 0 {
        return Err(Error::InvalidArgument("patch size must be at least 1".into()));
    }
    if image_width == 0 {
        return Err(Error::InvalidArgument("image width must be positive".into()));
    }
    let pixels = low_set
        .source_pixel
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("low-variation set lacks source pixels".into()))?;
    if pixels.len() != low_set.len() {
        return Err(Error::shape("source pixels", low_set.len(), pixels.len()));
    }

    let mut order: Vec<usize> = (0..low_set.len()).collect();
    order.sort_by_key(|&k| pixels[k]);
    let is_key = |pixel: usize| (pixel / image_width) % patch == 0 && (pixel % image_width) % patch == 0;
    let keys: Vec<usize> = order.iter().copied().filter(|&k| is_key(pixels[k])).collect();

    if keys.is_empty() {
        let clusters: Vec<Vec<usize>> = order.iter().map(|&k| vec![pixels[k]]).collect();
        let merged = order.iter().map(|&k| low_set.primitives[k].clone()).collect();
        let mut merged = GaussianSet::new(merged);
        merged.source_view = low_set.source_view;
        return Ok(MergeOutput {
            key_indices: Vec::new(),
            merged,
            clusters,
        });
    }

    let tree = KdTree::new(
        keys.iter()
            .enumerate()
            .map(|(c, &k)| (low_set.primitives[k].center_vec(), c))
            .collect(),
    );
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
    let mut key_cluster = vec![None; low_set.len()];
    for (c, &k) in keys.iter().enumerate() {
        key_cluster[k] = Some(c);
    }
    for &k in &order {
        let cluster = match key_cluster[k] {
            Some(c) => c,
            None => tree
                .nearest(&low_set.primitives[k].center_vec())
                .expect("tree is non-empty"),
        };
        members[cluster].push(k);
    }

    let merged = members
        .iter()
        .map(|m| {
            let refs: Vec<&GaussianPrimitive> = m.iter().map(|&k| &low_set.primitives[k]).collect();
            merge_cluster(&refs)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut merged = GaussianSet::new(merged);
    merged.source_view = low_set.source_view;
    merged.source_pixel = Some(keys.iter().map(|&k| pixels[k]).collect());
    Ok(MergeOutput {
        key_indices: keys.iter().map(|&k| pixels[k]).collect(),
        merged,
        clusters: members
            .into_iter()
            .map(|m| m.into_iter().map(|k| pixels[k]).collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const IDENTITY: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

    fn g(center: [f64; 3], opacity: f64) -> GaussianPrimitive {
        GaussianPrimitive::from_rgb(center, opacity, [1.0; 3], IDENTITY, [0.2, 0.4, 0.6])
    }

    fn with_pixels(prims: Vec<GaussianPrimitive>, pixels: Vec<usize>) -> GaussianSet {
        GaussianSet {
            primitives: prims,
            source_view: Some(0),
            source_pixel: Some(pixels),
        }
    }

    #[test]
    fn identical_members_merge_to_themselves() {
        let a = GaussianPrimitive::from_rgb([1.0, 2.0, 3.0], 0.7, [0.3, 0.5, 0.9], [0.9, 0.1, 0.2, -0.3], [0.1, 0.8, 0.3]);
        let m = merge_cluster(&[&a, &a]).unwrap();
        assert_relative_eq!(m.center_vec(), a.center_vec(), epsilon = 1e-12);
        assert_eq!(m.opacity, a.opacity);
        assert_relative_eq!(m.covariance().unwrap(), a.covariance().unwrap(), epsilon = 1e-12);
        for (x, y) in m.sh.iter().zip(&a.sh) {
            for c in 0..3 {
                assert_relative_eq!(x[c], y[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_member_moment_matching() {
        let m = merge_cluster(&[&g([0.0; 3], 0.5), &g([2.0, 0.0, 0.0], 0.5)]).unwrap();
        assert_relative_eq!(m.center_vec(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        let expected = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        assert_relative_eq!(m.covariance().unwrap(), expected, epsilon = 1e-12);
        assert_eq!(m.opacity, 0.5);
    }

    #[test]
    fn nearest_key_assignment() {
        // Width 8, patch 4: pixels 0 and 4 are keys; 1 and 5 are not.
        let set = with_pixels(
            vec![g([0.0; 3], 1.0), g([0.1, 0.0, 0.0], 1.0), g([10.0, 0.0, 0.0], 1.0), g([9.9, 0.0, 0.0], 1.0)],
            vec![0, 1, 4, 5],
        );
        let out = single_step_kmeans_merge(&set, 8, 4).unwrap();
        assert_eq!(out.key_indices, vec![0, 4]);
        assert_eq!(out.clusters, vec![vec![0, 1], vec![4, 5]]);
        assert_eq!(out.merged.len(), 2);
    }

    #[test]
    fn no_keys_is_identity() {
        let set = with_pixels(vec![g([0.0; 3], 1.0), g([1.0, 0.0, 0.0], 0.3)], vec![1, 2]);
        let out = single_step_kmeans_merge(&set, 8, 4).unwrap();
        assert!(out.key_indices.is_empty());
        assert_eq!(out.merged.primitives, set.primitives);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let out = single_step_kmeans_merge(&with_pixels(vec![], vec![]), 8, 4).unwrap();
        assert!(out.key_indices.is_empty() && out.merged.is_empty());
    }

    #[test]
    fn zero_patch_is_rejected() {
        assert!(single_step_kmeans_merge(&with_pixels(vec![], vec![]), 8, 0).is_err());
    }

    proptest! {
        #[test]
        fn kd_tree_matches_brute_force(
            keys in prop::collection::vec(prop::array::uniform3(-3i32..3), 1..40),
            queries in prop::collection::vec(prop::array::uniform3(-4i32..4), 1..40),
        ) {
            // Integer coordinates force plenty of exact ties.
            let pts: Vec<(Vector3<f64>, usize)> = keys
                .iter()
                .enumerate()
                .map(|(i, k)| (Vector3::new(k[0] as f64, k[1] as f64, k[2] as f64), i))
                .collect();
            let tree = KdTree::new(pts.clone());
            for q in &queries {
                let q = Vector3::new(q[0] as f64, q[1] as f64, q[2] as f64);
                let brute = pts
                    .iter()
                    .min_by(|a, b| (a.0 - q).norm_squared().total_cmp(&(b.0 - q).norm_squared()).then(a.1.cmp(&b.1)))
                    .unwrap()
                    .1;
                prop_assert_eq!(tree.nearest(&q), Some(brute));
            }
        }

        #[test]
        fn first_moment_is_conserved(
            raw in prop::collection::vec((prop::array::uniform3(-5.0..5.0f64), 0.0..1.0f64), 1..64),
        ) {
            let n = raw.len();
            let prims: Vec<_> = raw.iter().map(|(c, a)| g(*c, *a)).collect();
            let set = with_pixels(prims.clone(), (0..n).collect());
            let out = single_step_kmeans_merge(&set, 8, 4).unwrap();
            let mut lhs = Vector3::zeros();
            for (cluster, m) in out.clusters.iter().zip(&out.merged.primitives) {
                let w: f64 = cluster.iter().map(|&p| prims[p].opacity).sum();
                lhs += m.center_vec() * w;
            }
            let rhs = prims.iter().fold(Vector3::zeros(), |acc, p| acc + p.center_vec() * p.opacity);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
            prop_assert_eq!(out.merged.len(), out.key_indices.len());
            let mut all: Vec<usize> = out.clusters.concat();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
