//! Anisotropic 3D Gaussian primitives and the sets they are grouped into.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of SH basis functions per channel for a given degree.
pub fn sh_basis_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

/// Inverse of [`sh_basis_count`]; `None` for counts that are not a supported degree.
pub fn sh_degree_for_basis_count(count: usize) -> Option<u32> {
    match count {
        1 => Some(0),
        4 => Some(1),
        9 => Some(2),
        16 => Some(3),
        _ => None,
    }
}

/// One anisotropic 3D Gaussian.
///
/// Opacity is held post-activation in `[0, 1]`. The covariance is kept factored
/// as per-axis standard deviations plus a rotation quaternion `(w, x, y, z)`.
/// `sh` holds one RGB triple per spherical-harmonic basis function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub center: [f64; 3],
    pub opacity: f64,
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub sh: Vec<[f64; 3]>,
}

impl GaussianPrimitive {
    /// A degree-0 Gaussian whose view-independent color is `rgb`.
    pub fn from_rgb(
        center: [f64; 3],
        opacity: f64,
        scale: [f64; 3],
        rotation: [f64; 4],
        rgb: [f64; 3],
    ) -> Self {
        Self {
            center,
            opacity,
            scale,
            rotation,
            sh: vec![rgb.map(|c| (c - 0.5) / SH_C0)],
        }
    }

    pub fn sh_degree(&self) -> Option<u32> {
        sh_degree_for_basis_count(self.sh.len())
    }

    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        covariance_from_factors(self.scale, self.rotation)
    }

    /// RGB color seen along the unit direction `dir` (from the eye toward the center).
    pub fn color_toward(&self, dir: &Vector3<f64>) -> [f64; 3] {
        eval_sh(&self.sh, dir)
    }
}

/// Evaluates `0.5 + sum(c_lm * Y_lm(dir))` per channel, clamped to `[0, 1]`.
pub fn eval_sh(sh: &[[f64; 3]], dir: &Vector3<f64>) -> [f64; 3] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut basis = [0.0; 16];
    basis[0] = SH_C0;
    if sh.len() >= 4 {
        basis[1] = -SH_C1 * y;
        basis[2] = SH_C1 * z;
        basis[3] = -SH_C1 * x;
    }
    if sh.len() >= 9 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[4] = SH_C2[0] * x * y;
        basis[5] = SH_C2[1] * y * z;
        basis[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        basis[7] = SH_C2[3] * x * z;
        basis[8] = SH_C2[4] * (xx - yy);
    }
    if sh.len() >= 16 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        basis[9] = SH_C3[0] * y * (3.0 * xx - yy);
        basis[10] = SH_C3[1] * x * y * z;
        basis[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        basis[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        basis[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        basis[14] = SH_C3[5] * z * (xx - yy);
        basis[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
    let mut rgb = [0.5; 3];
    for (coeffs, b) in sh.iter().take(16).zip(basis) {
        for c in 0..3 {
            rgb[c] += b * coeffs[c];
        }
    }
    rgb.map(|v| v.clamp(0.0, 1.0))
}

/// Normalizes a `(w, x, y, z)` quaternion.
pub fn normalize_quaternion(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::InvalidRotation);
    }
    Ok(q.map(|v| v / norm))
}

/// Rotation matrix of a `(w, x, y, z)` quaternion, normalized first.
pub fn rotation_matrix(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let [w, x, y, z] = normalize_quaternion(q)?;
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Builds `R * diag(scale^2) * R^T`.
///
/// The result is symmetrized explicitly, so it is exactly symmetric.
pub fn covariance_from_factors(scale: [f64; 3], rotation: [f64; 4]) -> Result<Matrix3<f64>> {
    if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidScale(scale));
    }
    let r = rotation_matrix(rotation)?;
    let m = r * Matrix3::from_diagonal(&Vector3::from(scale));
    let sigma = m * m.transpose();
    Ok((sigma + sigma.transpose()) * 0.5)
}

/// Factors a symmetric positive semi-definite matrix into `(scale, rotation)`.
///
/// Eigenvalues are sorted in descending order and floored at `min_variance`
/// so the factors stay valid for degenerate (flat) clusters.
pub fn factor_covariance(sigma: &Matrix3<f64>, min_variance: f64) -> ([f64; 3], [f64; 4]) {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = Matrix3::zeros();
    let mut scale = [0.0; 3];
    for (col, &k) in order.iter().enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(k));
        scale[col] = eig.eigenvalues[k].max(min_variance).sqrt();
    }
    if basis.determinant() < 0.0 {
        let flipped = -basis.column(2);
        basis.set_column(2, &flipped);
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(basis));
    let q: &Quaternion<f64> = q.as_ref();
    (scale, [q.w, q.i, q.j, q.k])
}

/// An ordered collection of Gaussians, optionally tagged with the view and
/// source pixel each primitive was predicted from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub primitives: Vec<GaussianPrimitive>,
    pub source_view: Option<usize>,
    pub source_pixel: Option<Vec<usize>>,
}

impl GaussianSet {
    pub fn new(primitives: Vec<GaussianPrimitive>) -> Self {
        Self {
            primitives,
            source_view: None,
            source_pixel: None,
        }
    }

    /// Tags `primitives` as one-per-pixel in row-major order for `view`.
    pub fn pixel_aligned(primitives: Vec<GaussianPrimitive>, view: usize) -> Self {
        let n = primitives.len();
        Self {
            primitives,
            source_view: Some(view),
            source_pixel: Some((0..n).collect()),
        }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Errors unless the set holds exactly `height * width` primitives in pixel order.
    pub fn check_pixel_aligned(&self, height: usize, width: usize) -> Result<()> {
        let expected = height * width;
        if self.len() != expected {
            return Err(Error::NotPixelAligned {
                expected,
                found: self.len(),
            });
        }
        if let Some(pixels) = &self.source_pixel {
            if pixels.len() != expected || pixels.iter().enumerate().any(|(i, &p)| i != p) {
                return Err(Error::InvalidArgument(
                    "source pixel indices are not the enumeration 0..HW".into(),
                ));
            }
        }
        Ok(())
    }

    /// Highest SH degree present, or 0 for an empty set.
    pub fn max_sh_degree(&self) -> u32 {
        self.primitives
            .iter()
            .filter_map(|g| g.sh_degree())
            .max()
            .unwrap_or(0)
    }

    /// Concatenates sets in order, dropping view and pixel tags.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a GaussianSet>) -> GaussianSet {
        GaussianSet::new(
            sets.into_iter()
                .flat_map(|s| s.primitives.iter().cloned())
                .collect(),
        )
    }
}
