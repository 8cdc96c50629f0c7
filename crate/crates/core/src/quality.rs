//! Training losses with analytic gradients, and image quality metrics.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::ImageView;

pub const BCE_EPSILON: f64 = 1e-7;
pub const DEFAULT_LAMBDA_IO: f64 = 0.1;
/// Weight of the perceptual term in the render loss. Kept for reference;
/// no perceptual metric is computed.
pub const LPIPS_WEIGHT: f64 = 0.05;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Same layout as the differentiated argument (channels interleaved for images).
    pub gradient: Option<Vec<f64>>,
}

/// Weighted mean binary cross-entropy between a binary mask and opacities.
pub fn bce_opacity_loss(mask: &[f64], opacities: &[f64], lambda_io: f64) -> Result<LossValue> {
    if mask.len() != opacities.len() {
        return Err(Error::shape("opacities", mask.len(), opacities.len()));
    }
    if mask.is_empty() {
        return Err(Error::InvalidArgument("loss over zero entries".into()));
    }
    let n = mask.len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(mask.len());
    for (&o, &a) in mask.iter().zip(opacities) {
        let a = a.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        sum -= o * a.ln() + (1.0 - o) * (1.0 - a).ln();
        grad.push(lambda_io / n * (a - o) / (a * (1.0 - a)));
    }
    Ok(LossValue {
        value: lambda_io * sum / n,
        gradient: Some(grad),
    })
}

/// Mean squared error over all `H * W * 3` entries.
pub fn mse_loss(rendered: &ImageView, target: &ImageView) -> Result<LossValue> {
    check_dims(rendered, target)?;
    let n = (rendered.len() * 3) as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(rendered.len() * 3);
    for (r, t) in rendered.channels().zip(target.channels()) {
        let d = r - t;
        sum += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(LossValue {
        value: sum / n,
        gradient: Some(grad),
    })
}

/// Mean of the per-pair MSE values.
pub fn batch_render_loss(pairs: &[(&ImageView, &ImageView)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("render loss needs at least one pair".into()));
    }
    let mut sum = 0.0;
    for (r, t) in pairs {
        sum += mse_loss(r, t)?.value;
    }
    Ok(sum / pairs.len() as f64)
}

pub fn total_loss(io: &LossValue, render: f64) -> f64 {
    io.value + render
}

fn check_dims(a: &ImageView, b: &ImageView) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::shape(
            "image",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ))
    }
}

/// Peak signal-to-noise ratio with unit peak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// Images are identical.
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid psnr '{s}'"))),
        }
    }
}

pub fn psnr(a: &ImageView, b: &ImageView) -> Result<Psnr> {
    let mse = mse_loss(a, b)?.value;
    Ok(if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (1.0 / mse).log10())
    })
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filter of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = (0..k).map(|i| taps[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| taps[i] * horiz[(r + i) * ow + c]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity, per channel then averaged.
pub fn ssim(a: &ImageView, b: &ImageView) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[ch]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ..) = filter_valid(&x, w, h, &taps);
        let (my, ..) = filter_valid(&y, w, h, &taps);
        let (sxx, ..) = filter_valid(&xx, w, h, &taps);
        let (syy, ..) = filter_valid(&yy, w, h, &taps);
        let (sxy, ..) = filter_valid(&xy, w, h, &taps);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (mu_x, mu_y) = (mx[i], my[i]);
            let vx = sxx[i] - mu_x * mu_x;
            let vy = syy[i] - mu_y * mu_y;
            let cov = sxy[i] - mu_x * mu_y;
            sum += ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / 3.0)
}
