//! Per-view budget allocation from spectral detail scores.
//!
//! Each view gets a high-frequency score `eta` (the share of its centered DFT
//! magnitude outside a low-frequency square). A tempered softmax turns the
//! scores into importances `kappa` with mean 1, the per-view preservation
//! ratio is `kappa * K / (N H W)`, and largest-remainder rounding converts
//! the resulting targets into integer budgets that sum to exactly `K`.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageView;
use crate::scene::Scene;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_LOWFREQ_SIDE: usize = 64;

/// Rec.601 luma.
pub fn luminance(rgb: &[f64; 3]) -> f64 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

/// Start index and length of the low-frequency band along one axis of a
/// shifted spectrum of size `n`, centered on the DC bin `n / 2`.
fn band(n: usize, side: usize) -> (usize, usize) {
    let start = (n / 2).saturating_sub(side / 2);
    (start, side.min(n - start))
}

/// Magnitude spectrum with zero frequency moved to `(H / 2, W / 2)`.
pub fn shifted_magnitude(image: &ImageView) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let mut buf: Vec<Complex<f64>> = image
        .data
        .iter()
        .map(|p| Complex::new(luminance(p), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for c in 0..w {
        for r in 0..h {
            column[r] = buf[r * w + c];
        }
        col_fft.process(&mut column);
        for r in 0..h {
            buf[r * w + c] = column[r];
        }
    }
    let mut shifted = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let sr = (r + h / 2) % h;
            let sc = (c + w / 2) % w;
            shifted[sr * w + sc] = buf[r * w + c].norm();
        }
    }
    shifted
}

/// Fraction of spectral magnitude outside the centered `side x side` square.
///
/// `side` is clamped to `min(H, W)`. An all-zero image scores 0.
pub fn high_frequency_score(image: &ImageView, side: usize) -> f64 {
    let (w, h) = (image.width, image.height);
    let limit = w.min(h);
    let side = if side > limit {
        log::warn!("low-frequency side {side} exceeds image size; clamped to {limit}");
        limit
    } else {
        side
    };
    let mag = shifted_magnitude(image);
    let total: f64 = mag.iter().sum();
    if !(total > 0.0) {
        return 0.0;
    }
    let (r0, rn) = band(h, side);
    let (c0, cn) = band(w, side);
    let low: f64 = (r0..r0 + rn)
        .map(|r| mag[r * w + c0..r * w + c0 + cn].iter().sum::<f64>())
        .sum();
    (1.0 - low / total).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    pub eta: Vec<f64>,
    pub psi: Vec<f64>,
    pub kappa: Vec<f64>,
    pub temperature: f64,
    pub lowfreq_side: usize,
}

/// Tempered softmax of the scores: `(psi, kappa = N * psi)`.
pub fn view_importance(etas: &[f64], temperature: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if etas.is_empty() {
        return Err(Error::InvalidArgument("at least one view is required".into()));
    }
    let max = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = etas.iter().map(|e| ((e - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let psi: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let n = etas.len() as f64;
    let kappa = psi.iter().map(|p| n * p).collect();
    Ok((psi, kappa))
}

/// Target primitive count, absolute or as a fraction of the pool.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Budget {
    Count(i64),
    Ratio(f64),
}

impl Budget {
    /// Resolves to an absolute count; ratios use `floor(ratio * pool)`.
    pub fn resolve(self, pool: u64) -> Result<u64> {
        match self {
            Budget::Count(k) if k < 0 || k as u64 > pool => {
                Err(Error::BudgetOutOfRange { budget: k, max: pool })
            }
            Budget::Count(k) => Ok(k as u64),
            Budget::Ratio(r) if !(0.0..=1.0).contains(&r) => Err(Error::InvalidArgument(format!(
                "budget ratio {r} outside [0, 1]"
            ))),
            Budget::Ratio(r) => Ok(((r * pool as f64).floor() as u64).min(pool)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub total: u64,
    pub rho_global: f64,
    pub rho_per_view: Vec<f64>,
    pub budgets: Vec<u64>,
    /// `H * W` of every view.
    pub pixels_per_view: u64,
    pub profile: SpectralProfile,
}

impl AllocationPlan {
    pub fn view_count(&self) -> usize {
        self.budgets.len()
    }

    pub fn report(&self) -> AllocationReport {
        AllocationReport {
            k: self.total,
            rho_global: self.rho_global,
            temperature: self.profile.temperature,
            lowfreq_side: self.profile.lowfreq_side,
            per_view: (0..self.view_count())
                .map(|i| PlanView {
                    view_id: i,
                    eta: self.profile.eta[i],
                    kappa: self.profile.kappa[i],
                    rho: self.rho_per_view[i],
                    budget: self.budgets[i],
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanView {
    pub view_id: usize,
    pub eta: f64,
    pub kappa: f64,
    pub rho: f64,
    pub budget: u64,
}

/// Serialized form of a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    #[serde(rename = "K")]
    pub k: u64,
    pub rho_global: f64,
    pub temperature: f64,
    pub lowfreq_side: usize,
    pub per_view: Vec<PlanView>,
}

/// Real-valued per-view targets `kappa_i * K / N`, capped at `cap` with the
/// excess redistributed in proportion to `kappa` over the uncapped views.
pub fn capped_targets(kappa: &[f64], total: u64, cap: u64) -> Vec<f64> {
    let n = kappa.len();
    let mut capped = vec![false; n];
    loop {
        let free_kappa: f64 = (0..n).filter(|&i| !capped[i]).map(|i| kappa[i]).sum();
        let remaining = total as f64 - cap as f64 * capped.iter().filter(|&&c| c).count() as f64;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                if capped[i] {
                    cap as f64
                } else if free_kappa > 0.0 {
                    remaining * kappa[i] / free_kappa
                } else {
                    remaining / (n - capped.iter().filter(|&&c| c).count()) as f64
                }
            })
            .collect();
        let mut changed = false;
        for i in 0..n {
            if !capped[i] && targets[i] > cap as f64 {
                capped[i] = true;
                changed = true;
            }
        }
        if !changed {
            return targets;
        }
    }
}

/// Integerizes `targets` so the result sums to `total` with each entry in
/// `[0, cap]`: floor everything, then hand out the residual one unit at a
/// time to the largest fractional parts, lowest index first on ties.
pub fn largest_remainder(targets: &[f64], total: u64, cap: u64) -> Result<Vec<u64>> {
    if total > cap * targets.len() as u64 {
        return Err(Error::BudgetOutOfRange {
            budget: total as i64,
            max: cap * targets.len() as u64,
        });
    }
    let mut budgets: Vec<u64> = targets
        .iter()
        .map(|t| (t.max(0.0).floor() as u64).min(cap))
        .collect();
    let frac: Vec<f64> = targets
        .iter()
        .zip(&budgets)
        .map(|(t, b)| t.max(0.0) - *b as f64)
        .collect();
    let assigned: u64 = budgets.iter().sum();

    let mut order: Vec<usize> = (0..targets.len()).collect();
    if assigned <= total {
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
        let mut residual = total - assigned;
        while residual > 0 {
            for &i in &order {
                if residual == 0 {
                    break;
                }
                if budgets[i] < cap {
                    budgets[i] += 1;
                    residual -= 1;
                }
            }
        }
    } else {
        // Only reachable through floating-point overshoot of the targets.
        order.sort_by(|&a, &b| frac[a].total_cmp(&frac[b]).then(b.cmp(&a)));
        let mut excess = assigned - total;
        while excess > 0 {
            for &i in &order {
                if excess == 0 {
                    break;
                }
                if budgets[i] > 0 {
                    budgets[i] -= 1;
                    excess -= 1;
                }
            }
        }
    }
    Ok(budgets)
}

/// Builds a plan from precomputed scores.
pub fn plan_from_scores(
    eta: Vec<f64>,
    pixels_per_view: u64,
    total: u64,
    temperature: f64,
    lowfreq_side: usize,
    uniform: bool,
) -> Result<AllocationPlan> {
    let n = eta.len();
    let (psi, kappa) = if uniform {
        if n == 0 {
            return Err(Error::InvalidArgument("at least one view is required".into()));
        }
        (vec![1.0 / n as f64; n], vec![1.0; n])
    } else {
        view_importance(&eta, temperature)?
    };
    let pool = pixels_per_view * n as u64;
    if total > pool {
        return Err(Error::BudgetOutOfRange {
            budget: total as i64,
            max: pool,
        });
    }
    let targets = capped_targets(&kappa, total, pixels_per_view);
    let budgets = largest_remainder(&targets, total, pixels_per_view)?;
    let rho_per_view = if pixels_per_view == 0 {
        vec![0.0; n]
    } else {
        targets
            .iter()
            .map(|t| (t / pixels_per_view as f64).clamp(0.0, 1.0))
            .collect()
    };
    Ok(AllocationPlan {
        total,
        rho_global: if pool == 0 { 0.0 } else { total as f64 / pool as f64 },
        rho_per_view,
        budgets,
        pixels_per_view,
        profile: SpectralProfile {
            eta,
            psi,
            kappa,
            temperature,
            lowfreq_side,
        },
    })
}

/// Scores every view and splits `budget` across them.
///
/// With `uniform`, every view gets `kappa = 1` (scores are still reported).
pub fn make_allocation_plan(
    scene: &Scene,
    budget: Budget,
    temperature: f64,
    lowfreq_side: usize,
    uniform: bool,
) -> Result<AllocationPlan> {
    let (h, w) = scene.resolution()?;
    let pool = scene.total_pool()?;
    let total = budget.resolve(pool)?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let side = lowfreq_side.min(h.min(w));
    if side < lowfreq_side {
        log::warn!("low-frequency side {lowfreq_side} exceeds image size; clamped to {side}");
    }
    let eta: Vec<f64> = scene
        .views
        .par_iter()
        .map(|v| high_frequency_score(&v.image, side))
        .collect();
    plan_from_scores(eta, (h * w) as u64, total, temperature, side, uniform)
}
