//! Progressive budget sampling for training harnesses.
//!
//! The lower bound of the sampled budget interval decays in steps of
//! `decay` every `interval` iterations until it reaches `k_floor_frac`;
//! the upper bound is fixed. Samples come from a ChaCha stream keyed by
//! `(seed, t)`, so any iteration can be queried independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_pool: u64,
    pub k_max_frac: f64,
    pub k_start_frac: f64,
    pub k_floor_frac: f64,
    pub decay: f64,
    pub interval: u64,
    pub seed: u64,
}

impl ScheduleConfig {
    pub fn new(total_pool: u64) -> Self {
        Self {
            total_pool,
            k_max_frac: 0.95,
            k_start_frac: 0.85,
            k_floor_frac: 0.05,
            decay: 0.05,
            interval: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.k_floor_frac
            && self.k_floor_frac <= self.k_start_frac
            && self.k_start_frac <= self.k_max_frac
            && self.k_max_frac <= 1.0;
        if !ordered {
            return Err(Error::InvalidArgument(format!(
                "schedule fractions must satisfy 0 < floor <= start <= max <= 1 (got {}, {}, {})",
                self.k_floor_frac, self.k_start_frac, self.k_max_frac
            )));
        }
        if self.interval == 0 {
            return Err(Error::InvalidArgument("schedule interval must be at least 1".into()));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule decay must be non-negative, got {}",
                self.decay
            )));
        }
        Ok(())
    }

    pub fn k_max(&self) -> u64 {
        fraction_count(self.k_max_frac, self.total_pool)
    }
}

fn fraction_count(frac: f64, pool: u64) -> u64 {
    (frac * pool as f64).round_ties_even() as u64
}

/// Lower end of the sampling interval at iteration `t`.
pub fn k_min_at(cfg: &ScheduleConfig, t: i64) -> Result<u64> {
    cfg.validate()?;
    if t < 0 {
        return Err(Error::InvalidArgument(format!("iteration must be non-negative, got {t}")));
    }
    let steps = (t as u64 / cfg.interval) as f64;
    let frac = (cfg.k_start_frac - cfg.decay * steps).max(cfg.k_floor_frac);
    Ok(fraction_count(frac, cfg.total_pool))
}

/// Uniform draw from `[k_min_at(t), k_max]`, reproducible per `(seed, t)`.
pub fn sample_k(cfg: &ScheduleConfig, t: i64) -> Result<u64> {
    let lo = k_min_at(cfg, t)?;
    let hi = cfg.k_max().max(lo);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(t as u64);
    Ok(rng.random_range(lo..=hi))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub t: u64,
    pub k_min: u64,
    pub k_max: u64,
    pub sampled_k: u64,
}

/// One row per multiple of the interval in `0..=t_max`.
pub fn schedule_rows(cfg: &ScheduleConfig, t_max: u64) -> Result<Vec<ScheduleRow>> {
    cfg.validate()?;
    (0..=t_max)
        .step_by(cfg.interval as usize)
        .map(|t| {
            Ok(ScheduleRow {
                t,
                k_min: k_min_at(cfg, t as i64)?,
                k_max: cfg.k_max(),
                sampled_k: sample_k(cfg, t as i64)?,
            })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[ScheduleRow]) -> String {
    let mut out = String::from("t,k_min,k_max,sampled_k\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.t, r.k_min, r.k_max, r.sampled_k));
    }
    out
}
