//! Clamp scoring: settling time, overshoot, tracking and feedforward fit,
//! and summary statistics across repeats.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::signals::{moving_average, nrmse, TimeSeries, DEFAULT_SMOOTHING_WINDOW};
use crate::sysid::coefficient_of_variation;

/// Half-width of the settling band in units of the reference force.
pub const SETTLING_BAND: f64 = 0.0025;
pub const DEFAULT_T0: f64 = 0.08;
/// Control objectives: settle within this time and stay under this
/// overshoot.
pub const SETTLING_LIMIT_MS: f64 = 60.0;
pub const OVERSHOOT_LIMIT_PCT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampMetrics {
    /// `None` when the force never settles inside the band.
    pub settling_time_ms: Option<f64>,
    pub overshoot_pct: f64,
    pub nrmse_vs_reference: f64,
    pub nrmse_ff_vs_total: Option<f64>,
    pub shortening_velocity: Option<f64>,
}

impl ClampMetrics {
    pub fn settled(&self) -> bool {
        self.settling_time_ms.is_some()
    }

    /// Settling time for comparisons, with not-settled ranked last.
    pub fn settling_or_inf(&self) -> f64 {
        self.settling_time_ms.unwrap_or(f64::INFINITY)
    }

    /// Settled within [`SETTLING_LIMIT_MS`] and overshoot below
    /// [`OVERSHOOT_LIMIT_PCT`].
    pub fn meets_objectives(&self) -> bool {
        self.settling_or_inf() <= SETTLING_LIMIT_MS && self.overshoot_pct < OVERSHOOT_LIMIT_PCT
    }
}

/// Settling analysis window and filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettlingSpec {
    pub t0: f64,
    pub tf: f64,
    pub band: f64,
    pub filter_window: usize,
}

impl SettlingSpec {
    pub fn new(t0: f64, tf: f64) -> Self {
        Self {
            t0,
            tf,
            band: SETTLING_BAND,
            filter_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

fn window_indices(y: &TimeSeries, t0: f64, tf: f64) -> Result<(usize, usize)> {
    let tol = 1e-9 * y.dt().max(1.0);
    if t0 < y.t_start() - tol || tf > y.t_end() + y.dt() * 1e-6 || !(t0 < tf) {
        return Err(Error::invalid(format!(
            "trace [{}, {}] does not cover the window [{t0}, {tf}]",
            y.t_start(),
            y.t_end()
        )));
    }
    Ok((y.index_at(t0), y.index_at(tf).min(y.len() - 1)))
}

fn normalized_filtered(y: &TimeSeries, f_ref: f64, window: usize) -> Result<TimeSeries> {
    if !(f_ref > 0.0) {
        return Err(Error::invalid(format!("reference force must be positive, got {f_ref}")));
    }
    moving_average(&y.map(|v| v / f_ref)?, window)
}

/// Time from `t0` until the filtered, normalized force stays within
/// `level ± band` through `tf`, in ms. `None` if it never does.
pub fn settling_time(y: &TimeSeries, f_ref: f64, level: f64, spec: &SettlingSpec) -> Result<Option<f64>> {
    if !(spec.band > 0.0) {
        return Err(Error::invalid("settling band must be positive"));
    }
    let (i0, i1) = window_indices(y, spec.t0, spec.tf)?;
    let yf = normalized_filtered(y, f_ref, spec.filter_window)?;
    let v = yf.values();
    let outside = |i: usize| (v[i] - level).abs() > spec.band;
    match (i0..=i1).rev().find(|&i| outside(i)) {
        None => Ok(Some(((yf.time(i0) - spec.t0) * 1e3).max(0.0))),
        Some(i) if i == i1 => Ok(None),
        Some(i) => Ok(Some((yf.time(i + 1) - spec.t0) * 1e3)),
    }
}

/// Overshoot from a normalized minimum force `f_min = F / F_ref`.
pub fn overshoot_from_min(f_min: f64, level_pct: f64) -> Result<f64> {
    if !(level_pct > 0.0 && level_pct < 100.0) {
        return Err(Error::invalid(format!("clamp level {level_pct}% outside (0, 100)")));
    }
    let target = 1.0 - level_pct / 100.0;
    Ok((((1.0 - f_min) - target) / target * 100.0).max(0.0))
}

/// Overshoot of a downward clamp, from the minimum filtered normalized
/// force over `[t0, tf]`. Clipped at 0.
pub fn overshoot(y: &TimeSeries, f_ref: f64, level_pct: f64, spec: &SettlingSpec) -> Result<f64> {
    if !(level_pct > 0.0 && level_pct < 100.0) {
        return Err(Error::invalid(format!("clamp level {level_pct}% outside (0, 100)")));
    }
    let (i0, i1) = window_indices(y, spec.t0, spec.tf)?;
    let yf = normalized_filtered(y, f_ref, spec.filter_window)?;
    let f_min = yf.values()[i0..=i1].iter().copied().fold(f64::INFINITY, f64::min);
    overshoot_from_min(f_min, level_pct)
}

/// NRMSE between the total control effort and the feedforward signal.
pub fn ff_fit(u_total: &TimeSeries, u_ff: &TimeSeries) -> Result<f64> {
    if u_total.len() != u_ff.len() || (u_total.dt() - u_ff.dt()).abs() > 1e-12 {
        return Err(Error::invalid("ff_fit needs signals on the same grid"));
    }
    nrmse(u_total, u_ff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub count: usize,
    pub mean: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    /// `None` for a zero mean.
    pub cv: Option<f64>,
}

/// Mean, Student-t 95% confidence interval and coefficient of variation.
pub fn summarize(samples: &[f64]) -> Result<StatSummary> {
    if samples.len() < 2 {
        return Err(Error::invalid("a summary needs at least two samples"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("summary samples must be finite"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * sd / n.sqrt();
    Ok(StatSummary {
        count: samples.len(),
        mean,
        ci95_low: mean - half,
        ci95_high: mean + half,
        cv: coefficient_of_variation(samples).ok(),
    })
}
