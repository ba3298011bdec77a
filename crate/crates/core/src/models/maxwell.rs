//! First-order Maxwell branch in parallel with a power-law spring.
//!
//! With length deviation `x`, total force `F` and `L = x + L0`:
//!
//! ```text
//! dF/dt = (k2 + k1 n L^(n-1)) dx/dt - (k2 / c) F + (k1 k2 / c) L^n
//! dx/dt = (dF/dt + (k2 / c) F - (k1 k2 / c) L^n) / (k2 + k1 n L^(n-1))
//! ```
//!
//! The branch quantities are recoverable from `(F, x)`: the spring carries
//! `k1 L^n`, the Maxwell branch carries `F2 = F - k1 L^n`, and its spring is
//! stretched by `F2 / k2`.
//!
//! Sampled inputs are treated as piecewise linear between samples, so inside
//! a step the input slope is the difference quotient of the two bracketing
//! samples and the input value at RK4 stages is the linear interpolant.

use serde::{Deserialize, Serialize};

use super::ode::rk4_step;
use crate::error::{Error, Result};
use crate::signals::TimeSeries;

pub const C_MIN: f64 = 1e-4;
pub const C_MAX: f64 = 1.0;

/// Parameters of the nonlinear tissue model. `k1` carries units of
/// V^(1-n), which depend on the exponent; it is stored as a plain number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellParams {
    pub k1: f64,
    pub k2: f64,
    pub c: f64,
    pub n: f64,
}

impl MaxwellParams {
    /// Starting point of the nonlinear estimator.
    pub const INITIAL_GUESS: MaxwellParams = MaxwellParams {
        k1: 10.0,
        k2: 1.0,
        c: 0.01,
        n: 5.0,
    };

    pub fn new(k1: f64, k2: f64, c: f64, n: f64) -> Result<Self> {
        let p = Self { k1, k2, c, n };
        p.check_feasible()?;
        Ok(p)
    }

    /// `k1 >= 0`, `k2 >= 0`, `1e-4 <= c <= 1`, `n >= 1`, `k1 >= k2`.
    pub fn is_feasible(&self) -> bool {
        self.check_feasible().is_ok()
    }

    pub fn check_feasible(&self) -> Result<()> {
        let Self { k1, k2, c, n } = *self;
        if ![k1, k2, c, n].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        if k1 < 0.0 || k2 < 0.0 {
            return Err(Error::invalid(format!(
                "stiffnesses must be nonnegative (k1={k1}, k2={k2})"
            )));
        }
        if !(C_MIN..=C_MAX).contains(&c) {
            return Err(Error::invalid(format!("damping c={c} outside [{C_MIN}, {C_MAX}]")));
        }
        if n < 1.0 {
            return Err(Error::invalid(format!("exponent n={n} below 1")));
        }
        if k1 < k2 {
            return Err(Error::invalid(format!("k1={k1} below k2={k2}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.k1, self.k2, self.c, self.n]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            k1: a[0],
            k2: a[1],
            c: a[2],
            n: a[3],
        }
    }

    /// Spring force and tangent stiffness `(k1 L^n, k1 n L^(n-1))` at
    /// `L = x + L0`.
    #[inline]
    pub fn spring(&self, stretch: f64, time: f64) -> Result<(f64, f64)> {
        if stretch <= 0.0 && self.n.fract() != 0.0 {
            return Err(Error::numeric(
                time,
                format!("slack tissue: x + L0 = {stretch:.6} <= 0 with non-integer n"),
            ));
        }
        let pow_nm1 = stretch.powf(self.n - 1.0);
        Ok((self.k1 * pow_nm1 * stretch, self.k1 * self.n * pow_nm1))
    }

    /// Force the power-law spring settles to at a constant stretch.
    pub fn steady_force(&self, x: f64, l0: f64) -> Result<f64> {
        Ok(self.spring(x + l0, 0.0)?.0)
    }
}

/// Projected unstrained length `L0 = (F0 / k1)^(1/n)`.
pub fn unstrained_length(p: &MaxwellParams, f0: f64) -> Result<f64> {
    if !(f0 > 0.0) {
        return Err(Error::invalid(format!("initial force must be positive, got {f0}")));
    }
    if !(p.k1 > 0.0) {
        return Err(Error::invalid("k1 must be positive to define an unstrained length"));
    }
    if !(p.n > 0.0) {
        return Err(Error::invalid("exponent must be positive"));
    }
    Ok((f0 / p.k1).powf(1.0 / p.n))
}

/// Force response to a length trajectory. `F(t_start) = f0` and `L0` is
/// derived from `f0`.
pub fn simulate_forward(p: &MaxwellParams, x: &TimeSeries, f0: f64) -> Result<TimeSeries> {
    let l0 = unstrained_length(p, f0)?;
    simulate_forward_from(p, x, f0, l0)
}

/// Force response with an explicit unstrained length.
pub fn simulate_forward_from(p: &MaxwellParams, x: &TimeSeries, f0: f64, l0: f64) -> Result<TimeSeries> {
    if !(p.c > 0.0) {
        return Err(Error::invalid("damping must be positive"));
    }
    let h = x.dt();
    let xv = x.values();
    let relax = p.k2 / p.c;
    let mut out = Vec::with_capacity(xv.len());
    let mut f = [f0];
    out.push(f0);
    for k in 0..xv.len() - 1 {
        let tk = x.time(k);
        let slope = (xv[k + 1] - xv[k]) / h;
        let base = xv[k] + l0;
        f = rk4_step(
            |t, y: &[f64; 1]| {
                let (spring, stiffness) = p.spring(base + slope * (t - tk), t)?;
                Ok([(p.k2 + stiffness) * slope - relax * (y[0] - spring)])
            },
            &f,
            tk,
            h,
        )?;
        out.push(f[0]);
    }
    x.with_values(out)
}

/// Length trajectory that produces a force trajectory, with `x(t_start) =
/// x0` and `L0` derived from `F(t_start)`.
pub fn simulate_inverse(p: &MaxwellParams, force: &TimeSeries, x0: f64) -> Result<TimeSeries> {
    let l0 = unstrained_length(p, force.first())?;
    simulate_inverse_from(p, force, x0, l0)
}

pub fn simulate_inverse_from(p: &MaxwellParams, force: &TimeSeries, x0: f64, l0: f64) -> Result<TimeSeries> {
    if !(p.c > 0.0) {
        return Err(Error::invalid("damping must be positive"));
    }
    let h = force.dt();
    let fv = force.values();
    let relax = p.k2 / p.c;
    let mut out = Vec::with_capacity(fv.len());
    let mut x = [x0];
    out.push(x0);
    for k in 0..fv.len() - 1 {
        let tk = force.time(k);
        let slope = (fv[k + 1] - fv[k]) / h;
        let base = fv[k];
        x = rk4_step(
            |t, y: &[f64; 1]| {
                let (spring, stiffness) = p.spring(y[0] + l0, t)?;
                let denom = p.k2 + stiffness;
                if !(denom > 1e-12) {
                    return Err(Error::numeric(
                        t,
                        format!("instantaneous stiffness vanished ({denom:e})"),
                    ));
                }
                let ft = base + slope * (t - tk);
                Ok([(slope + relax * (ft - spring)) / denom])
            },
            &x,
            tk,
            h,
        )?;
        out.push(x[0]);
    }
    force.with_values(out)
}
