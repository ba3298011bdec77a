//! Reference construction, PI feedback, model-based feedforward, and the
//! two-degree-of-freedom force-clamp loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ff_fit, overshoot, settling_time, ClampMetrics, SettlingSpec};
use crate::models::maxwell::{simulate_inverse, MaxwellParams};
use crate::models::tf::{
    invert_tf, simulate_discrete_tf, to_continuous, to_discrete, Domain, RationalTransferFunction,
};
use crate::plant::{PlantSim, VirtualPlant};
use crate::signals::{
    median_filter, nrmse_slices, TimeSeries, DEFAULT_DELAY_SAMPLES, DEFAULT_DT, DEFAULT_MEDIAN_WINDOW,
};

pub const DEFAULT_T0: f64 = 0.08;
pub const DEFAULT_T1: f64 = 0.1;
pub const DEFAULT_TF: f64 = 0.6;
pub const DEFAULT_SATURATION_V: f64 = 10.0;
pub const DEFAULT_RELEASE_S: f64 = 0.05;
/// Samples averaged to obtain the reference force.
pub const REFERENCE_SAMPLES: usize = 100;
pub const VELOCITY_WINDOW: (f64, f64) = (0.14, 0.19);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    /// Clamp level as a fraction of the reference force.
    pub level: f64,
    #[serde(rename = "F_ref")]
    pub f_ref: f64,
    pub t0: f64,
    pub t1: f64,
    pub tf: f64,
    pub dt: f64,
}

impl ReferenceSpec {
    pub fn new(level: f64, f_ref: f64) -> Result<Self> {
        let s = Self {
            level,
            f_ref,
            t0: DEFAULT_T0,
            t1: DEFAULT_T1,
            tf: DEFAULT_TF,
            dt: DEFAULT_DT,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid(format!("clamp level {} outside (0, 1)", self.level)));
        }
        if !(self.f_ref > 0.0 && self.f_ref.is_finite()) {
            return Err(Error::invalid(format!(
                "reference force {} must be positive",
                self.f_ref
            )));
        }
        if !(0.0 <= self.t0 && self.t0 < self.t1 && self.t1 < self.tf) {
            return Err(Error::invalid("need 0 <= t0 < t1 < tf"));
        }
        if !(self.dt > 0.0 && self.dt < self.t1 - self.t0) {
            return Err(Error::invalid(
                "sample period must be positive and shorter than the ramp",
            ));
        }
        Ok(())
    }

    pub fn level_pct(&self) -> f64 {
        self.level * 100.0
    }

    pub fn settling_spec(&self) -> SettlingSpec {
        SettlingSpec::new(self.t0, self.tf)
    }
}

/// Mean of the last [`REFERENCE_SAMPLES`] force samples.
pub fn reference_force(history: &TimeSeries) -> Result<f64> {
    if history.len() < REFERENCE_SAMPLES {
        return Err(Error::invalid(format!(
            "reference force needs {REFERENCE_SAMPLES} samples, got {}",
            history.len()
        )));
    }
    let tail = &history.values()[history.len() - REFERENCE_SAMPLES..];
    Ok(tail.iter().sum::<f64>() / REFERENCE_SAMPLES as f64)
}

/// Reference force read from a fresh copy of `plant` held isometric: the
/// mean of the last [`REFERENCE_SAMPLES`] measurements before `until`.
/// The measurement noise matches what a clamp on the same plant records.
pub fn measure_reference_force(plant: &VirtualPlant, until: f64) -> Result<f64> {
    let n = (until / plant.dt).round() as usize;
    let mut sim = PlantSim::new(plant);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        ys.push(sim.measure());
        sim.step(0.0)?;
    }
    reference_force(&TimeSeries::new(0.0, plant.dt, ys)?)
}

/// The feedforward as the loop applies it: sample `k` takes `ff[k + lead]`,
/// or 0 while that sample precedes `t0`. The last sample is held at the end.
pub fn applied_feedforward(ff: &TimeSeries, r: &TimeSeries, t0: f64, lead: usize) -> Result<TimeSeries> {
    if ff.len() < r.len() {
        return Err(Error::invalid(format!(
            "feedforward has {} samples, the reference {}",
            ff.len(),
            r.len()
        )));
    }
    let n = r.len();
    let values = (0..n)
        .map(|k| {
            let ahead = (k + lead).min(n - 1);
            if r.time(ahead) >= t0 - 1e-12 {
                ff.values()[ahead]
            } else {
                0.0
            }
        })
        .collect();
    r.with_values(values)
}

/// `F_ref` until `t0`, a linear ramp to `level * F_ref` at `t1`, then held
/// through `tf`.
pub fn build_reference(spec: &ReferenceSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let n = (spec.tf / spec.dt).round() as usize + 1;
    let hi = spec.f_ref;
    let lo = spec.level * spec.f_ref;
    TimeSeries::from_fn(0.0, spec.dt, n, |t| {
        if t <= spec.t0 {
            hi
        } else if t >= spec.t1 {
            lo
        } else {
            hi + (lo - hi) * (t - spec.t0) / (spec.t1 - spec.t0)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PIGains {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
}

impl PIGains {
    pub fn new(kp: f64, ki: f64) -> Result<Self> {
        if !(kp >= 0.0 && ki >= 0.0 && kp.is_finite() && ki.is_finite()) {
            return Err(Error::invalid(format!(
                "PI gains must be nonnegative (kp={kp}, ki={ki})"
            )));
        }
        Ok(Self { kp, ki })
    }

    pub fn zero() -> Self {
        Self { kp: 0.0, ki: 0.0 }
    }
}

/// One PI update with rectangular integration. Returns the feedback
/// command and the new integral state.
pub fn pi_step(gains: &PIGains, error: f64, integral: f64, dt: f64) -> (f64, f64) {
    let integral = integral + error * dt;
    (gains.kp * error + gains.ki * integral, integral)
}

/// Length command that drives the model along `r`, starting at `x0`.
pub fn feedforward_nonlinear(p: &MaxwellParams, r: &TimeSeries, x0: f64) -> Result<TimeSeries> {
    p.check_feasible()?;
    simulate_inverse(p, r, x0)
}

/// Length command from a linear model acting on deviations: the model is
/// inverted (unstable zeros mirrored), discretized at the reference's
/// sample period, driven by `r - r[0]`, and median filtered.
pub fn feedforward_linear(model: &RationalTransferFunction, r: &TimeSeries) -> Result<TimeSeries> {
    let continuous = match model.domain() {
        Domain::Continuous => model.clone(),
        Domain::Discrete { .. } => to_continuous(model)?,
    };
    let mut inverse = invert_tf(&continuous)?;
    // Mirroring a real right-half-plane zero flips the sign of the static
    // gain; the steady command must still be the reference over the gain.
    if inverse.dc_gain() * continuous.dc_gain() < 0.0 {
        inverse = RationalTransferFunction::new(
            inverse.num().iter().map(|b| -b).collect(),
            inverse.den().to_vec(),
            Domain::Continuous,
        )?;
    }
    let inverse = to_discrete(&inverse, r.dt())?;
    let r0 = r.first();
    let dev = r.map(|v| v - r0)?;
    let raw = simulate_discrete_tf(&inverse, &dev)?;
    if raw.len() < DEFAULT_MEDIAN_WINDOW {
        return Ok(raw);
    }
    median_filter(&raw, DEFAULT_MEDIAN_WINDOW)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "fb")]
    Fb,
    #[serde(rename = "ff")]
    Ff,
    #[serde(rename = "fffb")]
    FfFb,
}

impl Mode {
    pub fn uses_feedback(&self) -> bool {
        matches!(self, Mode::Fb | Mode::FfFb)
    }

    pub fn uses_feedforward(&self) -> bool {
        matches!(self, Mode::Ff | Mode::FfFb)
    }

    /// Short name used on the command line and in file names.
    pub fn key(&self) -> &'static str {
        match self {
            Mode::Fb => "fb",
            Mode::Ff => "ff",
            Mode::FfFb => "fffb",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fb => "FB",
            Mode::Ff => "FF",
            Mode::FfFb => "FF+FB",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fb" => Ok(Mode::Fb),
            "ff" => Ok(Mode::Ff),
            "fffb" | "ff+fb" => Ok(Mode::FfFb),
            _ => Err(Error::invalid(format!("unknown control mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelUsed {
    Linear,
    Nonlinear,
    None,
}

impl fmt::Display for ModelUsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelUsed::Linear => "linear",
            ModelUsed::Nonlinear => "nonlinear",
            ModelUsed::None => "none",
        })
    }
}

/// Actuator limits and end-of-clamp behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSettings {
    pub saturation_v: f64,
    pub anti_windup: bool,
    pub release_s: f64,
    /// How many samples ahead of the reference the feedforward is applied.
    /// The model predicts force `delay` samples after the command, and the
    /// loop adds one sample because a command only acts after the force
    /// sample it was computed from.
    #[serde(default = "default_ff_lead")]
    pub ff_lead_samples: usize,
}

fn default_ff_lead() -> usize {
    DEFAULT_FF_LEAD_SAMPLES
}

/// Feedforward lead matching the default I/O delay.
pub const DEFAULT_FF_LEAD_SAMPLES: usize = DEFAULT_DELAY_SAMPLES + 1;

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            saturation_v: DEFAULT_SATURATION_V,
            anti_windup: true,
            release_s: DEFAULT_RELEASE_S,
            ff_lead_samples: DEFAULT_FF_LEAD_SAMPLES,
        }
    }
}

/// Every loop signal of one clamp over `[0, tf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTraces {
    pub r: TimeSeries,
    pub e: TimeSeries,
    pub u_ff: TimeSeries,
    pub u_fb: TimeSeries,
    pub u: TimeSeries,
    /// Plant input after saturation and disturbance.
    pub v: TimeSeries,
    /// Noise-free plant output.
    pub z: TimeSeries,
    pub y: TimeSeries,
    pub d: TimeSeries,
    pub n_meas: TimeSeries,
    /// Actuator position.
    pub length: TimeSeries,
}

impl LoopTraces {
    /// Clamp CSV: `time_s,r_v,y_v,e_v,u_ff_v,u_fb_v,u_v`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        use crate::signals::format_sig9;
        let origin = std::path::Path::new("<clamp>");
        let mut w = csv::Writer::from_writer(writer);
        let fail = |e: csv::Error| Error::format(origin, e.to_string());
        w.write_record(["time_s", "r_v", "y_v", "e_v", "u_ff_v", "u_fb_v", "u_v"])
            .map_err(fail)?;
        for i in 0..self.r.len() {
            w.write_record([
                format_sig9(self.r.time(i)),
                format_sig9(self.r.values()[i]),
                format_sig9(self.y.values()[i]),
                format_sig9(self.e.values()[i]),
                format_sig9(self.u_ff.values()[i]),
                format_sig9(self.u_fb.values()[i]),
                format_sig9(self.u.values()[i]),
            ])
            .map_err(fail)?;
        }
        w.flush().map_err(|e| Error::io(origin, e))
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClampResult {
    pub spec: ReferenceSpec,
    pub traces: LoopTraces,
    pub metrics: ClampMetrics,
    pub mode: Mode,
    pub model_used: ModelUsed,
    /// Length command and measured force during the release ramp after `tf`.
    pub release: Option<(TimeSeries, TimeSeries)>,
}

/// Clamp run that stopped early; carries the traces recorded so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ClampAbort {
    pub reason: String,
    pub time: f64,
    pub partial: LoopTraces,
}

/// Outcome of [`run_clamp`]: a completed clamp or the diagnostic of an
/// aborted one.
pub type ClampOutcome = std::result::Result<ClampResult, Box<ClampAbort>>;

/// Runs one force clamp on a fresh copy of `plant` starting from its
/// isometric state.
///
/// Each tick reads the measured force, updates the PI controller (active
/// from `t0` in modes with feedback), adds the feedforward sample
/// `ff_lead_samples` ahead (zero while that sample precedes `t0`), and applies the saturated command for
/// one sample period. After `tf` control stops and the length returns
/// linearly to 0 V.
pub fn run_clamp(
    plant: &VirtualPlant,
    spec: &ReferenceSpec,
    gains: &PIGains,
    ff: Option<&TimeSeries>,
    mode: Mode,
    model_used: ModelUsed,
    settings: &LoopSettings,
) -> Result<ClampOutcome> {
    spec.validate()?;
    if (plant.dt - spec.dt).abs() > 1e-12 {
        return Err(Error::invalid("plant and reference sample periods differ"));
    }
    let r = build_reference(spec)?;
    let n = r.len();
    let applied_ff = match (mode.uses_feedforward(), ff) {
        (true, Some(f)) => Some(applied_feedforward(f, &r, spec.t0, settings.ff_lead_samples)?),
        (true, None) => return Err(Error::invalid(format!("mode {mode} needs a feedforward signal"))),
        (false, _) => None,
    };
    let mut sim = PlantSim::new(plant);
    let mut cols: [Vec<f64>; 11] = std::array::from_fn(|_| Vec::with_capacity(n));
    let [rc, ec, uffc, ufbc, uc, vc, zc, yc, dc, nc, lc] = &mut cols;
    let mut integral = 0.0;
    let sat = settings.saturation_v;
    let mut abort = None;
    for k in 0..n {
        let t = r.time(k);
        let last = sim.last();
        let y = last.y;
        let e = r.values()[k] - y;
        let active = t >= spec.t0 - 1e-12;
        let u_ff = applied_ff.as_ref().map_or(0.0, |f| f.values()[k]);
        let u_fb = if mode.uses_feedback() && active {
            let (cmd, next) = pi_step(gains, e, integral, spec.dt);
            if settings.anti_windup && (u_ff + cmd).abs() > sat {
                gains.kp * e + gains.ki * integral
            } else {
                integral = next;
                cmd
            }
        } else {
            0.0
        };
        let u = u_ff + u_fb;
        rc.push(r.values()[k]);
        ec.push(e);
        uffc.push(u_ff);
        ufbc.push(u_fb);
        uc.push(u);
        zc.push(last.z);
        yc.push(y);
        dc.push(0.0);
        nc.push(last.n);
        lc.push(last.length);
        let applied = u.clamp(-sat, sat);
        vc.push(applied);
        if k + 1 < n {
            if let Err(err) = sim.step(applied) {
                abort = Some((err.to_string(), t));
                break;
            }
        }
    }
    let series = |v: &mut Vec<f64>| TimeSeries::new(0.0, spec.dt, std::mem::take(v));
    let traces = LoopTraces {
        r: series(rc)?,
        e: series(ec)?,
        u_ff: series(uffc)?,
        u_fb: series(ufbc)?,
        u: series(uc)?,
        v: series(vc)?,
        z: series(zc)?,
        y: series(yc)?,
        d: series(dc)?,
        n_meas: series(nc)?,
        length: series(lc)?,
    };
    if let Some((reason, time)) = abort {
        return Ok(Err(Box::new(ClampAbort {
            reason,
            time,
            partial: traces,
        })));
    }

    // Release: control off, length ramps back to the reference length.
    let steps = (settings.release_s / spec.dt).round() as usize;
    let release = if steps > 0 {
        let start = traces.v.last();
        let mut cmd = Vec::with_capacity(steps);
        let mut force = Vec::with_capacity(steps);
        for i in 1..=steps {
            let c = start * (1.0 - i as f64 / steps as f64);
            cmd.push(c);
            match sim.step(c) {
                Ok(s) => force.push(s.y),
                Err(err) => {
                    let time = sim.time();
                    return Ok(Err(Box::new(ClampAbort {
                        reason: err.to_string(),
                        time,
                        partial: traces,
                    })));
                }
            }
        }
        let t_start = spec.dt * n as f64;
        Some((
            TimeSeries::new(t_start, spec.dt, cmd)?,
            TimeSeries::new(t_start, spec.dt, force)?,
        ))
    } else {
        None
    };

    let metrics = clamp_metrics(&traces, spec, mode)?;
    Ok(Ok(ClampResult {
        spec: *spec,
        traces,
        metrics,
        mode,
        model_used,
        release,
    }))
}

/// Scores a finished clamp from its traces.
pub fn clamp_metrics(traces: &LoopTraces, spec: &ReferenceSpec, mode: Mode) -> Result<ClampMetrics> {
    let s = spec.settling_spec();
    let i0 = traces.y.index_at(spec.t0);
    let nrmse_vs_reference = nrmse_slices(&traces.r.values()[i0..], &traces.y.values()[i0..])?;
    let nrmse_ff_vs_total = if mode.uses_feedforward() {
        Some(ff_fit(&traces.u, &traces.u_ff)?)
    } else {
        None
    };
    let covers = traces.length.t_end() >= VELOCITY_WINDOW.1;
    Ok(ClampMetrics {
        settling_time_ms: settling_time(&traces.y, spec.f_ref, spec.level, &s)?,
        overshoot_pct: overshoot(&traces.y, spec.f_ref, spec.level_pct(), &s)?,
        nrmse_vs_reference,
        nrmse_ff_vs_total,
        shortening_velocity: if covers {
            Some(estimate_shortening_velocity(
                &traces.length,
                VELOCITY_WINDOW.0,
                VELOCITY_WINDOW.1,
            )?)
        } else {
            None
        },
    })
}

/// Least-squares slope of the length trace over `[t3, t4]`, V/s.
pub fn estimate_shortening_velocity(length: &TimeSeries, t3: f64, t4: f64) -> Result<f64> {
    let eps = 1e-9;
    if !(t3 < t4) || t3 < length.t_start() - eps || t4 > length.t_end() + eps {
        return Err(Error::invalid(format!(
            "trace [{}, {}] does not cover [{t3}, {t4}]",
            length.t_start(),
            length.t_end()
        )));
    }
    let (i3, i4) = (length.index_at(t3), length.index_at(t4));
    let pts: Vec<(f64, f64)> = (i3..=i4).map(|i| (length.time(i), length.values()[i])).collect();
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let xm = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|(t, x)| (t - tm) * (x - xm)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - tm).powi(2)).sum();
    Ok(sxy / sxx)
}
