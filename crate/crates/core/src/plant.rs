//! Virtual tissue rig: ground-truth viscoelastic tissue between a length
//! actuator and a force transducer.
//!
//! Signal path per tick: length command, plus input disturbance, through an
//! I/O delay line and a first-order actuator lag, drives the tissue; the
//! tissue force passes a second-order transducer, is scaled by the
//! contractile gain, and picks up seeded measurement noise.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::maxwell::MaxwellParams;
use crate::models::ode::rk4_step;
use crate::signals::{IoRecord, TimeSeries, DEFAULT_DELAY_SAMPLES, DEFAULT_DT};

pub const DEFAULT_TRANSDUCER_HZ: f64 = 140.0;
pub const DEFAULT_TRANSDUCER_DAMPING: f64 = 0.7;
pub const DEFAULT_ACTUATOR_HZ: f64 = 2000.0;
/// Measurement noise as a fraction of the isometric force.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.002;
pub const MAX_BRANCHES: usize = 2;

const SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellBranch {
    /// Spring constant, V/V.
    pub k: f64,
    /// Damping time scale, s.
    pub c: f64,
}

/// Power-law spring in parallel with one or two Maxwell branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueTruth {
    pub k1: f64,
    pub n: f64,
    pub branches: Vec<MaxwellBranch>,
    /// Force at the reference length (x = 0) in the relaxed state, V.
    pub isometric_force: f64,
}

impl TissueTruth {
    pub fn single(p: MaxwellParams, isometric_force: f64) -> Self {
        Self {
            k1: p.k1,
            n: p.n,
            branches: vec![MaxwellBranch { k: p.k2, c: p.c }],
            isometric_force,
        }
    }

    /// The equivalent single-branch parameters, when there is one branch.
    pub fn as_maxwell(&self) -> Option<MaxwellParams> {
        match self.branches.as_slice() {
            [b] => Some(MaxwellParams {
                k1: self.k1,
                k2: b.k,
                c: b.c,
                n: self.n,
            }),
            _ => None,
        }
    }

    pub fn unstrained_length(&self) -> f64 {
        (self.isometric_force / self.k1).powf(1.0 / self.n)
    }

    fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.n >= 1.0 && self.isometric_force > 0.0) {
            return Err(Error::invalid(
                "tissue needs k1 > 0, n >= 1 and a positive isometric force",
            ));
        }
        if self.branches.is_empty() || self.branches.len() > MAX_BRANCHES {
            return Err(Error::invalid(format!(
                "tissue needs 1..={MAX_BRANCHES} Maxwell branches, got {}",
                self.branches.len()
            )));
        }
        if self.branches.iter().any(|b| !(b.k >= 0.0 && b.c > 0.0)) {
            return Err(Error::invalid("branch stiffness must be >= 0 and damping > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transducer {
    pub natural_freq_hz: f64,
    pub damping_ratio: f64,
}

impl Default for Transducer {
    fn default() -> Self {
        Self {
            natural_freq_hz: DEFAULT_TRANSDUCER_HZ,
            damping_ratio: DEFAULT_TRANSDUCER_DAMPING,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conversions {
    pub force_mn_per_v: f64,
    pub length_mm_per_v: f64,
}

impl Default for Conversions {
    fn default() -> Self {
        Self {
            force_mn_per_v: 5.0,
            length_mm_per_v: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantPreset {
    /// One Maxwell branch: the estimation model's own structure.
    Matched,
    /// Two Maxwell branches: richer than the estimation model.
    Mismatched,
    AsmLike,
    FdbLike,
}

impl PlantPreset {
    pub const ALL: [PlantPreset; 4] = [
        PlantPreset::Matched,
        PlantPreset::Mismatched,
        PlantPreset::AsmLike,
        PlantPreset::FdbLike,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PlantPreset::Matched => "matched",
            PlantPreset::Mismatched => "mismatched",
            PlantPreset::AsmLike => "asm-like",
            PlantPreset::FdbLike => "fdb-like",
        }
    }
}

impl fmt::Display for PlantPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlantPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlantPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown plant preset `{s}`")))
    }
}

/// Full description of a virtual rig. Cloneable; each simulation owns its
/// own [`PlantSim`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualPlant {
    pub preset: Option<PlantPreset>,
    pub truth: TissueTruth,
    pub io_delay_samples: usize,
    /// `None` is an ideal (infinitely fast) transducer.
    pub transducer: Option<Transducer>,
    /// `None` is an ideal actuator.
    pub actuator_bandwidth_hz: Option<f64>,
    pub noise_std: f64,
    /// Slow additive drift of the force reading, V/s.
    pub drift_v_per_s: f64,
    pub contractile_gain: f64,
    pub conversions: Conversions,
    pub dt: f64,
    pub seed: u64,
}

impl VirtualPlant {
    /// Default instrumentation around a given tissue.
    pub fn with_truth(truth: TissueTruth, seed: u64) -> Result<Self> {
        let noise_std = DEFAULT_NOISE_FRACTION * truth.isometric_force;
        let plant = Self {
            preset: None,
            truth,
            io_delay_samples: DEFAULT_DELAY_SAMPLES,
            transducer: Some(Transducer::default()),
            actuator_bandwidth_hz: Some(DEFAULT_ACTUATOR_HZ),
            noise_std,
            drift_v_per_s: 0.0,
            contractile_gain: 1.0,
            conversions: Conversions::default(),
            dt: DEFAULT_DT,
            seed,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if !(self.noise_std >= 0.0) {
            return Err(Error::invalid("noise std must be nonnegative"));
        }
        if !(self.contractile_gain > 0.0 && self.contractile_gain <= 1.0) {
            return Err(Error::invalid(format!(
                "contractile gain {} outside (0, 1]",
                self.contractile_gain
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("plant sample period must be positive"));
        }
        if let Some(t) = self.transducer {
            if !(t.natural_freq_hz > 0.0 && t.damping_ratio > 0.0) {
                return Err(Error::invalid("transducer needs positive frequency and damping"));
            }
        }
        if let Some(bw) = self.actuator_bandwidth_hz {
            if !(bw > 0.0) {
                return Err(Error::invalid("actuator bandwidth must be positive"));
            }
        }
        Ok(())
    }

    /// Noise off, no delay, ideal actuator and transducer.
    pub fn ideal(mut self) -> Self {
        self.noise_std = 0.0;
        self.io_delay_samples = 0;
        self.transducer = None;
        self.actuator_bandwidth_hz = None;
        self.drift_v_per_s = 0.0;
        self
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std = 0.0;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Lag between command and measured force seen in recorded data, in
    /// samples: the I/O delay plus the low-frequency group delays of the
    /// actuator (`1/ω_a`) and the transducer (`2ζ/ω_n`).
    pub fn apparent_delay_samples(&self) -> usize {
        let tau = |hz: f64| 1.0 / (2.0 * std::f64::consts::PI * hz);
        let actuator = self.actuator_bandwidth_hz.map_or(0.0, tau);
        let transducer = self
            .transducer
            .map_or(0.0, |t| 2.0 * t.damping_ratio * tau(t.natural_freq_hz));
        self.io_delay_samples + ((actuator + transducer) / self.dt).round() as usize
    }

    pub fn with_delay(mut self, samples: usize) -> Self {
        self.io_delay_samples = samples;
        self
    }

    /// Measured isometric force at the reference length.
    pub fn isometric_force(&self) -> f64 {
        self.contractile_gain * self.truth.isometric_force
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plant: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        plant.validate()?;
        Ok(plant)
    }

    /// Drives a fresh isometric plant open loop with `input` and records the
    /// measured force. Output sample `k` is taken at the end of the tick that
    /// applied input sample `k`, so the recorded delay is exactly
    /// `io_delay_samples`.
    pub fn record(&self, input: &TimeSeries) -> Result<IoRecord> {
        if (input.dt() - self.dt).abs() > 1e-12 {
            return Err(Error::invalid("input sample period differs from the plant's"));
        }
        let mut sim = PlantSim::new(self);
        let mut out = Vec::with_capacity(input.len());
        for &u in input.values() {
            out.push(sim.step(u)?.y);
        }
        IoRecord::new(input.clone(), input.with_values(out)?)
    }
}

/// Builds a preset plant. Tissue parameters are drawn around the estimator's
/// initial guess from `seed`, which also seeds the measurement noise.
pub fn make_plant(preset: PlantPreset, seed: u64) -> Result<VirtualPlant> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7469_7373_7565);
    let mut jitter = |spread: f64| 1.0 + spread * (2.0 * rng.random::<f64>() - 1.0);
    let g = MaxwellParams::INITIAL_GUESS;
    let (k1, k2, c, n) = (
        g.k1 * jitter(0.15),
        g.k2 * jitter(0.2),
        g.c * jitter(0.2),
        g.n * jitter(0.1),
    );
    let f_iso = 2.0 * jitter(0.1);
    let primary = MaxwellBranch { k: k2, c };
    let secondary = MaxwellBranch {
        k: 0.3 * k2,
        c: 5.0 * c,
    };
    let (truth, noise_fraction) = match preset {
        PlantPreset::Matched => (
            TissueTruth {
                k1,
                n,
                branches: vec![primary],
                isometric_force: f_iso,
            },
            DEFAULT_NOISE_FRACTION,
        ),
        PlantPreset::Mismatched => (
            TissueTruth {
                k1,
                n,
                branches: vec![primary, secondary],
                isometric_force: f_iso,
            },
            DEFAULT_NOISE_FRACTION,
        ),
        PlantPreset::AsmLike => (
            TissueTruth {
                k1,
                n,
                branches: vec![primary, secondary],
                isometric_force: 0.75 * f_iso,
            },
            0.0025,
        ),
        PlantPreset::FdbLike => (
            TissueTruth {
                k1: 2.0 * k1,
                n,
                branches: vec![
                    MaxwellBranch { k: 2.0 * k2, c },
                    MaxwellBranch {
                        k: 0.6 * k2,
                        c: 5.0 * c,
                    },
                ],
                isometric_force: 1.5 * f_iso,
            },
            0.004,
        ),
    };
    let mut plant = VirtualPlant::with_truth(truth, seed)?;
    plant.noise_std = noise_fraction * plant.truth.isometric_force;
    plant.preset = Some(preset);
    Ok(plant)
}

/// Scales the tissue's contractile force by `fraction`.
pub fn set_contractile_gain(plant: &VirtualPlant, fraction: f64) -> Result<VirtualPlant> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "contractile fraction {fraction} outside (0, 1]"
        )));
    }
    let mut p = plant.clone();
    p.contractile_gain = fraction;
    Ok(p)
}

/// One tick of plant signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample {
    /// Plant input after the disturbance was added.
    pub v: f64,
    /// Noise-free plant output.
    pub z: f64,
    /// Measurement noise plus drift.
    pub n: f64,
    /// Measured force `z + n`.
    pub y: f64,
    /// Actuator (tissue length) position.
    pub length: f64,
}

// State layout: actuator position, two branch forces, transducer output and
// its rate.
type State = [f64; 5];

/// Running state of a [`VirtualPlant`], starting from isometric steady state
/// at the reference length.
#[derive(Debug, Clone)]
pub struct PlantSim {
    plant: VirtualPlant,
    l0: f64,
    state: State,
    delay_line: VecDeque<f64>,
    held: f64,
    time: f64,
    rng: ChaCha8Rng,
    last: PlantSample,
}

impl PlantSim {
    pub fn new(plant: &VirtualPlant) -> Self {
        let f_iso = plant.truth.isometric_force;
        let z = plant.contractile_gain * f_iso;
        let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
        let n = draw_noise(&mut rng, plant.noise_std);
        Self {
            l0: plant.truth.unstrained_length(),
            state: [0.0, 0.0, 0.0, f_iso, 0.0],
            delay_line: std::iter::repeat_n(0.0, plant.io_delay_samples).collect(),
            held: 0.0,
            time: 0.0,
            rng,
            last: PlantSample {
                v: 0.0,
                z,
                n,
                y: z + n,
                length: 0.0,
            },
            plant: plant.clone(),
        }
    }

    pub fn plant(&self) -> &VirtualPlant {
        &self.plant
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Current measured force, without advancing.
    pub fn measure(&self) -> f64 {
        self.last.y
    }

    pub fn last(&self) -> PlantSample {
        self.last
    }

    /// Applies command `u` for one sample period and returns the signals at
    /// the end of the period.
    pub fn step(&mut self, u: f64) -> Result<PlantSample> {
        self.step_disturbed(u, 0.0)
    }

    pub fn step_disturbed(&mut self, u: f64, disturbance: f64) -> Result<PlantSample> {
        let v = u + disturbance;
        if !v.is_finite() {
            return Err(Error::numeric(self.time, "non-finite plant input"));
        }
        self.delay_line.push_back(v);
        let target = self.delay_line.pop_front().unwrap_or(v);
        let start = self.held;
        self.held = target;

        let dt = self.plant.dt;
        let truth = &self.plant.truth;
        let ideal_actuator = self.plant.actuator_bandwidth_hz.is_none();
        let omega_a = self
            .plant
            .actuator_bandwidth_hz
            .map_or(0.0, |hz| 2.0 * std::f64::consts::PI * hz);
        let (omega_t, zeta) = self.plant.transducer.map_or((0.0, 0.0), |t| {
            (2.0 * std::f64::consts::PI * t.natural_freq_hz, t.damping_ratio)
        });
        let ideal_transducer = self.plant.transducer.is_none();
        let slope = (target - start) / dt;
        let t0 = self.time;
        let l0 = self.l0;
        let n_exp = truth.n;
        let nb = truth.branches.len();

        let deriv = |t: f64, y: &State| -> Result<State> {
            let cmd = start + slope * (t - t0);
            let da = if ideal_actuator { slope } else { omega_a * (cmd - y[0]) };
            let stretch = y[0] + l0;
            if stretch <= 0.0 && n_exp.fract() != 0.0 {
                return Err(Error::numeric(t, format!("slack tissue: x + L0 = {stretch:.6}")));
            }
            let spring = truth.k1 * stretch.powf(n_exp);
            let mut d = [da, 0.0, 0.0, 0.0, 0.0];
            let mut force = spring;
            for (i, b) in truth.branches.iter().enumerate().take(nb) {
                d[1 + i] = b.k * da - b.k / b.c * y[1 + i];
                force += y[1 + i];
            }
            if !ideal_transducer {
                d[3] = y[4];
                d[4] = omega_t * omega_t * (force - y[3]) - 2.0 * zeta * omega_t * y[4];
            }
            Ok(d)
        };

        let h = dt / SUBSTEPS as f64;
        let mut y = self.state;
        for s in 0..SUBSTEPS {
            y = rk4_step(deriv, &y, t0 + s as f64 * h, h)?;
        }
        if ideal_actuator {
            y[0] = target;
        }
        let tissue_force = truth.k1 * (y[0] + l0).powf(n_exp) + y[1] + y[2];
        if ideal_transducer {
            y[3] = tissue_force;
            y[4] = 0.0;
        }
        self.state = y;
        self.time = t0 + dt;

        let z = self.plant.contractile_gain * y[3];
        let n = draw_noise(&mut self.rng, self.plant.noise_std) + self.plant.drift_v_per_s * self.time;
        self.last = PlantSample {
            v,
            z,
            n,
            y: z + n,
            length: y[0],
        };
        Ok(self.last)
    }
}

fn draw_noise<R: Rng>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    if std > 0.0 {
        z * std
    } else {
        0.0
    }
}
