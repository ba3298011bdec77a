//! Protocol runner: configuration, the contraction sequences and the
//! FB-only versus FF+FB comparison, run reports and their export.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{
    applied_feedforward, build_reference, feedforward_linear, feedforward_nonlinear, measure_reference_force,
    run_clamp, LoopSettings, LoopTraces, Mode, ModelUsed, PIGains, ReferenceSpec, DEFAULT_RELEASE_S,
    DEFAULT_SATURATION_V, DEFAULT_T0,
};
use crate::error::{Error, Result};
use crate::metrics::{ff_fit, summarize, ClampMetrics, StatSummary};
use crate::models::TissueModel;
use crate::plant::{make_plant, set_contractile_gain, PlantPreset, Transducer, VirtualPlant};
use crate::signals::{format_sig9, IoRecord, DEFAULT_SMOOTHING_WINDOW};
use crate::sysid::{
    design_estimation_input, design_validation_input, fit_nonlinear, parameter_cv, select_linear_order,
    EstimationOptions, FitReport, ModelKind,
};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_LEVELS: [f64; 6] = [0.05, 0.07, 0.10, 0.20, 0.40, 0.80];
pub const DEFAULT_COMPARISON_LEVELS: [f64; 3] = [0.10, 0.07, 0.05];
/// Integral gain of the FF+FB loop, 1/s.
pub const DEFAULT_KI: f64 = 1.0;
/// Integral gain of the FB-only loop, 1/s.
pub const DEFAULT_FB_ONLY_KI: f64 = 20.0;
pub const DEFAULT_REF_LENGTH_V: f64 = 10.0;
pub const METRICS_HEADER: [&str; 7] = [
    "level_pct",
    "mode",
    "settling_ms",
    "overshoot_pct",
    "nrmse_ref",
    "ff_fit",
    "seed",
];
const MISSING: &str = "NA";
const SINGLE_MODE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    C1,
    C2,
    Compare,
    /// A lone clamp outside any protocol.
    Clamp,
}

impl Protocol {
    pub fn key(&self) -> &'static str {
        match self {
            Protocol::C1 => "c1",
            Protocol::C2 => "c2",
            Protocol::Compare => "compare",
            Protocol::Clamp => "clamp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c1" => Ok(Protocol::C1),
            "c2" => Ok(Protocol::C2),
            "compare" => Ok(Protocol::Compare),
            _ => Err(Error::invalid(format!("unknown protocol `{s}` (c1, c2, compare)"))),
        }
    }
}

/// Which virtual tissue to build, plus optional instrument overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub preset: PlantPreset,
    pub seed: u64,
    /// Fraction of the full contractile force the tissue develops.
    pub contractile_gain: f64,
    pub noise_std: Option<f64>,
    pub transducer_damping: Option<f64>,
    pub io_delay_samples: Option<usize>,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            preset: PlantPreset::Matched,
            seed: 1,
            contractile_gain: 1.0,
            noise_std: None,
            transducer_damping: None,
            io_delay_samples: None,
        }
    }
}

impl PlantConfig {
    pub fn build(&self) -> Result<VirtualPlant> {
        let mut plant = make_plant(self.preset, self.seed)?;
        if let Some(std) = self.noise_std {
            plant.noise_std = std;
        }
        if let Some(zeta) = self.transducer_damping {
            let t = plant.transducer.unwrap_or_default();
            plant.transducer = Some(Transducer {
                damping_ratio: zeta,
                ..t
            });
        }
        if let Some(d) = self.io_delay_samples {
            plant.io_delay_samples = d;
        }
        let plant = if self.contractile_gain != 1.0 {
            set_contractile_gain(&plant, self.contractile_gain)?
        } else {
            plant
        };
        plant.validate()?;
        Ok(plant)
    }
}

/// Nonlinear estimator settings. A missing `delay_samples` means the
/// plant's apparent delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub delay_samples: Option<usize>,
    pub fix_c: Option<f64>,
    pub regularization_alpha: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub smoothing_window: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        let d = EstimationOptions::nonlinear();
        Self {
            delay_samples: None,
            fix_c: d.fix_c,
            regularization_alpha: d.regularization_alpha,
            max_iterations: d.max_iterations,
            tolerance: d.tolerance,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

impl EstimationConfig {
    pub fn resolve_delay(&self, plant: &VirtualPlant) -> usize {
        self.delay_samples.unwrap_or_else(|| plant.apparent_delay_samples())
    }

    pub fn options(&self, delay_samples: usize) -> EstimationOptions {
        EstimationOptions {
            fix_c: self.fix_c,
            regularization_alpha: self.regularization_alpha,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            smoothing_window: self.smoothing_window,
            delay_samples,
            ..EstimationOptions::nonlinear()
        }
    }
}

/// Everything a protocol run depends on. Loaded from and echoed to JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub version: u32,
    /// Base seed; every recording and clamp derives its own seed from it.
    pub seed: u64,
    pub plant: PlantConfig,
    pub levels: Vec<f64>,
    pub repeats: usize,
    pub randomize_order: bool,
    pub order_seed: u64,
    pub modes: Vec<Mode>,
    pub gains: PIGains,
    pub fb_only_gains: PIGains,
    /// Model used for the feedforward.
    pub model: ModelKind,
    pub estimation: EstimationConfig,
    pub ref_length_volts: f64,
    /// Extra nonlinear estimations before the one that is used.
    pub repeat_estimations: usize,
    pub post_hoc_linear: bool,
    /// One FF-only and one FB-only clamp just before the 5% block.
    pub single_mode_clamps: bool,
    /// Open-loop resend of the previous 5% control effort after the 5% block.
    pub replay_stage: bool,
    pub comparison_levels: Vec<f64>,
    pub comparison_repeats: usize,
    pub saturation_v: f64,
    pub anti_windup: bool,
    pub release_s: f64,
    /// Defaults to the estimation delay plus one sample.
    pub ff_lead_samples: Option<usize>,
    pub parallel: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            plant: PlantConfig::default(),
            levels: DEFAULT_LEVELS.to_vec(),
            repeats: 3,
            randomize_order: true,
            order_seed: 0,
            modes: vec![Mode::FfFb],
            gains: PIGains {
                kp: 0.0,
                ki: DEFAULT_KI,
            },
            fb_only_gains: PIGains {
                kp: 0.0,
                ki: DEFAULT_FB_ONLY_KI,
            },
            model: ModelKind::Nonlinear,
            estimation: EstimationConfig::default(),
            ref_length_volts: DEFAULT_REF_LENGTH_V,
            repeat_estimations: 2,
            post_hoc_linear: true,
            single_mode_clamps: true,
            replay_stage: false,
            comparison_levels: DEFAULT_COMPARISON_LEVELS.to_vec(),
            comparison_repeats: 10,
            saturation_v: DEFAULT_SATURATION_V,
            anti_windup: true,
            release_s: DEFAULT_RELEASE_S,
            ff_lead_samples: None,
            parallel: false,
            out_dir: None,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        for &l in self.levels.iter().chain(&self.comparison_levels) {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("clamp level {l} outside (0, 1)")));
            }
        }
        if self.repeats == 0 || self.comparison_repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no control modes selected".into()));
        }
        if !(self.ref_length_volts > 0.0) {
            return Err(Error::Config("reference length must be positive".into()));
        }
        if !(self.saturation_v > 0.0 && self.release_s >= 0.0) {
            return Err(Error::Config(
                "saturation must be positive and release time nonnegative".into(),
            ));
        }
        PIGains::new(self.gains.kp, self.gains.ki).map_err(|e| Error::Config(e.to_string()))?;
        PIGains::new(self.fb_only_gains.kp, self.fb_only_gains.ki).map_err(|e| Error::Config(e.to_string()))?;
        self.estimation
            .options(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.plant.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loop settings with the lead resolved against an estimation delay.
    pub fn loop_settings(&self, estimation_delay: usize) -> LoopSettings {
        LoopSettings {
            saturation_v: self.saturation_v,
            anti_windup: self.anti_windup,
            release_s: self.release_s,
            ff_lead_samples: self.ff_lead_samples.unwrap_or(estimation_delay + 1),
        }
    }
}

/// A named fit produced during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: String,
    pub fit: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub reason: String,
}

/// One clamp of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampRecord {
    pub protocol: Protocol,
    pub index: usize,
    pub stage: String,
    pub level: f64,
    pub mode: Mode,
    pub seed: u64,
    pub f_ref: Option<f64>,
    pub metrics: Option<ClampMetrics>,
    pub abort: Option<String>,
    /// Fit of the linear model's feedforward to this clamp's total effort.
    pub linear_ff_fit: Option<f64>,
    #[serde(skip)]
    pub traces: Option<LoopTraces>,
}

impl ClampRecord {
    pub fn trace_file_name(&self) -> String {
        format!(
            "{}_{}_{}_{}.csv",
            self.protocol.key(),
            format_level(self.level),
            self.mode.key(),
            self.seed
        )
    }
}

/// Statistics over the clamps of one level and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level_pct: f64,
    pub mode: Mode,
    pub clamps: usize,
    pub settled: usize,
    pub objectives_met: usize,
    pub settling_ms: Option<StatSummary>,
    pub overshoot_pct: Option<StatSummary>,
    pub nrmse_ref: Option<StatSummary>,
}

/// FB-only and FF+FB clamps run on the same plant noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub level_pct: f64,
    pub seed: u64,
    pub settling_fb_ms: Option<f64>,
    pub settling_fffb_ms: Option<f64>,
    pub overshoot_fb_pct: Option<f64>,
    pub overshoot_fffb_pct: Option<f64>,
}

impl PairedRow {
    /// FF+FB settled strictly faster; a clamp that never settles ranks last.
    pub fn fffb_faster(&self) -> bool {
        let rank = |s: Option<f64>| s.unwrap_or(f64::INFINITY);
        self.settling_fffb_ms.is_some() && rank(self.settling_fffb_ms) < rank(self.settling_fb_ms)
    }
}

/// Coefficient of variation of each parameter over repeated estimations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterCv {
    pub k1: f64,
    pub k2: f64,
    pub c: f64,
    pub n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub protocol: Protocol,
    pub tool_version: String,
    pub config: ProtocolConfig,
    pub plant: VirtualPlant,
    pub estimation_delay_samples: usize,
    pub ff_lead_samples: usize,
    pub fits: Vec<StageFit>,
    /// Stage name of the fit driving the feedforward.
    pub model_stage: Option<String>,
    pub parameter_cv: Option<ParameterCv>,
    pub clamps: Vec<ClampRecord>,
    pub summaries: Vec<LevelSummary>,
    pub pairs: Vec<PairedRow>,
    pub failures: Vec<StageFailure>,
}

impl RunReport {
    fn new(protocol: Protocol, config: &ProtocolConfig, plant: VirtualPlant, delay: usize) -> Self {
        Self {
            protocol,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            plant,
            estimation_delay_samples: delay,
            ff_lead_samples: config.loop_settings(delay).ff_lead_samples,
            fits: Vec::new(),
            model_stage: None,
            parameter_cv: None,
            clamps: Vec::new(),
            summaries: Vec::new(),
            pairs: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.clamps.iter().all(|c| c.abort.is_none())
    }

    pub fn fit(&self, stage: &str) -> Option<&FitReport> {
        self.fits.iter().find(|f| f.stage == stage).map(|f| &f.fit)
    }

    /// The fit driving the feedforward, if estimation succeeded.
    pub fn model_fit(&self) -> Option<&FitReport> {
        self.model_stage.as_deref().and_then(|s| self.fit(s))
    }

    pub fn clamps_for(&self, level: f64, mode: Mode) -> impl Iterator<Item = &ClampRecord> {
        self.clamps
            .iter()
            .filter(move |c| c.mode == mode && (c.level - level).abs() < 1e-9)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn fail(&mut self, stage: &str, err: impl fmt::Display) {
        self.failures.push(StageFailure {
            stage: stage.to_string(),
            reason: err.to_string(),
        });
    }

    fn finish(mut self) -> Self {
        self.summaries = summarize_levels(&self.clamps);
        self
    }
}

/// Level as a percentage without float noise: `0.07` gives `7`.
pub fn format_level(level: f64) -> String {
    let pct = (level * 100.0 * 1e6).round() / 1e6;
    format!("{pct}")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `stream` under base seed `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

// Stream numbers for derived seeds.
const LINEAR_INPUT: u64 = 1;
const VALIDATION_INPUT: u64 = 2;
const NONLINEAR_INPUT: u64 = 100;
const CLAMP: u64 = 10_000;

struct Recordings {
    linear: Option<IoRecord>,
    validation: Option<IoRecord>,
}

fn record_stage(
    report: &mut RunReport,
    plant: &VirtualPlant,
    config: &ProtocolConfig,
    stage: &str,
    kind: ModelKind,
    stream: u64,
) -> Option<IoRecord> {
    let seed = derive_seed(config.seed, stream);
    let input = if stage == "validation" {
        design_validation_input(config.ref_length_volts, plant.dt, seed)
    } else {
        design_estimation_input(kind, config.ref_length_volts, plant.dt, seed)
    };
    match input.and_then(|u| plant.clone().with_seed(seed).record(&u)) {
        Ok(io) => Some(io),
        Err(e) => {
            report.fail(stage, e);
            None
        }
    }
}

fn nonlinear_stage(
    report: &mut RunReport,
    plant: &VirtualPlant,
    config: &ProtocolConfig,
    validation: Option<&IoRecord>,
    stage: &str,
    stream: u64,
) -> Option<MaxwellFit> {
    let io = record_stage(report, plant, config, stage, ModelKind::Nonlinear, stream)?;
    let opts = config.estimation.options(report.estimation_delay_samples);
    match fit_nonlinear(&io, validation, &opts) {
        Ok(mut fit) => {
            fit.seed = Some(derive_seed(config.seed, stream));
            report.fits.push(StageFit {
                stage: stage.to_string(),
                fit: fit.clone(),
            });
            Some(MaxwellFit {
                stage: stage.to_string(),
                fit,
            })
        }
        Err(e) => {
            report.fail(stage, e);
            None
        }
    }
}

struct MaxwellFit {
    stage: String,
    fit: FitReport,
}

fn linear_stage(report: &mut RunReport, rec: &Recordings, config: &ProtocolConfig) -> Option<FitReport> {
    let (Some(est), Some(val)) = (&rec.linear, &rec.validation) else {
        report.fail("linear", "estimation or validation recording missing");
        return None;
    };
    match select_linear_order(est, val, report.estimation_delay_samples) {
        Ok((_, mut fit)) => {
            fit.seed = Some(derive_seed(config.seed, LINEAR_INPUT));
            report.fits.push(StageFit {
                stage: "linear".into(),
                fit: fit.clone(),
            });
            Some(fit)
        }
        Err(e) => {
            report.fail("linear", e);
            None
        }
    }
}

/// One clamp to run.
#[derive(Debug, Clone)]
struct ClampJob {
    stage: String,
    level: f64,
    mode: Mode,
    seed: u64,
}

struct ClampContext<'a> {
    protocol: Protocol,
    plant: &'a VirtualPlant,
    model: Option<&'a TissueModel>,
    gains: PIGains,
    fb_only_gains: PIGains,
    settings: LoopSettings,
    parallel: bool,
}

impl<'a> ClampContext<'a> {
    fn new(
        protocol: Protocol,
        plant: &'a VirtualPlant,
        model: Option<&'a TissueModel>,
        config: &ProtocolConfig,
        settings: LoopSettings,
    ) -> Self {
        Self {
            protocol,
            plant,
            model,
            gains: config.gains,
            fb_only_gains: config.fb_only_gains,
            settings,
            parallel: config.parallel,
        }
    }
}

fn feedforward_for(model: &TissueModel, r: &crate::signals::TimeSeries) -> Result<crate::signals::TimeSeries> {
    match model {
        TissueModel::Nonlinear(m) => feedforward_nonlinear(&m.params, r, 0.0),
        TissueModel::Linear(tf) => feedforward_linear(tf, r),
    }
}

fn execute_clamp(ctx: &ClampContext, index: usize, job: &ClampJob) -> ClampRecord {
    let mut rec = ClampRecord {
        protocol: ctx.protocol,
        index,
        stage: job.stage.clone(),
        level: job.level,
        mode: job.mode,
        seed: job.seed,
        f_ref: None,
        metrics: None,
        abort: None,
        linear_ff_fit: None,
        traces: None,
    };
    let plant = ctx.plant.clone().with_seed(job.seed);
    let lead_time = ctx.settings.ff_lead_samples as f64 * plant.dt;
    let attempt = (|| -> Result<()> {
        let f_ref = measure_reference_force(&plant, (DEFAULT_T0 - lead_time).max(0.0))?;
        rec.f_ref = Some(f_ref);
        let spec = ReferenceSpec::new(job.level, f_ref)?;
        let (ff, used) = if job.mode.uses_feedforward() {
            let model = ctx
                .model
                .ok_or_else(|| Error::invalid("no model available for the feedforward"))?;
            let used = match model {
                TissueModel::Nonlinear(_) => ModelUsed::Nonlinear,
                TissueModel::Linear(_) => ModelUsed::Linear,
            };
            (Some(feedforward_for(model, &build_reference(&spec)?)?), used)
        } else {
            (None, ModelUsed::None)
        };
        let gains = if job.mode == Mode::Fb {
            ctx.fb_only_gains
        } else {
            ctx.gains
        };
        match run_clamp(&plant, &spec, &gains, ff.as_ref(), job.mode, used, &ctx.settings)? {
            Ok(res) => {
                rec.metrics = Some(res.metrics);
                rec.traces = Some(res.traces);
            }
            Err(abort) => {
                rec.abort = Some(format!("{} (t = {:.4} s)", abort.reason, abort.time));
                rec.traces = Some(abort.partial);
            }
        }
        Ok(())
    })();
    if let Err(e) = attempt {
        rec.abort = Some(e.to_string());
    }
    rec
}

/// Runs jobs in order, or spread over threads when `parallel` is set.
/// Results keep the job order either way.
fn run_jobs(ctx: &ClampContext, jobs: &[ClampJob], first_index: usize) -> Vec<ClampRecord> {
    if !ctx.parallel || jobs.len() < 2 {
        return jobs
            .iter()
            .enumerate()
            .map(|(i, j)| execute_clamp(ctx, first_index + i, j))
            .collect();
    }
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ClampRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let rec = execute_clamp(ctx, first_index + i, &jobs[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(rec);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .flatten()
        .collect()
}

fn level_order(config: &ProtocolConfig) -> Vec<f64> {
    let mut levels = config.levels.clone();
    if config.randomize_order {
        levels.shuffle(&mut ChaCha8Rng::seed_from_u64(config.order_seed));
    }
    levels
}

fn clamp_schedule(config: &ProtocolConfig, repeats: usize, extras: bool) -> Vec<ClampJob> {
    let mut jobs = Vec::new();
    let push = |stage: &str, level: f64, mode: Mode, jobs: &mut Vec<ClampJob>| {
        let seed = derive_seed(config.seed, CLAMP + jobs.len() as u64);
        jobs.push(ClampJob {
            stage: stage.to_string(),
            level,
            mode,
            seed,
        });
    };
    for level in level_order(config) {
        if extras && (level - SINGLE_MODE_LEVEL).abs() < 1e-12 {
            push("ff-only", level, Mode::Ff, &mut jobs);
            push("fb-only", level, Mode::Fb, &mut jobs);
        }
        for &mode in &config.modes {
            for _ in 0..repeats {
                push("block", level, mode, &mut jobs);
            }
        }
    }
    jobs
}

/// One clamp at `level` on `plant` seeded with `seed`, outside any
/// protocol. `model` is required for the feedforward modes.
pub fn single_clamp(
    plant: &VirtualPlant,
    model: Option<&TissueModel>,
    level: f64,
    mode: Mode,
    gains: PIGains,
    settings: LoopSettings,
    seed: u64,
) -> ClampRecord {
    let ctx = ClampContext {
        protocol: Protocol::Clamp,
        plant,
        model,
        gains,
        fb_only_gains: gains,
        settings,
        parallel: false,
    };
    let job = ClampJob {
        stage: "clamp".into(),
        level,
        mode,
        seed,
    };
    execute_clamp(&ctx, 0, &job)
}

/// Open-loop resend of the last completed 5% FF+FB control effort.
fn replay_clamp(ctx: &ClampContext, clamps: &[ClampRecord]) -> Option<ClampRecord> {
    let source = clamps.iter().rev().find(|c| {
        c.mode == Mode::FfFb && (c.level - SINGLE_MODE_LEVEL).abs() < 1e-12 && c.traces.is_some() && c.abort.is_none()
    })?;
    let traces = source.traces.as_ref()?;
    let mut rec = ClampRecord {
        stage: "replay".into(),
        mode: Mode::Ff,
        index: clamps.len(),
        abort: None,
        metrics: None,
        linear_ff_fit: None,
        traces: None,
        ..source.clone()
    };
    let settings = LoopSettings {
        ff_lead_samples: 0,
        ..ctx.settings
    };
    let plant = ctx.plant.clone().with_seed(source.seed);
    let outcome = ReferenceSpec::new(source.level, source.f_ref?).and_then(|spec| {
        run_clamp(
            &plant,
            &spec,
            &PIGains::zero(),
            Some(&traces.u),
            Mode::Ff,
            ModelUsed::None,
            &settings,
        )
    });
    match outcome {
        Ok(Ok(res)) => {
            rec.metrics = Some(res.metrics);
            rec.traces = Some(res.traces);
        }
        Ok(Err(abort)) => {
            rec.abort = Some(abort.reason.clone());
            rec.traces = Some(abort.partial);
        }
        Err(e) => rec.abort = Some(e.to_string()),
    }
    Some(rec)
}

/// NRMSE of the linear model's feedforward, applied as the loop would
/// apply it, against the total effort of each FF+FB clamp.
fn attach_linear_ff_fit(clamps: &mut [ClampRecord], linear: &TissueModel, settings: &LoopSettings) {
    for c in clamps.iter_mut().filter(|c| c.mode == Mode::FfFb) {
        let (Some(traces), Some(f_ref)) = (&c.traces, c.f_ref) else {
            continue;
        };
        let fit = ReferenceSpec::new(c.level, f_ref).and_then(|spec| {
            let r = build_reference(&spec)?;
            let ff = applied_feedforward(&feedforward_for(linear, &r)?, &r, spec.t0, settings.ff_lead_samples)?;
            let n = traces.u.len();
            ff_fit(&traces.u, &ff.slice(0, n)?)
        });
        c.linear_ff_fit = fit.ok();
    }
}

fn summarize_levels(clamps: &[ClampRecord]) -> Vec<LevelSummary> {
    let mut groups: BTreeMap<(i64, &'static str), Vec<&ClampRecord>> = BTreeMap::new();
    for c in clamps {
        let key = ((c.level * 1e9).round() as i64, c.mode.key());
        groups.entry(key).or_default().push(c);
    }
    let stat = |xs: Vec<f64>| summarize(&xs).ok();
    groups
        .into_values()
        .map(|cs| {
            let mode = cs[0].mode;
            let done: Vec<&ClampMetrics> = cs.iter().filter_map(|c| c.metrics.as_ref()).collect();
            LevelSummary {
                level_pct: cs[0].level * 100.0,
                mode,
                clamps: cs.len(),
                settled: done.iter().filter(|m| m.settled()).count(),
                objectives_met: done.iter().filter(|m| m.meets_objectives()).count(),
                settling_ms: stat(done.iter().filter_map(|m| m.settling_time_ms).collect()),
                overshoot_pct: stat(done.iter().map(|m| m.overshoot_pct).collect()),
                nrmse_ref: stat(done.iter().map(|m| m.nrmse_vs_reference).collect()),
            }
        })
        .collect()
}

fn prepare(protocol: Protocol, config: &ProtocolConfig) -> Result<RunReport> {
    config.validate()?;
    let plant = config.plant.build()?;
    let delay = config.estimation.resolve_delay(&plant);
    Ok(RunReport::new(protocol, config, plant, delay))
}

/// The first contraction: linear, validation and repeated nonlinear
/// recordings, then randomized force-clamp blocks with the model from the
/// last nonlinear estimation.
pub fn run_contraction1(config: &ProtocolConfig) -> Result<RunReport> {
    let mut report = prepare(Protocol::C1, config)?;
    let plant = report.plant.clone();

    let needs_linear = config.post_hoc_linear || config.model == ModelKind::Linear;
    let linear = if needs_linear {
        record_stage(
            &mut report,
            &plant,
            config,
            "linear-input",
            ModelKind::Linear,
            LINEAR_INPUT,
        )
    } else {
        None
    };
    let validation = record_stage(
        &mut report,
        &plant,
        config,
        "validation",
        ModelKind::Nonlinear,
        VALIDATION_INPUT,
    );
    let rec = Recordings { linear, validation };

    let mut nonlinear = Vec::new();
    for i in 0..=config.repeat_estimations {
        let stage = if i == config.repeat_estimations {
            "nonlinear".to_string()
        } else {
            format!("nonlinear-repeat-{}", i + 1)
        };
        if let Some(f) = nonlinear_stage(
            &mut report,
            &plant,
            config,
            rec.validation.as_ref(),
            &stage,
            NONLINEAR_INPUT + i as u64,
        ) {
            nonlinear.push(f);
        }
    }
    let estimates: Vec<_> = nonlinear.iter().filter_map(|f| f.fit.nonlinear_params()).collect();
    if estimates.len() >= 2 {
        match parameter_cv(&estimates) {
            Ok([k1, k2, c, n]) => report.parameter_cv = Some(ParameterCv { k1, k2, c, n }),
            Err(e) => report.fail("parameter-cv", e),
        }
    }
    let linear_fit = if needs_linear {
        linear_stage(&mut report, &rec, config)
    } else {
        None
    };

    let model = match config.model {
        ModelKind::Nonlinear => nonlinear
            .iter()
            .find(|f| f.stage == "nonlinear")
            .map(|f| (f.stage.clone(), f.fit.model.clone())),
        ModelKind::Linear => linear_fit.as_ref().map(|f| ("linear".to_string(), f.model.clone())),
    };
    report.model_stage = model.as_ref().map(|(s, _)| s.clone());

    let settings = config.loop_settings(report.estimation_delay_samples);
    let ctx = ClampContext::new(Protocol::C1, &plant, model.as_ref().map(|(_, m)| m), config, settings);
    let jobs = clamp_schedule(config, config.repeats, config.single_mode_clamps);
    let mut clamps = Vec::new();
    let split = jobs
        .iter()
        .rposition(|j| (j.level - SINGLE_MODE_LEVEL).abs() < 1e-12)
        .filter(|_| config.replay_stage);
    match split {
        Some(at) => {
            clamps.extend(run_jobs(&ctx, &jobs[..=at], 0));
            if let Some(r) = replay_clamp(&ctx, &clamps) {
                clamps.push(r);
            }
            let first = clamps.len();
            clamps.extend(run_jobs(&ctx, &jobs[at + 1..], first));
        }
        None => clamps.extend(run_jobs(&ctx, &jobs, 0)),
    }
    if let (true, Some(lf)) = (config.post_hoc_linear, &linear_fit) {
        attach_linear_ff_fit(&mut clamps, &lf.model, &settings);
    }
    report.clamps = clamps;
    Ok(report.finish())
}

/// A later contraction: one clamp per level with a model estimated
/// earlier, on the plant described by `config`.
pub fn run_contraction2(config: &ProtocolConfig, fit: &FitReport) -> Result<RunReport> {
    let mut report = prepare(Protocol::C2, config)?;
    report.estimation_delay_samples = fit.options.delay_samples;
    let settings = config.loop_settings(fit.options.delay_samples);
    report.ff_lead_samples = settings.ff_lead_samples;
    report.fits.push(StageFit {
        stage: "frozen".into(),
        fit: fit.clone(),
    });
    report.model_stage = Some("frozen".into());
    let plant = report.plant.clone();
    let ctx = ClampContext::new(Protocol::C2, &plant, Some(&fit.model), config, settings);
    let jobs = clamp_schedule(config, 1, false);
    report.clamps = run_jobs(&ctx, &jobs, 0);
    Ok(report.finish())
}

/// Paired FB-only and FF+FB clamps at the comparison levels, each pair on
/// the same noise seed.
pub fn run_comparison(config: &ProtocolConfig) -> Result<RunReport> {
    let mut report = prepare(Protocol::Compare, config)?;
    let plant = report.plant.clone();
    let validation = record_stage(
        &mut report,
        &plant,
        config,
        "validation",
        ModelKind::Nonlinear,
        VALIDATION_INPUT,
    );
    let fit = nonlinear_stage(
        &mut report,
        &plant,
        config,
        validation.as_ref(),
        "nonlinear",
        NONLINEAR_INPUT,
    );
    report.model_stage = fit.as_ref().map(|f| f.stage.clone());
    let settings = config.loop_settings(report.estimation_delay_samples);
    let ctx = ClampContext::new(
        Protocol::Compare,
        &plant,
        fit.as_ref().map(|f| &f.fit.model),
        config,
        settings,
    );
    let mut jobs = Vec::new();
    for &level in &config.comparison_levels {
        for _ in 0..config.comparison_repeats {
            let seed = derive_seed(config.seed, CLAMP + (jobs.len() / 2) as u64);
            for mode in [Mode::Fb, Mode::FfFb] {
                jobs.push(ClampJob {
                    stage: "pair".into(),
                    level,
                    mode,
                    seed,
                });
            }
        }
    }
    let clamps = run_jobs(&ctx, &jobs, 0);
    report.pairs = clamps
        .chunks(2)
        .map(|p| PairedRow {
            level_pct: p[0].level * 100.0,
            seed: p[0].seed,
            settling_fb_ms: p[0].metrics.and_then(|m| m.settling_time_ms),
            settling_fffb_ms: p[1].metrics.and_then(|m| m.settling_time_ms),
            overshoot_fb_pct: p[0].metrics.map(|m| m.overshoot_pct),
            overshoot_fffb_pct: p[1].metrics.map(|m| m.overshoot_pct),
        })
        .collect();
    report.clamps = clamps;
    Ok(report.finish())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| MISSING.to_string(), format_sig9)
}

/// Metrics table, one row per clamp in run order.
pub fn write_metrics_csv<W: std::io::Write>(report: &RunReport, writer: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::invalid(format!("metrics csv: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for c in &report.clamps {
        let m = c.metrics.as_ref();
        w.write_record([
            format_level(c.level),
            c.mode.key().to_string(),
            opt(m.and_then(|m| m.settling_time_ms)),
            opt(m.map(|m| m.overshoot_pct)),
            opt(m.map(|m| m.nrmse_vs_reference)),
            opt(m.and_then(|m| m.nrmse_ff_vs_total)),
            c.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("metrics csv: {e}")))
}

fn stat_text(s: &Option<StatSummary>) -> String {
    match s {
        Some(s) => format!(
            "{} [{}, {}]",
            format_sig9(s.mean),
            format_sig9(s.ci95_low),
            format_sig9(s.ci95_high)
        ),
        None => MISSING.to_string(),
    }
}

/// Human-readable run summary.
pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "protocol {} (viscoclamp {})", report.protocol, report.tool_version);
    let p = &report.config.plant;
    let _ = writeln!(
        s,
        "plant {} seed {} contractile gain {} noise std {} V, io delay {} samples",
        p.preset,
        p.seed,
        format_sig9(report.plant.contractile_gain),
        format_sig9(report.plant.noise_std),
        report.plant.io_delay_samples
    );
    if let Some(t) = report.plant.transducer {
        let _ = writeln!(
            s,
            "transducer {} Hz, damping {}",
            format_sig9(t.natural_freq_hz),
            format_sig9(t.damping_ratio)
        );
    }
    let _ = writeln!(
        s,
        "estimation delay {} samples, feedforward lead {} samples",
        report.estimation_delay_samples, report.ff_lead_samples
    );
    let _ = writeln!(s, "\nfits");
    for f in &report.fits {
        let params = match &f.fit.model {
            TissueModel::Nonlinear(m) => format!(
                "k1={} k2={} c={} n={}",
                format_sig9(m.params.k1),
                format_sig9(m.params.k2),
                format_sig9(m.params.c),
                format_sig9(m.params.n)
            ),
            TissueModel::Linear(tf) => format!("linear order {}", tf.order()),
        };
        let _ = writeln!(
            s,
            "  {:<20} {params}  est nrmse {}  val nrmse {}",
            f.stage,
            format_sig9(f.fit.estimation_nrmse),
            opt(f.fit.validation_nrmse)
        );
    }
    if let Some(cv) = report.parameter_cv {
        let _ = writeln!(
            s,
            "  parameter CV: k1={} k2={} c={} n={}",
            format_sig9(cv.k1),
            format_sig9(cv.k2),
            format_sig9(cv.c),
            format_sig9(cv.n)
        );
    }
    let _ = writeln!(s, "\nlevels (mean [95% CI], or the single value)");
    for l in &report.summaries {
        let single = |stat: &Option<StatSummary>, pick: fn(&ClampMetrics) -> Option<f64>| match stat {
            Some(_) => stat_text(stat),
            None => {
                let vals: Vec<f64> = report
                    .clamps_for(l.level_pct / 100.0, l.mode)
                    .filter_map(|c| c.metrics.as_ref().and_then(pick))
                    .collect();
                match vals.as_slice() {
                    [v] => format_sig9(*v),
                    _ => MISSING.to_string(),
                }
            }
        };
        let _ = writeln!(
            s,
            "  {:>5}% {:<5} clamps {:>2} settled {:>2} objectives met {:>2}  settling ms {}  overshoot % {}  nrmse {}",
            format_level(l.level_pct / 100.0),
            l.mode.key(),
            l.clamps,
            l.settled,
            l.objectives_met,
            single(&l.settling_ms, |m| m.settling_time_ms),
            single(&l.overshoot_pct, |m| Some(m.overshoot_pct)),
            single(&l.nrmse_ref, |m| Some(m.nrmse_vs_reference))
        );
    }
    let lin: Vec<_> = report
        .clamps
        .iter()
        .filter_map(|c| Some((c, c.linear_ff_fit?, c.metrics?.nrmse_ff_vs_total?)))
        .collect();
    if !lin.is_empty() {
        let _ = writeln!(s, "\nfeedforward fit to total effort (nonlinear vs linear)");
        for (c, l, n) in lin {
            let _ = writeln!(
                s,
                "  {:>5}% seed {:<20} {} vs {}",
                format_level(c.level),
                c.seed,
                format_sig9(n),
                format_sig9(l)
            );
        }
    }
    if !report.pairs.is_empty() {
        let faster = report.pairs.iter().filter(|p| p.fffb_faster()).count();
        let _ = writeln!(
            s,
            "\npaired clamps: FF+FB settled faster in {faster} of {}",
            report.pairs.len()
        );
        for p in &report.pairs {
            let _ = writeln!(
                s,
                "  {:>5}% seed {:<20} settling fb {} fffb {}  overshoot fb {} fffb {}",
                format_level(p.level_pct / 100.0),
                p.seed,
                opt(p.settling_fb_ms),
                opt(p.settling_fffb_ms),
                opt(p.overshoot_fb_pct),
                opt(p.overshoot_fffb_pct)
            );
        }
    }
    let aborted: Vec<_> = report.clamps.iter().filter(|c| c.abort.is_some()).collect();
    if !report.failures.is_empty() || !aborted.is_empty() {
        let _ = writeln!(s, "\nfailures");
        for f in &report.failures {
            let _ = writeln!(s, "  stage {}: {}", f.stage, f.reason);
        }
        for c in aborted {
            let _ = writeln!(
                s,
                "  clamp {} ({}% {} seed {}): {}",
                c.index,
                format_level(c.level),
                c.mode.key(),
                c.seed,
                c.abort.as_deref().unwrap_or_default()
            );
        }
    }
    s
}

/// Files written by [`export_report`].
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRACE_DIR: &str = "traces";
/// Model used for the clamps, written when the run has one.
pub const FIT_FILE: &str = "fit.json";

/// Writes the config echo, full report, metrics CSV, summary and one trace
/// CSV per clamp that has traces.
pub fn export_report(report: &RunReport, dir: &Path) -> Result<()> {
    let traces_dir = dir.join(TRACE_DIR);
    std::fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;
    report.config.save(&dir.join(CONFIG_FILE))?;
    report.save(&dir.join(REPORT_FILE))?;
    if let Some(fit) = report.model_fit() {
        fit.save(&dir.join(FIT_FILE))?;
    }
    let metrics = dir.join(METRICS_FILE);
    let file = std::fs::File::create(&metrics).map_err(|e| Error::io(&metrics, e))?;
    write_metrics_csv(report, std::io::BufWriter::new(file))?;
    let summary = dir.join(SUMMARY_FILE);
    std::fs::write(&summary, summary_text(report)).map_err(|e| Error::io(&summary, e))?;
    for c in &report.clamps {
        if let Some(t) = &c.traces {
            t.save_csv(&traces_dir.join(c.trace_file_name()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ProtocolConfig {
        ProtocolConfig {
            levels: vec![0.05, 0.1],
            repeats: 1,
            repeat_estimations: 0,
            post_hoc_linear: false,
            single_mode_clamps: false,
            ..ProtocolConfig::default()
        }
    }

    #[test]
    fn default_config_round_trips_and_validates() {
        let cfg = ProtocolConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ProtocolConfig>(&text).unwrap(), cfg);
        let partial: ProtocolConfig = serde_json::from_str(r#"{"repeats": 5}"#).unwrap();
        assert_eq!(partial.repeats, 5);
        assert_eq!(partial.levels, DEFAULT_LEVELS.to_vec());
        assert!(serde_json::from_str::<ProtocolConfig>(r#"{"repeatz": 5}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            ProtocolConfig {
                levels: vec![1.0],
                ..ProtocolConfig::default()
            },
            ProtocolConfig {
                repeats: 0,
                ..ProtocolConfig::default()
            },
            ProtocolConfig {
                version: 99,
                ..ProtocolConfig::default()
            },
            ProtocolConfig {
                modes: vec![],
                ..ProtocolConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn level_order_is_seeded() {
        let cfg = ProtocolConfig::default();
        assert_eq!(level_order(&cfg), level_order(&cfg));
        let mut sorted = level_order(&cfg);
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, DEFAULT_LEVELS.to_vec());
        let other = ProtocolConfig {
            order_seed: 7,
            ..cfg.clone()
        };
        let fixed = ProtocolConfig {
            randomize_order: false,
            ..cfg
        };
        assert_eq!(level_order(&fixed), DEFAULT_LEVELS.to_vec());
        assert_ne!(level_order(&other), level_order(&fixed));
    }

    #[test]
    fn schedule_counts_and_single_mode_placement() {
        let cfg = ProtocolConfig::default();
        let jobs = clamp_schedule(&cfg, 3, true);
        assert_eq!(jobs.len(), 6 * 3 + 2);
        let ff = jobs.iter().position(|j| j.mode == Mode::Ff).unwrap();
        assert_eq!(jobs[ff + 1].mode, Mode::Fb);
        assert!(jobs[ff + 2..ff + 5]
            .iter()
            .all(|j| j.level == 0.05 && j.mode == Mode::FfFb));
        let seeds: std::collections::HashSet<_> = jobs.iter().map(|j| j.seed).collect();
        assert_eq!(seeds.len(), jobs.len());
    }

    #[test]
    fn level_formatting() {
        assert_eq!(format_level(0.07), "7");
        assert_eq!(format_level(0.05), "5");
        assert_eq!(format_level(0.025), "2.5");
    }

    #[test]
    fn empty_report_exports_header_only() {
        let cfg = ProtocolConfig::default();
        let plant = cfg.plant.build().unwrap();
        let report = RunReport::new(Protocol::C1, &cfg, plant, 10).finish();
        let dir = tempfile::tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv, METRICS_HEADER.join(",") + "\n");
        let echoed = ProtocolConfig::load(&dir.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(echoed, cfg);
        assert_eq!(std::fs::read_dir(dir.path().join(TRACE_DIR)).unwrap().count(), 0);
        assert!(!dir.path().join(FIT_FILE).exists());
    }

    #[test]
    fn quick_contraction_meets_objectives_and_exports() {
        let report = run_contraction1(&quick()).unwrap();
        assert!(report.succeeded(), "{}", summary_text(&report));
        assert_eq!(report.clamps.len(), 2);
        for c in &report.clamps {
            assert!(c.metrics.unwrap().meets_objectives(), "{}", summary_text(&report));
        }
        let dir = tempfile::tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path().join(TRACE_DIR))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2);
        assert!(names.iter().all(|n| n.starts_with("c1_") && n.contains("_fffb_")));
        let back = RunReport::load(&dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(back.clamps.len(), 2);
        assert!(back.clamps.iter().all(|c| c.traces.is_none()));
        let fit = FitReport::load(&dir.path().join(FIT_FILE)).unwrap();
        assert_eq!(Some(&fit), report.model_fit());
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let seq = run_contraction1(&quick()).unwrap();
        let par = run_contraction1(&ProtocolConfig {
            parallel: true,
            ..quick()
        })
        .unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_metrics_csv(&seq, &mut a).unwrap();
        write_metrics_csv(&par, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contraction2_without_feedforward_model_is_not_needed_for_fb() {
        let first = run_contraction1(&quick()).unwrap();
        let fit = first.model_fit().unwrap().clone();
        let cfg = ProtocolConfig {
            modes: vec![Mode::Fb, Mode::FfFb],
            ..quick()
        };
        let second = run_contraction2(&cfg, &fit).unwrap();
        assert_eq!(second.clamps.len(), 4);
        assert!(second.succeeded());
        assert_eq!(second.model_stage.as_deref(), Some("frozen"));
    }
}
