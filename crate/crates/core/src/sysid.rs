//! Estimation inputs, preprocessing and the two tissue-model estimators.
//!
//! Linear models are fitted on delay-aligned, offset-removed, normalized
//! data by equation-error least squares and returned de-scaled, so they map
//! length-command deviations to force deviations. Nonlinear models are fitted
//! on delay-aligned, smoothed data by a projected Nelder-Mead search on the
//! NRMSE between measured and simulated force.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::maxwell::{simulate_forward, MaxwellParams, C_MAX, C_MIN};
use crate::models::tf::{simulate_discrete_tf, Domain, RationalTransferFunction};
use crate::models::{NonlinearModel, TissueModel};
use crate::signals::{
    align_delay, centered_moving_average, normalize_unit, nrmse, remove_offset, IoRecord, ScaleInfo, TimeSeries,
    TruncatedGaussian, DEFAULT_DELAY_SAMPLES, DEFAULT_SMOOTHING_WINDOW,
};

/// Fraction of the reference length spanned by estimation inputs.
pub const INPUT_SPAN_FRACTION: f64 = 0.02;
/// Estimation step amplitudes as fractions of the lower bound.
pub const ESTIMATION_STEPS: [f64; 6] = [0.2, 0.4, 0.6, 0.8, 1.0, 0.5];
/// Validation step amplitudes; shuffled per seed.
pub const VALIDATION_STEPS: [f64; 6] = [0.1, 0.3, 0.7, 1.0, 0.9, 0.45];
pub const INITIAL_HOLD_S: f64 = 0.1;
pub const ESTIMATION_RAMP_S: f64 = 0.02;
pub const ESTIMATION_HOLD_S: f64 = 0.48;
pub const VALIDATION_RAMP_S: f64 = 0.03;
pub const VALIDATION_HOLD_S: f64 = 0.4;
/// Validation NRMSE differences below this are treated as ties.
pub const ORDER_TIE_TOLERANCE: f64 = 1e-9;
/// Initial samples averaged to estimate the starting force.
pub const F0_SAMPLES: usize = 100;
const MAX_CONDITION: f64 = 1e12;
const RANK_TOLERANCE: f64 = 1e-10;
const EXACT_FIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Nonlinear,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Linear => "linear",
            ModelKind::Nonlinear => "nonlinear",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "nonlinear" => Ok(ModelKind::Nonlinear),
            _ => Err(Error::invalid(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Knobs for both estimators. `order` only matters for linear fits; the
/// optimizer fields only for nonlinear ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub kind: ModelKind,
    pub order: usize,
    pub fix_c: Option<f64>,
    pub regularization_alpha: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub initial_guess: MaxwellParams,
    pub delay_samples: usize,
    pub smoothing_window: usize,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            kind: ModelKind::Nonlinear,
            order: 1,
            fix_c: None,
            regularization_alpha: 0.0,
            max_iterations: 500,
            tolerance: 1e-8,
            initial_guess: MaxwellParams::INITIAL_GUESS,
            delay_samples: DEFAULT_DELAY_SAMPLES,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

impl EstimationOptions {
    pub fn linear(order: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            order,
            ..Self::default()
        }
    }

    pub fn nonlinear() -> Self {
        Self::default()
    }

    /// Fixed damping plus a ridge penalty on `(n, k1, k2)`.
    pub fn regularized(alpha: f64, fix_c: f64) -> Self {
        Self {
            fix_c: Some(fix_c),
            regularization_alpha: alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regularization_alpha >= 0.0 && self.regularization_alpha.is_finite()) {
            return Err(Error::invalid("regularization alpha must be a nonnegative number"));
        }
        if let Some(c) = self.fix_c {
            if !(C_MIN..=C_MAX).contains(&c) {
                return Err(Error::invalid(format!("fixed c={c} outside [{C_MIN}, {C_MAX}]")));
            }
        }
        if self.kind == ModelKind::Linear && !(1..=3).contains(&self.order) {
            return Err(Error::invalid(format!(
                "linear order must be 1..=3, got {}",
                self.order
            )));
        }
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::invalid("need at least one iteration and a positive tolerance"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::invalid("smoothing window must be positive"));
        }
        self.initial_guess.check_feasible()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: TissueModel,
    pub estimation_nrmse: f64,
    pub validation_nrmse: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: Option<u64>,
    pub options: EstimationOptions,
}

impl FitReport {
    pub fn nonlinear_params(&self) -> Option<MaxwellParams> {
        match &self.model {
            TissueModel::Nonlinear(m) => Some(m.params),
            TissueModel::Linear(_) => None,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn check_input_args(ref_length_volts: f64, dt: f64) -> Result<()> {
    if !(ref_length_volts > 0.0 && ref_length_volts.is_finite()) {
        return Err(Error::invalid("reference length must be positive"));
    }
    if !(dt > 0.0 && dt < ESTIMATION_RAMP_S) {
        return Err(Error::invalid("sample period must be positive and shorter than a ramp"));
    }
    Ok(())
}

/// Lower bound of the estimation inputs; the upper bound is 0 V.
pub fn input_lower_bound(ref_length_volts: f64) -> f64 {
    -INPUT_SPAN_FRACTION * ref_length_volts
}

/// Piecewise-linear staircase: initial hold at 0, then ramp-and-hold to
/// each level in turn.
fn staircase(levels: &[f64], hold0: f64, ramp: f64, hold: f64, dt: f64) -> Vec<f64> {
    let n0 = (hold0 / dt).round() as usize;
    let nr = (ramp / dt).round().max(1.0) as usize;
    let nh = (hold / dt).round() as usize;
    let mut out = vec![0.0; n0 + 1];
    let mut prev = 0.0;
    for &level in levels {
        for i in 1..=nr {
            out.push(prev + (level - prev) * i as f64 / nr as f64);
        }
        out.extend(std::iter::repeat_n(level, nh));
        prev = level;
    }
    out
}

fn max_step(levels: &[f64]) -> f64 {
    let mut prev = 0.0;
    let mut best: f64 = 0.0;
    for &l in levels {
        best = best.max((l - prev).abs());
        prev = l;
    }
    best
}

/// Ramped length steps spanning `[lower, 0]` V. The linear kind adds
/// truncated Gaussian noise after the initial hold, clipped to the same
/// bounds.
pub fn design_estimation_input(kind: ModelKind, ref_length_volts: f64, dt: f64, seed: u64) -> Result<TimeSeries> {
    check_input_args(ref_length_volts, dt)?;
    let lower = input_lower_bound(ref_length_volts);
    let levels: Vec<f64> = ESTIMATION_STEPS.iter().map(|f| f * lower).collect();
    let mut values = staircase(&levels, INITIAL_HOLD_S, ESTIMATION_RAMP_S, ESTIMATION_HOLD_S, dt);
    if kind == ModelKind::Linear {
        let noise = TruncatedGaussian::for_max_step(max_step(&levels))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let settled = (INITIAL_HOLD_S / dt).round() as usize + 1;
        for v in values.iter_mut().skip(settled) {
            *v = (*v + noise.sample(&mut rng)).clamp(lower, 0.0);
        }
    }
    TimeSeries::new(0.0, dt, values)
}

/// A staircase with a different, seed-shuffled amplitude pattern and the
/// same bounds as the estimation input.
pub fn design_validation_input(ref_length_volts: f64, dt: f64, seed: u64) -> Result<TimeSeries> {
    check_input_args(ref_length_volts, dt)?;
    let lower = input_lower_bound(ref_length_volts);
    let mut fractions = VALIDATION_STEPS;
    fractions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0056_414c_4944));
    let levels: Vec<f64> = fractions.iter().map(|f| f * lower).collect();
    TimeSeries::new(
        0.0,
        dt,
        staircase(&levels, INITIAL_HOLD_S, VALIDATION_RAMP_S, VALIDATION_HOLD_S, dt),
    )
}

/// Scale information produced by [`preprocess_linear`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScaling {
    pub input: ScaleInfo,
    pub output: ScaleInfo,
    pub output_offset: f64,
}

impl LinearScaling {
    /// Converts a tf fitted on normalized data into one acting on
    /// physical deviations.
    pub fn descale(&self, tf: &RationalTransferFunction) -> Result<RationalTransferFunction> {
        let k = self.output.gain / self.input.gain;
        RationalTransferFunction::new(tf.num().iter().map(|b| b * k).collect(), tf.den().to_vec(), tf.domain())
    }
}

/// Delay alignment, output offset removal, then normalization of both
/// signals onto `[-1, 1]`.
pub fn preprocess_linear(io: &IoRecord, delay_samples: usize) -> Result<(IoRecord, LinearScaling)> {
    let aligned = align_delay(io, delay_samples)?;
    let (y, output_offset) = remove_offset(&aligned.output)?;
    let (u, input) = normalize_unit(&aligned.input)?;
    let (y, output) = normalize_unit(&y)?;
    Ok((
        IoRecord::new(u, y)?,
        LinearScaling {
            input,
            output,
            output_offset,
        },
    ))
}

/// Delay alignment and zero-phase moving-average smoothing of the output.
pub fn preprocess_nonlinear(io: &IoRecord, delay_samples: usize, window: usize) -> Result<IoRecord> {
    let aligned = align_delay(io, delay_samples)?;
    let y = centered_moving_average(&aligned.output, window)?;
    IoRecord::new(aligned.input, y)
}

/// Deviation data a de-scaled linear model is scored on.
pub fn linear_deviations(io: &IoRecord, delay_samples: usize) -> Result<IoRecord> {
    let aligned = align_delay(io, delay_samples)?;
    IoRecord::new(remove_offset(&aligned.input)?.0, remove_offset(&aligned.output)?.0)
}

/// Equation-error least squares for a biproper discrete tf of the given
/// order. The fitted intercept is discarded; the tf describes deviations.
pub fn estimate_linear(io: &IoRecord, order: usize) -> Result<RationalTransferFunction> {
    if !(1..=3).contains(&order) {
        return Err(Error::invalid(format!("linear order must be 1..=3, got {order}")));
    }
    let n = order;
    // Past outputs, current and past inputs, and a constant column that
    // absorbs the offsets left by normalization.
    let cols = 2 * n + 2;
    if io.len() < 10 * cols + n {
        return Err(Error::invalid(format!(
            "{} samples are too few for order {n}",
            io.len()
        )));
    }
    let u = io.input.values();
    let y = io.output.values();
    let rows = io.len() - n;
    let phi = DMatrix::from_fn(rows, cols, |r, c| {
        let k = r + n;
        if c < n {
            -y[k - 1 - c]
        } else if c < 2 * n + 1 {
            u[k - (c - n)]
        } else {
            1.0
        }
    });
    let target = DVector::from_fn(rows, |r, _| y[r + n]);
    // Thin QR reduces the problem to a small triangular system whose SVD
    // gives the condition number and, if needed, a minimum-norm solution.
    let qr = phi.clone().qr();
    let rhs = qr.q().transpose() * &target;
    let svd = qr.r().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let failure = || Error::EstimationFailure(format!("regressor is rank deficient (condition number {cond:.3e})"));
    if !(smax > 0.0 && target.norm() > 0.0) {
        return Err(failure());
    }
    let well_posed = cond < MAX_CONDITION;
    let eps = if well_posed { 0.0 } else { RANK_TOLERANCE * smax };
    let theta = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::EstimationFailure(e.to_string()))?;
    // Collinear regressors are accepted only when the minimum-norm solution
    // explains the data exactly, as for a purely static system.
    if !well_posed {
        let resid = (&phi * &theta - &target).norm();
        if !(resid <= EXACT_FIT_TOLERANCE * target.norm()) {
            return Err(failure());
        }
    }
    let mut den = vec![1.0];
    den.extend(theta.iter().take(n));
    let num: Vec<f64> = theta.iter().skip(n).take(n + 1).copied().collect();
    RationalTransferFunction::new(num, den, Domain::Discrete { ts: io.dt() })
}

/// Starting force of a record: mean of its first samples.
pub fn initial_force(output: &TimeSeries) -> f64 {
    let m = output.len().min(F0_SAMPLES);
    output.values()[..m].iter().sum::<f64>() / m as f64
}

fn simulate_model_nrmse(p: &MaxwellParams, io: &IoRecord, f0: f64) -> Result<f64> {
    let sim = simulate_forward(p, &io.input, f0)?;
    nrmse(&io.output, &sim)
}

/// Maps optimizer coordinates to feasible parameters: the box first, then
/// the half-space `k1 >= k2`.
fn project(mut p: MaxwellParams, fix_c: Option<f64>) -> MaxwellParams {
    p.k1 = p.k1.max(0.0);
    p.k2 = p.k2.max(0.0);
    p.c = fix_c.unwrap_or(p.c).clamp(C_MIN, C_MAX);
    p.n = p.n.max(1.0);
    if p.k1 < p.k2 {
        let m = 0.5 * (p.k1 + p.k2);
        p.k1 = m;
        p.k2 = m;
    }
    p
}

struct NelderMead {
    tolerance: f64,
}

struct SimplexResult {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    converged: bool,
}

impl NelderMead {
    /// Minimizes `f` from `x0` with an axis-aligned initial simplex of
    /// relative size `step`. `project` is applied to every trial point.
    fn minimize(
        &self,
        f: &mut impl FnMut(&[f64]) -> f64,
        project: &impl Fn(&[f64]) -> Vec<f64>,
        x0: &[f64],
        step: f64,
        budget: usize,
    ) -> SimplexResult {
        let d = x0.len();
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
        let start = project(x0);
        let f0 = f(&start);
        simplex.push((start.clone(), f0));
        for i in 0..d {
            let mut x = start.clone();
            x[i] += if x[i].abs() > 1e-12 { step * x[i] } else { step };
            let x = project(&x);
            let fx = f(&x);
            simplex.push((x, fx));
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < budget {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let best = simplex[0].1;
            let worst = simplex[d].1;
            if worst.is_finite() && (worst - best).abs() <= self.tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let centroid: Vec<f64> = (0..d)
                .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
                .collect();
            let toward = |coef: f64| -> Vec<f64> {
                let w = &simplex[d].0;
                project(
                    &(0..d)
                        .map(|j| centroid[j] + coef * (w[j] - centroid[j]))
                        .collect::<Vec<_>>(),
                )
            };
            let xr = toward(-1.0);
            let fr = f(&xr);
            if fr < simplex[0].1 {
                let xe = toward(-2.0);
                let fe = f(&xe);
                simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < simplex[d - 1].1 {
                simplex[d] = (xr, fr);
                continue;
            }
            let (xc, fc) = if fr < simplex[d].1 {
                let x = toward(-0.5);
                let fx = f(&x);
                (x, fx)
            } else {
                let x = toward(0.5);
                let fx = f(&x);
                (x, fx)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
                continue;
            }
            let xb = simplex[0].0.clone();
            for (x, fx) in simplex.iter_mut().skip(1) {
                let shrunk: Vec<f64> = x.iter().zip(&xb).map(|(a, b)| b + 0.5 * (a - b)).collect();
                *x = project(&shrunk);
                *fx = f(x);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        SimplexResult {
            x,
            f: fx,
            iterations,
            converged,
        }
    }
}

/// Constrained nonlinear fit on data already passed through
/// [`preprocess_nonlinear`]. The starting force is the mean of the first
/// samples of the output; every returned parameter set is feasible.
pub fn estimate_nonlinear(io: &IoRecord, opts: &EstimationOptions) -> Result<FitReport> {
    opts.validate()?;
    let f0 = initial_force(&io.output);
    if !(f0 > 0.0) {
        return Err(Error::invalid(format!("starting force {f0} is not positive")));
    }
    let guess = project(opts.initial_guess, opts.fix_c);
    let free_c = opts.fix_c.is_none();
    // Optimizer coordinates are the parameters divided by the initial guess.
    let scale = guess.as_array();
    let to_params = |z: &[f64]| -> MaxwellParams {
        let c = if free_c { z[2] * scale[2] } else { guess.c };
        let n_idx = if free_c { 3 } else { 2 };
        MaxwellParams {
            k1: z[0] * scale[0],
            k2: z[1] * scale[1],
            c,
            n: z[n_idx] * scale[3],
        }
    };
    let to_coords = |p: &MaxwellParams| -> Vec<f64> {
        let mut z = vec![p.k1 / scale[0], p.k2 / scale[1]];
        if free_c {
            z.push(p.c / scale[2]);
        }
        z.push(p.n / scale[3]);
        z
    };
    let proj = |z: &[f64]| to_coords(&project(to_params(z), opts.fix_c));
    let alpha = opts.regularization_alpha;
    let mut cost = |z: &[f64]| -> f64 {
        let p = to_params(z);
        match simulate_model_nrmse(&p, io, f0) {
            Ok(e) if e.is_finite() => e + alpha * (p.n * p.n + p.k1 * p.k1 + p.k2 * p.k2),
            _ => f64::INFINITY,
        }
    };
    let nm = NelderMead {
        tolerance: opts.tolerance,
    };
    let mut x = to_coords(&guess);
    let mut iterations = 0;
    let mut converged = false;
    let mut best = f64::INFINITY;
    // Restart from the incumbent with a fresh simplex until a restart no
    // longer improves on it.
    for step in [0.2, 0.05, 0.01] {
        let remaining = opts.max_iterations - iterations;
        if remaining == 0 {
            break;
        }
        let r = nm.minimize(&mut cost, &proj, &x, step, remaining);
        iterations += r.iterations;
        let improved = best - r.f;
        if r.f <= best {
            best = r.f;
            x = r.x;
        }
        converged = r.converged;
        if !converged || improved.abs() <= opts.tolerance {
            break;
        }
    }
    if !best.is_finite() {
        return Err(Error::EstimationFailure(
            "no trial point produced a finite simulation".into(),
        ));
    }
    let params = project(to_params(&x), opts.fix_c);
    let estimation_nrmse = simulate_model_nrmse(&params, io, f0)?;
    Ok(FitReport {
        model: TissueModel::Nonlinear(NonlinearModel::new(params, f0)?),
        estimation_nrmse,
        validation_nrmse: None,
        iterations,
        converged,
        seed: None,
        options: *opts,
    })
}

/// Open-loop NRMSE of a model on validation data prepared for its kind:
/// [`preprocess_nonlinear`] output for nonlinear models, and
/// [`linear_deviations`] output for de-scaled linear models.
pub fn validate(model: &TissueModel, io: &IoRecord) -> Result<f64> {
    match model {
        TissueModel::Nonlinear(m) => simulate_model_nrmse(&m.params, io, initial_force(&io.output)),
        TissueModel::Linear(tf) => {
            let sim = simulate_discrete_tf(tf, &io.input)?;
            nrmse(&io.output, &sim)
        }
    }
}

/// [`validate`] on a raw recording, prepared with the fit's own delay and
/// smoothing.
pub fn validate_recording(fit: &FitReport, io: &IoRecord) -> Result<f64> {
    let opts = &fit.options;
    let prepared = match fit.model {
        TissueModel::Nonlinear(_) => preprocess_nonlinear(io, opts.delay_samples, opts.smoothing_window)?,
        TissueModel::Linear(_) => linear_deviations(io, opts.delay_samples)?,
    };
    validate(&fit.model, &prepared)
}

/// Full linear pipeline on raw records: preprocess, fit, de-scale, and
/// score on both datasets.
pub fn fit_linear(est: &IoRecord, val: Option<&IoRecord>, order: usize, delay_samples: usize) -> Result<FitReport> {
    let (pre, scaling) = preprocess_linear(est, delay_samples)?;
    let tf = scaling.descale(&estimate_linear(&pre, order)?)?;
    let model = TissueModel::Linear(tf);
    let estimation_nrmse = validate(&model, &linear_deviations(est, delay_samples)?)?;
    let validation_nrmse = val
        .map(|v| validate(&model, &linear_deviations(v, delay_samples)?))
        .transpose()?;
    Ok(FitReport {
        model,
        estimation_nrmse,
        validation_nrmse,
        iterations: 1,
        converged: true,
        seed: None,
        options: EstimationOptions {
            delay_samples,
            ..EstimationOptions::linear(order)
        },
    })
}

/// Full nonlinear pipeline on raw records.
pub fn fit_nonlinear(est: &IoRecord, val: Option<&IoRecord>, opts: &EstimationOptions) -> Result<FitReport> {
    let pre = preprocess_nonlinear(est, opts.delay_samples, opts.smoothing_window)?;
    let mut report = estimate_nonlinear(&pre, opts)?;
    report.validation_nrmse = val
        .map(|v| {
            validate(
                &report.model,
                &preprocess_nonlinear(v, opts.delay_samples, opts.smoothing_window)?,
            )
        })
        .transpose()?;
    Ok(report)
}

/// Dispatches on `opts.kind`.
pub fn fit(est: &IoRecord, val: Option<&IoRecord>, opts: &EstimationOptions) -> Result<FitReport> {
    match opts.kind {
        ModelKind::Linear => fit_linear(est, val, opts.order, opts.delay_samples),
        ModelKind::Nonlinear => fit_nonlinear(est, val, opts),
    }
}

/// Fits orders 1 to 3 and keeps the best validation NRMSE; near-ties go to
/// the lower order.
pub fn select_linear_order(est: &IoRecord, val: &IoRecord, delay_samples: usize) -> Result<(usize, FitReport)> {
    let mut best: Option<(usize, FitReport, f64)> = None;
    let mut failures = Vec::new();
    for order in 1..=3 {
        let report = match fit_linear(est, Some(val), order, delay_samples) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("order {order}: {e}"));
                continue;
            }
        };
        let score = report.validation_nrmse.unwrap_or(f64::INFINITY);
        let score = if score.is_finite() { score } else { f64::INFINITY };
        let better = match &best {
            None => true,
            Some((_, _, s)) => score < s - ORDER_TIE_TOLERANCE,
        };
        if better {
            best = Some((order, report, score));
        }
    }
    best.map(|(o, r, _)| (o, r))
        .ok_or_else(|| Error::EstimationFailure(format!("no linear order could be fitted: {}", failures.join("; "))))
}

/// Sample standard deviation over the absolute mean.
pub fn coefficient_of_variation(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("coefficient of variation needs at least two samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::degenerate("coefficient of variation of a zero-mean sample"));
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(var.sqrt() / mean.abs())
}

/// Per-parameter coefficients of variation, ordered `k1, k2, c, n`.
pub fn parameter_cv(estimates: &[MaxwellParams]) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (i, o) in out.iter_mut().enumerate() {
        let column: Vec<f64> = estimates.iter().map(|p| p.as_array()[i]).collect();
        *o = coefficient_of_variation(&column)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::DEFAULT_DT;
    use rand_distr::{Distribution, Normal};

    const REF_LEN: f64 = 10.0;

    #[test]
    fn estimation_input_bounds_and_shape() {
        let u = design_estimation_input(ModelKind::Nonlinear, REF_LEN, DEFAULT_DT, 1).unwrap();
        assert_eq!(u.max(), 0.0);
        assert_eq!(u.min(), input_lower_bound(REF_LEN));
        assert_eq!(u.min(), -0.2);
        assert!((u.t_end() - 3.1).abs() < 1e-9);
        // Distinct held levels.
        let mut levels: Vec<f64> = u.values().to_vec();
        levels.dedup();
        assert!(levels.len() > 6);
    }

    #[test]
    fn linear_input_is_deterministic_and_clipped() {
        let a = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 7).unwrap();
        let b = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 7).unwrap();
        assert_eq!(a, b);
        let c = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 8).unwrap();
        assert_ne!(a, c);
        for seed in 0..1000 {
            let u = design_estimation_input(ModelKind::Linear, REF_LEN, 1e-3, seed).unwrap();
            assert!(u.max() <= 0.0 && u.min() >= input_lower_bound(REF_LEN));
        }
    }

    #[test]
    fn validation_input_differs_with_same_bounds() {
        let e = design_estimation_input(ModelKind::Nonlinear, REF_LEN, DEFAULT_DT, 3).unwrap();
        let v = design_validation_input(REF_LEN, DEFAULT_DT, 3).unwrap();
        assert_ne!(e, v);
        assert_eq!(v.max(), 0.0);
        assert_eq!(v.min(), e.min());
        assert_eq!(v, design_validation_input(REF_LEN, DEFAULT_DT, 3).unwrap());
        assert!(design_validation_input(-1.0, DEFAULT_DT, 3).is_err());
    }

    fn first_order_record(n: usize, delay: usize) -> (IoRecord, RationalTransferFunction) {
        let tf = RationalTransferFunction::new(vec![0.5, -0.3], vec![1.0, -0.8], Domain::Discrete { ts: DEFAULT_DT })
            .unwrap();
        let u = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 5)
            .unwrap()
            .slice(0, n)
            .unwrap();
        let y = simulate_discrete_tf(&tf, &u).unwrap().map(|v| v + 1.5).unwrap();
        let mut yd = vec![y.first(); delay];
        yd.extend_from_slice(&y.values()[..n - delay]);
        (IoRecord::new(u.clone(), u.with_values(yd).unwrap()).unwrap(), tf)
    }

    #[test]
    fn linear_estimator_recovers_first_order_tf() {
        let tf = RationalTransferFunction::new(vec![0.5, -0.3], vec![1.0, -0.8], Domain::Discrete { ts: DEFAULT_DT })
            .unwrap();
        let u = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 5).unwrap();
        let y = simulate_discrete_tf(&tf, &u).unwrap();
        let est = estimate_linear(&IoRecord::new(u, y).unwrap(), 1).unwrap();
        for (a, b) in est.num().iter().zip(tf.num()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((est.den()[1] - tf.den()[1]).abs() < 1e-6);
    }

    #[test]
    fn static_gain_survives_scaling_round_trip() {
        let u = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 2).unwrap();
        let y = u.map(|v| 2.0 * v + 3.0).unwrap();
        let report = fit_linear(&IoRecord::new(u, y).unwrap(), None, 1, 0).unwrap();
        let TissueModel::Linear(tf) = report.model else {
            panic!()
        };
        assert!((tf.dc_gain() - 2.0).abs() < 1e-9);
        assert!(report.estimation_nrmse < 1e-9);
    }

    #[test]
    fn linear_preprocessing_normalizes_and_removes_offset() {
        let (io, _) = first_order_record(20_000, 10);
        let (pre, scaling) = preprocess_linear(&io, 10).unwrap();
        assert_eq!(pre.len(), io.len() - 10);
        assert!(pre.input.max() <= 1.0 && pre.input.min() >= -1.0);
        assert!((pre.output.max() - 1.0).abs() < 1e-12 && (pre.output.min() + 1.0).abs() < 1e-12);
        // The offset-removed start is 0, which maps to -offset/gain.
        let expected = -scaling.output.offset / scaling.output.gain;
        assert!((pre.output.first() - expected).abs() < 1e-12);
        assert_eq!(scaling.output_offset, io.output.values()[10]);
    }

    #[test]
    fn delay_alignment_improves_linear_fit() {
        let (io, _) = first_order_record(20_000, 10);
        let aligned = fit_linear(&io, None, 1, 10).unwrap().estimation_nrmse;
        let unaligned = fit_linear(&io, None, 1, 0).unwrap().estimation_nrmse;
        assert!(aligned < unaligned, "{aligned} vs {unaligned}");
        assert!(aligned < 1e-6, "aligned {aligned}");
    }

    #[test]
    fn noisy_linear_fit_residual_tracks_noise_level() {
        let tf = RationalTransferFunction::new(vec![0.5, -0.3], vec![1.0, -0.8], Domain::Discrete { ts: DEFAULT_DT })
            .unwrap();
        let u = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 5).unwrap();
        let y = simulate_discrete_tf(&tf, &u).unwrap();
        let rms = (y.values().iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
        let sigma = 0.01 * rms;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, sigma).unwrap();
        let yn = y
            .with_values(y.values().iter().map(|v| v + noise.sample(&mut rng)).collect())
            .unwrap();
        let est = estimate_linear(&IoRecord::new(u.clone(), yn.clone()).unwrap(), 1).unwrap();
        let sim = simulate_discrete_tf(&est, &u).unwrap();
        let e = nrmse(&yn, &sim).unwrap();
        assert!(e < 1.5 * 0.01, "nrmse {e}");
    }

    #[test]
    fn rank_deficient_regressor_is_reported() {
        let u = TimeSeries::constant(0.0, DEFAULT_DT, 1000, 0.0).unwrap();
        let err = estimate_linear(&IoRecord::new(u.clone(), u).unwrap(), 2).unwrap_err();
        assert!(
            matches!(err, Error::EstimationFailure(ref m) if m.contains("condition")),
            "{err}"
        );
        let u = TimeSeries::constant(0.0, DEFAULT_DT, 1000, 1.0).unwrap();
        assert!(estimate_linear(&IoRecord::new(u.clone(), u.clone()).unwrap(), 4).is_err());
        // Constant input with an output it cannot explain.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let y = u
            .with_values((0..1000).map(|_| noise.sample(&mut rng)).collect())
            .unwrap();
        let err = estimate_linear(&IoRecord::new(u, y).unwrap(), 1).unwrap_err();
        assert!(matches!(err, Error::EstimationFailure(_)));
    }

    #[test]
    fn nonlinear_preprocessing_smooths_output_only() {
        let n = 5000;
        let u = TimeSeries::from_fn(0.0, DEFAULT_DT, n, |t| -0.1 * (1.0 - (-t / 0.1).exp())).unwrap();
        let y = TimeSeries::from_fn(0.0, DEFAULT_DT, n, |t| 2.0 + (2.0 * t).sin()).unwrap();
        let io = IoRecord::new(u.clone(), y.clone()).unwrap();
        let pre = preprocess_nonlinear(&io, 10, 20).unwrap();
        assert_eq!(pre.input.values(), &u.values()[..n - 10]);
        let clean = y.slice(10, n).unwrap();
        assert!(nrmse(&clean, &pre.output).unwrap() < 1e-3);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let yn = y
            .with_values(y.values().iter().map(|v| v + noise.sample(&mut rng)).collect())
            .unwrap();
        let pre = preprocess_nonlinear(&IoRecord::new(u.clone(), yn.clone()).unwrap(), 10, 20).unwrap();
        let resid = |s: &TimeSeries| {
            let r: Vec<f64> = s.values().iter().zip(clean.values()).map(|(a, b)| a - b).collect();
            (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt()
        };
        let raw = resid(&yn.slice(10, n).unwrap());
        assert!(raw / resid(&pre.output) >= 3.0);
        let wide = preprocess_nonlinear(&IoRecord::new(u, yn).unwrap(), 10, 30).unwrap();
        assert!(resid(&wide.output) < resid(&pre.output));
    }

    fn synthetic(p: &MaxwellParams, seed: u64) -> (IoRecord, IoRecord) {
        let u = design_estimation_input(ModelKind::Nonlinear, REF_LEN, DEFAULT_DT, seed).unwrap();
        let v = design_validation_input(REF_LEN, DEFAULT_DT, seed).unwrap();
        let est = IoRecord::new(u.clone(), simulate_forward(p, &u, 2.0).unwrap()).unwrap();
        let val = IoRecord::new(v.clone(), simulate_forward(p, &v, 2.0).unwrap()).unwrap();
        (est, val)
    }

    #[test]
    fn nonlinear_self_recovery_from_offset_start() {
        let truth = MaxwellParams::new(12.0, 0.8, 0.012, 4.5).unwrap();
        let (est, val) = synthetic(&truth, 1);
        let opts = EstimationOptions {
            delay_samples: 0,
            smoothing_window: 1,
            ..EstimationOptions::nonlinear()
        };
        let report = fit_nonlinear(&est, Some(&val), &opts).unwrap();
        let p = report.nonlinear_params().unwrap();
        assert!(p.is_feasible());
        for (got, want) in p.as_array().iter().zip(truth.as_array()) {
            assert!(((got - want) / want).abs() < 0.05, "{p:?} vs {truth:?}");
        }
        assert!(report.validation_nrmse.unwrap() < 0.02);
    }

    #[test]
    fn wrong_parameters_validate_worse() {
        let truth = MaxwellParams::INITIAL_GUESS;
        let (_, val) = synthetic(&truth, 2);
        let good = TissueModel::Nonlinear(NonlinearModel::new(truth, 2.0).unwrap());
        let bad = TissueModel::Nonlinear(NonlinearModel::new(MaxwellParams { k1: 20.0, ..truth }, 2.0).unwrap());
        assert!(validate(&good, &val).unwrap() < validate(&bad, &val).unwrap());
        assert!(validate(&good, &val).unwrap() < 1e-12);
    }

    #[test]
    fn projection_keeps_iterates_feasible() {
        let p = project(
            MaxwellParams {
                k1: 1.0,
                k2: 3.0,
                c: 5.0,
                n: 0.2,
            },
            None,
        );
        assert!(p.is_feasible());
        assert_eq!((p.k1, p.k2), (2.0, 2.0));
        let q = project(
            MaxwellParams {
                k1: -1.0,
                k2: -3.0,
                c: 0.0,
                n: 2.0,
            },
            Some(0.02),
        );
        assert!(q.is_feasible());
        assert_eq!(q.c, 0.02);
    }

    #[test]
    fn order_selection_prefers_lower_order_on_first_order_data() {
        let (io, _) = first_order_record(31_000, 10);
        let v = design_validation_input(REF_LEN, DEFAULT_DT, 1).unwrap();
        let tf = RationalTransferFunction::new(vec![0.5, -0.3], vec![1.0, -0.8], Domain::Discrete { ts: DEFAULT_DT })
            .unwrap();
        let y = simulate_discrete_tf(&tf, &v).unwrap();
        let val = IoRecord::new(v, y).unwrap();
        let (order, report) = select_linear_order(&io, &val, 10).unwrap();
        assert_ne!(order, 3);
        assert_eq!(select_linear_order(&io, &val, 10).unwrap().1, report);
    }

    #[test]
    fn order_selection_finds_second_order_dynamics() {
        let tf = RationalTransferFunction::new(
            vec![0.4, -0.5, 0.2],
            vec![1.0, -1.5, 0.56],
            Domain::Discrete { ts: DEFAULT_DT },
        )
        .unwrap();
        let u = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 5).unwrap();
        let est = IoRecord::new(u.clone(), simulate_discrete_tf(&tf, &u).unwrap()).unwrap();
        let v = design_estimation_input(ModelKind::Linear, REF_LEN, DEFAULT_DT, 6).unwrap();
        let val = IoRecord::new(v.clone(), simulate_discrete_tf(&tf, &v).unwrap()).unwrap();
        let (order, _) = select_linear_order(&est, &val, 0).unwrap();
        let scores: Vec<_> = (1..=3)
            .map(|o| fit_linear(&est, Some(&val), o, 0).unwrap().validation_nrmse)
            .collect();
        assert!(order == 2 || order == 1, "selected {order} {scores:?}");
        assert_ne!(order, 3);
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[10.0, 10.0, 10.0]).unwrap(), 0.0);
        assert!((coefficient_of_variation(&[1.0, 3.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            coefficient_of_variation(&[-1.0, 1.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(coefficient_of_variation(&[1.0]).is_err());
    }

    #[test]
    fn options_validation() {
        assert!(EstimationOptions::regularized(1e-5, 0.01).validate().is_ok());
        assert!(EstimationOptions::regularized(-1.0, 0.01).validate().is_err());
        assert!(EstimationOptions::regularized(0.0, 2.0).validate().is_err());
        assert!(EstimationOptions::linear(4).validate().is_err());
    }
}
