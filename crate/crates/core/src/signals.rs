//! Uniformly sampled signals and the handful of filters and transforms the
//! identification and control pipelines need.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sample period of the rig (10 kHz).
pub const DEFAULT_DT: f64 = 1e-4;

/// Default input/output delay of the rig, in samples at [`DEFAULT_DT`].
pub const DEFAULT_DELAY_SAMPLES: usize = 10;

/// Window of the moving mean used on force outputs.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 20;

/// Window of the median filter applied to linear-model feedforward.
pub const DEFAULT_MEDIAN_WINDOW: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    t_start: f64,
    dt: f64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t_start: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("sample period must be positive, got {dt}")));
        }
        if !t_start.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if values.is_empty() {
            return Err(Error::invalid("a time series needs at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self { t_start, dt, values })
    }

    /// Samples `f(t)` on `count` points starting at `t_start`.
    pub fn from_fn(t_start: f64, dt: f64, count: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..count).map(|i| f(t_start + i as f64 * dt)).collect();
        Self::new(t_start, dt, values)
    }

    pub fn constant(t_start: f64, dt: f64, count: usize, value: f64) -> Result<Self> {
        Self::new(t_start, dt, vec![value; count])
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.len() - 1)
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Index of the first sample at or after `t` (clamped to the series).
    pub fn index_at(&self, t: f64) -> usize {
        let k = ((t - self.t_start) / self.dt - 1e-9).ceil();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.len() - 1)
        }
    }

    /// Same grid, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        assert_eq!(values.len(), self.len(), "with_values must preserve length");
        Self::new(self.t_start, self.dt, values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    /// Samples `[from, to)` as a new series with a shifted start time.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::invalid(format!(
                "slice {from}..{to} out of range for length {}",
                self.len()
            )));
        }
        Self::new(self.time(from), self.dt, self.values[from..to].to_vec())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Linear interpolation at an arbitrary time, clamped at the ends.
    pub fn interpolate(&self, t: f64) -> f64 {
        let s = (t - self.t_start) / self.dt;
        if s <= 0.0 {
            return self.values[0];
        }
        let last = self.len() - 1;
        if s >= last as f64 {
            return self.values[last];
        }
        let i = s.floor() as usize;
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
        w.write_record(["time_s", "value"]).map_err(to_err)?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([format_sig9(self.time(i)), format_sig9(*v)])
                .map_err(to_err)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
        Ok(())
    }

    /// Reads a `time_s,value` CSV. The sample period is taken from the first
    /// two rows and checked against the rest to within 1e-6 relative.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| Error::format(origin, e.to_string()))?.clone();
        if headers.len() < 2 || &headers[0] != "time_s" {
            return Err(Error::format(origin, "expected header `time_s,value`"));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(origin, e.to_string()))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(origin, format!("row {}: {e}", row + 2)))
            };
            times.push(parse(&rec[0])?);
            values.push(parse(&rec[1])?);
        }
        if times.is_empty() {
            return Err(Error::format(origin, "no samples"));
        }
        let dt = if times.len() > 1 {
            (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
        } else {
            DEFAULT_DT
        };
        for (i, t) in times.iter().enumerate() {
            let expected = times[0] + i as f64 * dt;
            if (t - expected).abs() > 1e-6 * dt.max(t.abs()) + 1e-9 {
                return Err(Error::format(origin, format!("row {} breaks uniform sampling", i + 2)));
            }
        }
        Self::new(times[0], dt, values)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

/// `%.9g`-style formatting: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let mut s = String::new();
    if !(-5..9).contains(&exp) {
        let _ = write!(s, "{x:.8e}");
        if let Some(epos) = s.find('e') {
            let (mant, e) = s.split_at(epos);
            let mant = if mant.contains('.') {
                mant.trim_end_matches('0').trim_end_matches('.')
            } else {
                mant
            };
            return format!("{mant}{e}");
        }
        s
    } else {
        let decimals = (8 - exp).max(0) as usize;
        let _ = write!(s, "{x:.decimals$}");
        if s.contains('.') {
            s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        if s == "-0" {
            s = "0".to_string();
        }
        s
    }
}

/// Length command (input) and measured force (output) of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoRecord {
    pub input: TimeSeries,
    pub output: TimeSeries,
}

impl IoRecord {
    pub fn new(input: TimeSeries, output: TimeSeries) -> Result<Self> {
        if input.len() != output.len() {
            return Err(Error::invalid(format!(
                "input has {} samples, output {}",
                input.len(),
                output.len()
            )));
        }
        if (input.dt() - output.dt()).abs() > 1e-12 * input.dt() {
            return Err(Error::invalid("input and output sample periods differ"));
        }
        Ok(Self { input, output })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.input.dt()
    }

    /// Writes `time_s,u_v,y_v` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
        w.write_record(["time_s", "u_v", "y_v"]).map_err(to_err)?;
        for (i, (u, y)) in self.input.values().iter().zip(self.output.values()).enumerate() {
            w.write_record([format_sig9(self.input.time(i)), format_sig9(*u), format_sig9(*y)])
                .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
    }

    /// Reads a `time_s,u_v,y_v` CSV with uniform sampling.
    pub fn read_csv<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers().map_err(|e| Error::format(origin, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["time_s", "u_v", "y_v"] {
            return Err(Error::format(origin, "expected header `time_s,u_v,y_v`"));
        }
        let (mut t, mut u, mut y) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::format(origin, e.to_string()))?;
            let parse = |col: usize, into: &mut Vec<f64>| -> Result<()> {
                let v = rec[col]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(origin, format!("row {}: {e}", row + 2)))?;
                into.push(v);
                Ok(())
            };
            parse(0, &mut t)?;
            parse(1, &mut u)?;
            parse(2, &mut y)?;
        }
        if t.len() < 2 {
            return Err(Error::format(origin, "need at least two samples"));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        for (i, ti) in t.iter().enumerate() {
            if (ti - (t[0] + i as f64 * dt)).abs() > 1e-6 * dt.max(ti.abs()) + 1e-9 {
                return Err(Error::format(origin, format!("row {} breaks uniform sampling", i + 2)));
            }
        }
        Self::new(TimeSeries::new(t[0], dt, u)?, TimeSeries::new(t[0], dt, y)?)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

/// Affine map taking a signal onto `[-1, 1]`: `normalized = (raw - offset) / gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleInfo {
    pub offset: f64,
    pub gain: f64,
}

impl ScaleInfo {
    pub fn denormalize(&self, s: &TimeSeries) -> Result<TimeSeries> {
        s.map(|v| v * self.gain + self.offset)
    }
}

/// Causal moving mean. The first `window - 1` outputs average the available
/// prefix.
pub fn moving_average(s: &TimeSeries, window: usize) -> Result<TimeSeries> {
    if window == 0 || window > s.len() {
        return Err(Error::invalid(format!(
            "moving-average window {window} invalid for {} samples",
            s.len()
        )));
    }
    let v = s.values();
    let mut out = Vec::with_capacity(v.len());
    let mut acc = 0.0;
    for i in 0..v.len() {
        acc += v[i];
        if i >= window {
            acc -= v[i - window];
        }
        let n = (i + 1).min(window);
        out.push(acc / n as f64);
    }
    s.with_values(out)
}

/// Zero-phase moving mean: window centered on each sample, shrunk
/// symmetrically at the edges. For an even window the extra sample is taken
/// from the past.
pub fn centered_moving_average(s: &TimeSeries, window: usize) -> Result<TimeSeries> {
    if window == 0 || window > s.len() {
        return Err(Error::invalid(format!(
            "moving-average window {window} invalid for {} samples",
            s.len()
        )));
    }
    let v = s.values();
    let n = v.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for x in v {
        prefix.push(prefix.last().unwrap() + x);
    }
    let back = window / 2;
    let fwd = (window - 1) / 2;
    let out = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect();
    s.with_values(out)
}

/// Centered sliding median; near the edges the window shrinks symmetrically
/// so it stays odd and centered.
pub fn median_filter(s: &TimeSeries, window: usize) -> Result<TimeSeries> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("median window must be odd, got {window}")));
    }
    if window > s.len() {
        return Err(Error::invalid(format!(
            "median window {window} longer than signal ({})",
            s.len()
        )));
    }
    let v = s.values();
    let n = v.len();
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    let out = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            buf.clear();
            buf.extend_from_slice(&v[i - h..=i + h]);
            buf.sort_unstable_by(f64::total_cmp);
            buf[h]
        })
        .collect();
    s.with_values(out)
}

/// Zero-mean Gaussian samples truncated to `[-bound, bound]` by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedGaussian {
    std: f64,
    bound: f64,
}

impl TruncatedGaussian {
    pub fn new(std: f64, bound: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::invalid(format!("noise std must be positive, got {std}")));
        }
        if !(bound >= std) {
            return Err(Error::invalid(format!(
                "noise bound {bound} must be at least the std {std}"
            )));
        }
        Ok(Self { std, bound })
    }

    /// The input-noise rule used for estimation signals: three standard
    /// deviations span a tenth of the largest step.
    pub fn for_max_step(max_step: f64) -> Result<Self> {
        let std = 0.1 * max_step.abs() / 3.0;
        Self::new(std, 3.0 * std)
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = z * self.std;
            if x.abs() <= self.bound {
                return x;
            }
        }
    }
}

pub fn truncated_gaussian_noise(seed: u64, std: f64, bound: f64, count: usize, dt: f64) -> Result<TimeSeries> {
    let dist = TruncatedGaussian::new(std, bound)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..count).map(|_| dist.sample(&mut rng)).collect();
    TimeSeries::new(0.0, dt, values)
}

/// Advances the output by `delay_samples` relative to the input and trims
/// both to the common span.
pub fn align_delay(io: &IoRecord, delay_samples: usize) -> Result<IoRecord> {
    if delay_samples >= io.len() {
        return Err(Error::invalid(format!(
            "delay of {delay_samples} samples leaves nothing of {} samples",
            io.len()
        )));
    }
    if delay_samples == 0 {
        return Ok(io.clone());
    }
    let n = io.len() - delay_samples;
    let input = io.input.slice(0, n)?;
    let output = TimeSeries::new(
        io.input.t_start(),
        io.output.dt(),
        io.output.values()[delay_samples..].to_vec(),
    )?;
    IoRecord::new(input, output)
}

pub fn normalize_unit(s: &TimeSeries) -> Result<(TimeSeries, ScaleInfo)> {
    let (lo, hi) = (s.min(), s.max());
    if !(hi > lo) {
        return Err(Error::degenerate("cannot normalize a constant signal"));
    }
    let scale = ScaleInfo {
        offset: 0.5 * (hi + lo),
        gain: 0.5 * (hi - lo),
    };
    let out = s.map(|v| ((v - scale.offset) / scale.gain).clamp(-1.0, 1.0))?;
    Ok((out, scale))
}

/// Subtracts the first sample; returns it as the offset.
pub fn remove_offset(s: &TimeSeries) -> Result<(TimeSeries, f64)> {
    let offset = s.first();
    Ok((s.map(|v| v - offset)?, offset))
}

/// Root-mean-square error normalized by the RMS of the observed signal.
pub fn nrmse(observed: &TimeSeries, simulated: &TimeSeries) -> Result<f64> {
    nrmse_slices(observed.values(), simulated.values())
}

pub fn nrmse_slices(observed: &[f64], simulated: &[f64]) -> Result<f64> {
    if observed.len() != simulated.len() {
        return Err(Error::invalid(format!(
            "nrmse needs equal lengths, got {} and {}",
            observed.len(),
            simulated.len()
        )));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (y, yh) in observed.iter().zip(simulated) {
        num += (y - yh) * (y - yh);
        den += y * y;
    }
    if den == 0.0 {
        return Err(Error::degenerate("observed signal is identically zero"));
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new(0.0, DEFAULT_DT, v.to_vec()).unwrap()
    }

    #[test]
    fn io_record_csv_round_trip() {
        let u = TimeSeries::from_fn(0.0, DEFAULT_DT, 50, |t| (t * 300.0).sin()).unwrap();
        let y = u.map(|v| 2.0 * v + 1.0 / 3.0).unwrap();
        let io = IoRecord::new(u, y).unwrap();
        let mut buf = Vec::new();
        io.write_csv(&mut buf).unwrap();
        let back = IoRecord::read_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.len(), 50);
        for (a, b) in io.output.values().iter().zip(back.output.values()) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-9));
        }
        assert!(IoRecord::read_csv("time_s,value\n0,1\n".as_bytes(), Path::new("mem")).is_err());
    }

    #[test]
    fn rejects_bad_series() {
        assert!(TimeSeries::new(0.0, 0.0, vec![1.0]).is_err());
        assert!(TimeSeries::new(0.0, 1e-4, vec![]).is_err());
        assert!(TimeSeries::new(0.0, 1e-4, vec![f64::NAN]).is_err());
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&ts(&[1.0; 4]), 2).unwrap().values(), &[1.0; 4]);
        assert_eq!(
            moving_average(&ts(&[0.0, 2.0, 4.0]), 2).unwrap().values(),
            &[0.0, 1.0, 3.0]
        );
        assert!(moving_average(&ts(&[1.0, 2.0]), 0).is_err());
        assert!(moving_average(&ts(&[1.0, 2.0]), 3).is_err());
    }

    #[test]
    fn moving_average_reduces_step_noise() {
        // Residual std of the filtered noise on a step, over many seeds.
        let n = 400;
        let mut sq = 0.0;
        let mut count = 0usize;
        for seed in 0..1000 {
            let noise = truncated_gaussian_noise(seed, 0.01, 0.05, n, DEFAULT_DT).unwrap();
            let clean: Vec<f64> = (0..n).map(|i| if i < 200 { 0.0 } else { 1.0 }).collect();
            let noisy: Vec<f64> = clean.iter().zip(noise.values()).map(|(c, e)| c + e).collect();
            let f_clean = moving_average(&ts(&clean), 20).unwrap();
            let f_noisy = moving_average(&ts(&noisy), 20).unwrap();
            for i in 20..n {
                let d = f_noisy.values()[i] - f_clean.values()[i];
                sq += d * d;
                count += 1;
            }
        }
        let std = (sq / count as f64).sqrt();
        assert!(std < 0.01 / 20f64.sqrt() * 1.5, "residual std {std}");
    }

    #[test]
    fn centered_average_has_no_lag_on_ramps() {
        let ramp = TimeSeries::from_fn(0.0, 1.0, 50, |t| 2.0 * t).unwrap();
        let f = centered_moving_average(&ramp, 21).unwrap();
        for i in 10..40 {
            assert!((f.values()[i] - ramp.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn median_filter_examples() {
        let spike = median_filter(&ts(&[0.0, 0.0, 100.0, 0.0, 0.0]), 3).unwrap();
        assert_eq!(spike.values(), &[0.0; 5]);
        let ramp = TimeSeries::from_fn(0.0, 1.0, 30, |t| 0.5 * t - 3.0).unwrap();
        for w in [1, 3, 7, 21] {
            assert_eq!(median_filter(&ramp, w).unwrap(), ramp);
        }
        assert!(median_filter(&ts(&[1.0, 2.0, 3.0]), 2).is_err());
        assert!(median_filter(&ts(&[1.0, 2.0, 3.0]), 5).is_err());
    }

    #[test]
    fn truncated_noise_respects_bound_and_is_centered() {
        let s = truncated_gaussian_noise(7, 0.1, 0.3, 100_000, DEFAULT_DT).unwrap();
        assert!(s.values().iter().all(|v| v.abs() <= 0.3));
        assert!(s.mean().abs() <= 0.005, "mean {}", s.mean());
        let again = truncated_gaussian_noise(7, 0.1, 0.3, 100_000, DEFAULT_DT).unwrap();
        assert_eq!(s, again);
        assert!(TruncatedGaussian::new(0.1, 0.05).is_err());
        assert!(TruncatedGaussian::new(0.0, 1.0).is_err());
    }

    #[test]
    fn align_delay_shifts_output() {
        let input = TimeSeries::from_fn(0.0, 1.0, 200, |t| (t * 0.37).sin() + (t * 0.051).cos()).unwrap();
        let delayed: Vec<f64> = (0..200)
            .map(|i| {
                if i < 10 {
                    input.values()[0]
                } else {
                    input.values()[i - 10]
                }
            })
            .collect();
        let io = IoRecord::new(input.clone(), input.with_values(delayed).unwrap()).unwrap();
        assert_eq!(align_delay(&io, 0).unwrap(), io);
        let aligned = align_delay(&io, 10).unwrap();
        assert_eq!(aligned.len(), 190);
        let xcorr = |lag: i64| {
            let (a, b) = (aligned.input.values(), aligned.output.values());
            let mut s = 0.0;
            for i in 20..170 {
                s += a[i] * b[(i as i64 + lag) as usize];
            }
            s
        };
        let best = (-15..=15).max_by(|&x, &y| xcorr(x).total_cmp(&xcorr(y))).unwrap();
        assert_eq!(best, 0);
        assert!(align_delay(&io, 200).is_err());
    }

    #[test]
    fn normalize_examples() {
        let (n, s) = normalize_unit(&ts(&[0.0, 5.0, 10.0])).unwrap();
        assert_eq!(n.values(), &[-1.0, 0.0, 1.0]);
        assert_eq!(s, ScaleInfo { offset: 5.0, gain: 5.0 });
        let (_, s) = normalize_unit(&ts(&[-0.4, 0.1, 0.4])).unwrap();
        assert_eq!(s.gain, 0.4);
        assert!(matches!(
            normalize_unit(&ts(&[2.0, 2.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn remove_offset_examples() {
        let (s, off) = remove_offset(&ts(&[3.0, 4.0, 5.0])).unwrap();
        assert_eq!((s.values(), off), (&[0.0, 1.0, 2.0][..], 3.0));
        let z = ts(&[0.0, -1.0]);
        assert_eq!(remove_offset(&z).unwrap().0, z);
    }

    #[test]
    fn nrmse_examples() {
        let y = ts(&[1.0, -2.0, 3.5]);
        assert_eq!(nrmse(&y, &y).unwrap(), 0.0);
        assert_eq!(nrmse(&ts(&[3.0, 4.0]), &ts(&[0.0, 0.0])).unwrap(), 1.0);
        assert_eq!(nrmse(&ts(&[2.0]), &ts(&[1.0])).unwrap(), 0.5);
        assert!(nrmse(&ts(&[1.0]), &ts(&[1.0, 2.0])).is_err());
        assert!(matches!(
            nrmse(&ts(&[0.0, 0.0]), &ts(&[1.0, 2.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn csv_round_trip_at_nine_digits() {
        let s = TimeSeries::new(0.08, 1e-4, vec![1.234567891234, -0.5, 1e-7, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,value\n0.08,1.23456789\n"), "{text}");
        let back = TimeSeries::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back.len(), 4);
        assert!((back.dt() - 1e-4).abs() < 1e-15);
        assert_eq!(back.values()[2], 1e-7);
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0001), "0.0001");
        assert_eq!(format_sig9(-2.5), "-2.5");
        assert_eq!(format_sig9(123456789012.0), "1.23456789e11");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
    }
}
