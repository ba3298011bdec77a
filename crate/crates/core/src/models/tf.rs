//! Biproper rational transfer functions in either time domain.
//!
//! Coefficients are stored in descending powers of `z` (or `s`), so a
//! discrete model reads `H(z) = (b0 + b1 z^-1 + ... + bn z^-n) / (1 + a1
//! z^-1 + ... + an z^-n)` with `num = [b0..bn]` and `den = [1, a1..an]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::{poly_eval, poly_from_roots, poly_mul, poly_pow, poly_roots};
use crate::error::{Error, Result};
use crate::signals::TimeSeries;

/// Relative tolerance on a root's real part below which it is treated as
/// lying on the imaginary axis.
const AXIS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum Domain {
    Discrete {
        #[serde(rename = "Ts")]
        ts: f64,
    },
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TfFile", into = "TfFile")]
pub struct RationalTransferFunction {
    num: Vec<f64>,
    den: Vec<f64>,
    domain: Domain,
}

/// On-disk layout: `{order, num[], den[], domain, Ts}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TfFile {
    order: usize,
    num: Vec<f64>,
    den: Vec<f64>,
    #[serde(flatten)]
    domain: Domain,
}

impl TryFrom<TfFile> for RationalTransferFunction {
    type Error = Error;

    fn try_from(f: TfFile) -> Result<Self> {
        let tf = Self::new(f.num, f.den, f.domain)?;
        if tf.order() != f.order {
            return Err(Error::invalid(format!(
                "declared order {} does not match coefficients (order {})",
                f.order,
                tf.order()
            )));
        }
        Ok(tf)
    }
}

impl From<RationalTransferFunction> for TfFile {
    fn from(tf: RationalTransferFunction) -> Self {
        TfFile {
            order: tf.order(),
            num: tf.num,
            den: tf.den,
            domain: tf.domain,
        }
    }
}

/// Which numerator zeros were touched when inverting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InversionReport {
    /// Right-half-plane zeros that were mirrored to the left half plane.
    pub mirrored: Vec<Complex64>,
    /// Zeros on the imaginary axis, left in place; the inverse is only
    /// marginally stable when this is non-empty.
    pub on_axis: Vec<Complex64>,
}

impl RationalTransferFunction {
    /// Builds a biproper model, scaling both polynomials so the denominator
    /// is monic.
    pub fn new(num: Vec<f64>, den: Vec<f64>, domain: Domain) -> Result<Self> {
        if num.len() != den.len() || den.is_empty() {
            return Err(Error::invalid(format!(
                "biproper model needs equal-degree polynomials, got {} and {} coefficients",
                num.len(),
                den.len()
            )));
        }
        if num.iter().chain(&den).any(|c| !c.is_finite()) {
            return Err(Error::invalid("transfer-function coefficients must be finite"));
        }
        if den[0] == 0.0 {
            return Err(Error::invalid("leading denominator coefficient is zero"));
        }
        if let Domain::Discrete { ts } = domain {
            if !(ts > 0.0 && ts.is_finite()) {
                return Err(Error::invalid(format!("sample period must be positive, got {ts}")));
            }
        }
        let lead = den[0];
        Ok(Self {
            num: num.into_iter().map(|c| c / lead).collect(),
            den: den.into_iter().map(|c| c / lead).collect(),
            domain,
        })
    }

    pub fn static_gain(gain: f64, domain: Domain) -> Result<Self> {
        Self::new(vec![gain], vec![1.0], domain)
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Gain at zero frequency (`z = 1` or `s = 0`).
    pub fn dc_gain(&self) -> f64 {
        match self.domain {
            Domain::Discrete { .. } => self.num.iter().sum::<f64>() / self.den.iter().sum::<f64>(),
            Domain::Continuous => self.num[self.order()] / self.den[self.order()],
        }
    }

    /// Frequency response at angular frequency `omega` (rad/s).
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let point = match self.domain {
            Domain::Continuous => Complex64::new(0.0, omega),
            Domain::Discrete { ts } => Complex64::from_polar(1.0, omega * ts),
        };
        poly_eval(&self.num, point) / poly_eval(&self.den, point)
    }

    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        poly_roots(&self.num)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        poly_roots(&self.den)
    }

    /// All poles strictly inside the stability region of the domain.
    pub fn is_stable(&self) -> Result<bool> {
        let poles = self.poles()?;
        Ok(match self.domain {
            Domain::Continuous => poles.iter().all(|p| p.re < 0.0),
            Domain::Discrete { .. } => poles.iter().all(|p| p.norm() < 1.0),
        })
    }
}

/// Difference equation from quiescent history:
/// `y[k] = sum b_i u[k-i] - sum_{i>=1} a_i y[k-i]`.
pub fn simulate_discrete_tf(tf: &RationalTransferFunction, u: &TimeSeries) -> Result<TimeSeries> {
    let Domain::Discrete { ts } = tf.domain else {
        return Err(Error::invalid("simulate_discrete_tf needs a discrete-time model"));
    };
    if (ts - u.dt()).abs() > 1e-9 * ts {
        return Err(Error::invalid(format!(
            "model sample period {ts} differs from signal sample period {}",
            u.dt()
        )));
    }
    let (b, a) = (&tf.num, &tf.den);
    let uv = u.values();
    let mut y = Vec::with_capacity(uv.len());
    for k in 0..uv.len() {
        let mut acc = 0.0;
        for (i, bi) in b.iter().enumerate().take(k + 1) {
            acc += bi * uv[k - i];
        }
        for (i, ai) in a.iter().enumerate().skip(1).take(k) {
            acc -= ai * y[k - i];
        }
        y.push(acc);
    }
    let out = u.with_values(y);
    out.map_err(|_| Error::numeric(u.t_end(), "discrete simulation diverged"))
}

/// Bilinear map `z = (1 + sT/2) / (1 - sT/2)`, no prewarping.
pub fn to_continuous(tf: &RationalTransferFunction) -> Result<RationalTransferFunction> {
    let Domain::Discrete { ts } = tf.domain else {
        return Err(Error::invalid("to_continuous needs a discrete-time model"));
    };
    let n = tf.order();
    let plus = [ts / 2.0, 1.0];
    let minus = [-ts / 2.0, 1.0];
    let map = |coeffs: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        for (i, c) in coeffs.iter().enumerate() {
            let term = poly_mul(&poly_pow(&plus, n - i), &poly_pow(&minus, i));
            for (o, t) in out.iter_mut().zip(term) {
                *o += c * t;
            }
        }
        out
    };
    let (num, den) = (map(&tf.num), map(&tf.den));
    // The s^n coefficient is (T/2)^n (-1)^n D(-1): a pole at z = -1 has no
    // finite continuous counterpart.
    let at_minus_one: f64 = tf
        .den
        .iter()
        .enumerate()
        .map(|(i, a)| if (n - i).is_multiple_of(2) { *a } else { -a })
        .sum();
    let scale: f64 = tf.den.iter().map(|a| a.abs()).sum();
    if at_minus_one.abs() <= 1e-12 * scale {
        return Err(Error::numeric(0.0, "discrete pole at z = -1 has no bilinear preimage"));
    }
    RationalTransferFunction::new(num, den, Domain::Continuous)
}

/// Bilinear map `s = (2/T) (z - 1) / (z + 1)`, no prewarping.
pub fn to_discrete(tf: &RationalTransferFunction, ts: f64) -> Result<RationalTransferFunction> {
    if tf.domain != Domain::Continuous {
        return Err(Error::invalid("to_discrete needs a continuous-time model"));
    }
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::invalid(format!("sample period must be positive, got {ts}")));
    }
    let n = tf.order();
    let k = 2.0 / ts;
    let map = |coeffs: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n + 1];
        for (i, c) in coeffs.iter().enumerate() {
            let scale = c * k.powi((n - i) as i32);
            let term = poly_mul(&poly_pow(&[1.0, -1.0], n - i), &poly_pow(&[1.0, 1.0], i));
            for (o, t) in out.iter_mut().zip(term) {
                *o += scale * t;
            }
        }
        out
    };
    let (num, den) = (map(&tf.num), map(&tf.den));
    let scale: f64 = tf
        .den
        .iter()
        .enumerate()
        .map(|(i, a)| (a * k.powi((n - i) as i32)).abs())
        .sum();
    if den[0].abs() <= 1e-12 * scale {
        return Err(Error::numeric(0.0, "continuous pole at s = 2/T has no bilinear image"));
    }
    RationalTransferFunction::new(num, den, Domain::Discrete { ts })
}

/// Swaps numerator and denominator after mirroring right-half-plane zeros
/// onto the left half plane (`Re -> -Re`), which keeps `|H(iw)|` intact.
pub fn invert_tf(tf: &RationalTransferFunction) -> Result<RationalTransferFunction> {
    invert_tf_with_report(tf).map(|(inv, _)| inv)
}

pub fn invert_tf_with_report(tf: &RationalTransferFunction) -> Result<(RationalTransferFunction, InversionReport)> {
    if tf.domain != Domain::Continuous {
        return Err(Error::invalid("zero mirroring is defined for continuous-time models"));
    }
    if tf.num.iter().all(|&c| c == 0.0) {
        return Err(Error::invalid("cannot invert a model with a zero numerator"));
    }
    let lead = tf.num[0];
    if lead == 0.0 {
        return Err(Error::invalid(
            "numerator degree below denominator degree; the inverse would be improper",
        ));
    }
    let zeros = tf.zeros()?;
    let scale = zeros.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut report = InversionReport::default();
    let mut any_mirrored = false;
    let mirrored: Vec<Complex64> = zeros
        .iter()
        .map(|&z| {
            if z.re.abs() <= AXIS_TOL * scale {
                report.on_axis.push(z);
                z
            } else if z.re > 0.0 {
                report.mirrored.push(z);
                any_mirrored = true;
                Complex64::new(-z.re, z.im)
            } else {
                z
            }
        })
        .collect();
    let num = if any_mirrored {
        poly_from_roots(&mirrored, lead)
    } else {
        tf.num.clone()
    };
    let inv = RationalTransferFunction::new(tf.den.clone(), num, Domain::Continuous)?;
    Ok((inv, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::DEFAULT_DT;

    fn cont(num: &[f64], den: &[f64]) -> RationalTransferFunction {
        RationalTransferFunction::new(num.to_vec(), den.to_vec(), Domain::Continuous).unwrap()
    }

    fn disc(num: &[f64], den: &[f64], ts: f64) -> RationalTransferFunction {
        RationalTransferFunction::new(num.to_vec(), den.to_vec(), Domain::Discrete { ts }).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn construction_rules() {
        assert!(RationalTransferFunction::new(vec![1.0], vec![1.0, 2.0], Domain::Continuous).is_err());
        let tf = cont(&[2.0, 4.0], &[2.0, 10.0]);
        assert_eq!(tf.den(), &[1.0, 5.0]);
        assert_eq!(tf.num(), &[1.0, 2.0]);
    }

    #[test]
    fn difference_equation_examples() {
        let u = TimeSeries::from_fn(0.0, DEFAULT_DT, 20, |t| (t * 3e3).sin()).unwrap();
        let id = disc(&[1.0], &[1.0], DEFAULT_DT);
        assert_eq!(simulate_discrete_tf(&id, &u).unwrap(), u);
        let half = disc(&[0.5], &[1.0], DEFAULT_DT);
        let y = simulate_discrete_tf(&half, &u).unwrap();
        assert!(y.values().iter().zip(u.values()).all(|(a, b)| *a == 0.5 * b));
        let other = disc(&[1.0], &[1.0], 1e-3);
        assert!(simulate_discrete_tf(&other, &u).is_err());
    }

    #[test]
    fn first_order_step_matches_recursion_closed_form() {
        // y[k] = b0 u[k] + b1 u[k-1] + p y[k-1] with a unit step.
        let (b0, b1, p) = (0.4, -0.1, 0.8);
        let tf = disc(&[b0, b1], &[1.0, -p], DEFAULT_DT);
        let u = TimeSeries::constant(0.0, DEFAULT_DT, 60, 1.0).unwrap();
        let y = simulate_discrete_tf(&tf, &u).unwrap();
        let ss = (b0 + b1) / (1.0 - p);
        for (k, yk) in y.values().iter().enumerate() {
            let closed = ss + (b0 - ss) * p.powi(k as i32);
            assert!((yk - closed).abs() < 1e-12, "k={k}");
        }
        assert_eq!(y.first(), b0);
    }

    #[test]
    fn bilinear_static_gain_and_dc() {
        let g = disc(&[2.5], &[1.0], 0.01);
        let c = to_continuous(&g).unwrap();
        assert_eq!(c.num(), &[2.5]);
        let tf = disc(&[0.3, -0.1, 0.05], &[1.0, -1.2, 0.4], 0.01);
        let c = to_continuous(&tf).unwrap();
        assert!((tf.dc_gain() - c.dc_gain()).abs() < 1e-12);
        let back = to_discrete(&c, 0.01).unwrap();
        assert!(close(back.num(), tf.num(), 1e-12));
        assert!(close(back.den(), tf.den(), 1e-12));
    }

    #[test]
    fn bilinear_rejects_pole_at_minus_one() {
        let tf = disc(&[1.0, 0.0], &[1.0, 1.0], 0.01);
        assert!(matches!(to_continuous(&tf), Err(Error::NumericFailure { .. })));
    }

    #[test]
    fn inversion_examples() {
        let inv = invert_tf(&cont(&[1.0, 2.0], &[1.0, 5.0])).unwrap();
        assert_eq!((inv.num(), inv.den()), (&[1.0, 5.0][..], &[1.0, 2.0][..]));
        let (inv, report) = invert_tf_with_report(&cont(&[1.0, -3.0], &[1.0, 5.0])).unwrap();
        assert!(close(inv.num(), &[1.0, 5.0], 1e-12));
        assert!(close(inv.den(), &[1.0, 3.0], 1e-12));
        assert_eq!(report.mirrored.len(), 1);
        assert!(invert_tf(&cont(&[0.0, 0.0], &[1.0, 5.0])).is_err());
        assert!(invert_tf(&cont(&[0.0, 1.0], &[1.0, 5.0])).is_err());
    }

    #[test]
    fn axis_zeros_are_flagged_not_moved() {
        let (inv, report) = invert_tf_with_report(&cont(&[1.0, 0.0, 4.0], &[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(report.on_axis.len(), 2);
        assert!(report.mirrored.is_empty());
        assert_eq!(inv.den(), &[1.0, 0.0, 4.0]);
    }

    #[test]
    fn inverse_magnitude_is_reciprocal_for_minimum_phase() {
        let h = cont(&[2.0, 3.0, 1.0], &[1.0, 4.0, 5.0]);
        let inv = invert_tf(&h).unwrap();
        for w in [0.1, 1.0, 10.0] {
            let prod = h.frequency_response(w).norm() * inv.frequency_response(w).norm();
            assert!((prod - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let tf = disc(&[0.1, 0.2], &[1.0, -0.5], 1e-4);
        let text = serde_json::to_string(&tf).unwrap();
        assert!(text.contains("\"order\":1") && text.contains("\"Ts\":0.0001"), "{text}");
        let back: RationalTransferFunction = serde_json::from_str(&text).unwrap();
        assert_eq!(back, tf);
        let c = cont(&[1.0], &[1.0]);
        let back: RationalTransferFunction = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<RationalTransferFunction>(
            r#"{"order":2,"num":[1,2],"den":[1,3],"domain":"continuous"}"#
        )
        .is_err());
    }
}
