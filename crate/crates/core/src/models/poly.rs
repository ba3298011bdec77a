//! Real polynomials stored with coefficients in descending powers.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Horner evaluation at a complex point.
pub fn poly_eval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs.iter().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

pub fn poly_eval_real(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// `(x + a)^k`-style helper: the integer power of a polynomial.
pub fn poly_pow(p: &[f64], k: usize) -> Vec<f64> {
    (0..k).fold(vec![1.0], |acc, _| poly_mul(&acc, p))
}

/// Monic polynomial times `lead` with the given roots. Conjugate pairs must
/// be present together; the imaginary residue is dropped.
pub fn poly_from_roots(roots: &[Complex64], lead: f64) -> Vec<f64> {
    let mut acc = vec![Complex64::new(lead, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
        for (i, a) in acc.iter().enumerate() {
            next[i] += a;
            next[i + 1] -= a * r;
        }
        acc = next;
    }
    acc.into_iter().map(|c| c.re).collect()
}

/// Roots via eigenvalues of the companion matrix, polished by a few Newton
/// steps on the original polynomial.
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("polynomial coefficients must be finite"));
    }
    let first = coeffs
        .iter()
        .position(|&c| c != 0.0)
        .ok_or_else(|| Error::invalid("zero polynomial has no well-defined roots"))?;
    let p = &coeffs[first..];
    let deg = p.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = p[0];
    let mut companion = DMatrix::<f64>::zeros(deg, deg);
    for j in 0..deg {
        companion[(0, j)] = -p[j + 1] / lead;
    }
    for i in 1..deg {
        companion[(i, i - 1)] = 1.0;
    }
    let eig = companion.complex_eigenvalues();
    let dp: Vec<f64> = p[..deg].iter().enumerate().map(|(i, c)| c * (deg - i) as f64).collect();
    let roots = eig
        .iter()
        .map(|&z0| {
            let mut z = z0;
            let mut best = poly_eval(p, z).norm();
            for _ in 0..4 {
                let d = poly_eval(&dp, z);
                if d.norm() == 0.0 {
                    break;
                }
                let cand = z - poly_eval(p, z) / d;
                let r = poly_eval(p, cand).norm();
                if r < best {
                    best = r;
                    z = cand;
                } else {
                    break;
                }
            }
            // Keep real roots real and pairs conjugate.
            if z0.im == 0.0 {
                z.im = 0.0;
            }
            z
        })
        .collect();
    Ok(roots)
}
