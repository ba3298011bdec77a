//! Fixed-step classical Runge-Kutta integration.

use crate::error::{Error, Result};

/// One classical RK4 step of `dy/dt = f(t, y)` over `[t, t + h]`.
///
/// Fails with a numeric error (stamped with the stage time) as soon as any
/// stage derivative is non-finite.
pub fn rk4_step<const N: usize, F>(mut f: F, y: &[f64; N], t: f64, h: f64) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let mut eval = |tt: f64, yy: &[f64; N]| -> Result<[f64; N]> {
        let d = f(tt, yy)?;
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(tt, "non-finite derivative"));
        }
        Ok(d)
    };
    let axpy = |a: &[f64; N], s: f64, b: &[f64; N]| -> [f64; N] {
        let mut out = *a;
        for (o, bi) in out.iter_mut().zip(b) {
            *o += s * bi;
        }
        out
    };
    let k1 = eval(t, y)?;
    let k2 = eval(t + 0.5 * h, &axpy(y, 0.5 * h, &k1))?;
    let k3 = eval(t + 0.5 * h, &axpy(y, 0.5 * h, &k2))?;
    let k4 = eval(t + h, &axpy(y, h, &k3))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_decay(h: f64) -> f64 {
        let steps = (1.0 / h).round() as usize;
        let mut y = [1.0];
        for k in 0..steps {
            y = rk4_step(|_, y: &[f64; 1]| Ok([-y[0]]), &y, k as f64 * h, h).unwrap();
        }
        y[0]
    }

    #[test]
    fn zero_field_leaves_state_unchanged() {
        let y = rk4_step(|_, _: &[f64; 2]| Ok([0.0, 0.0]), &[1.5, -2.0], 0.0, 0.3).unwrap();
        assert_eq!(y, [1.5, -2.0]);
    }

    #[test]
    fn exact_for_low_degree_polynomials() {
        let y = rk4_step(|_, _: &[f64; 1]| Ok([1.0]), &[0.0], 0.0, 0.1).unwrap();
        assert_eq!(y[0], 0.1);
        // dy/dt = 4 t^3 integrates to t^4 exactly.
        let y = rk4_step(|t, _: &[f64; 1]| Ok([4.0 * t * t * t]), &[1.0], 1.0, 0.5).unwrap();
        assert!((y[0] - 1.5f64.powi(4)).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence_on_decay() {
        let exact = (-1.0f64).exp();
        let e1 = (integrate_decay(0.1) - exact).abs();
        let e2 = (integrate_decay(0.05) - exact).abs();
        let ratio = e1 / e2;
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn non_finite_derivative_is_reported_with_time() {
        let err = rk4_step(
            |t, _: &[f64; 1]| Ok([if t > 0.6 { f64::NAN } else { 1.0 }]),
            &[0.0],
            0.5,
            0.2,
        )
        .unwrap_err();
        match err {
            Error::NumericFailure { time, .. } => assert!((time - 0.7).abs() < 1e-12),
            e => panic!("unexpected {e}"),
        }
        assert!(rk4_step(|_, _: &[f64; 1]| Ok([0.0]), &[0.0], 0.0, 0.0).is_err());
    }
}
