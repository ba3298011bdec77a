//! Forward and inverse simulation of the nonlinear Maxwell model, and the
//! round trip between them.

use viscoclamp::models::maxwell::{simulate_forward, simulate_inverse, MaxwellParams};
use viscoclamp::signals::{nrmse, TimeSeries, DEFAULT_DT};

fn main() -> viscoclamp::Result<()> {
    let p = MaxwellParams::new(10.0, 1.0, 0.01, 5.0)?;
    let f0 = 5.0;
    // A 20 ms ramp shortening followed by a hold.
    let x = TimeSeries::from_fn(0.0, DEFAULT_DT, 5001, |t| -0.1 * (t / 0.02).min(1.0))?;
    let force = simulate_forward(&p, &x, f0)?;
    println!(
        "force {:.4} V -> {:.4} V, minimum {:.4} V",
        force.first(),
        force.last(),
        force.min()
    );

    let x_back = simulate_inverse(&p, &force, 0.0)?;
    println!("forward/inverse round trip NRMSE {:.2e}", nrmse(&x, &x_back)?);
    Ok(())
}
