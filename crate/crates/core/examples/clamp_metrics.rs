//! Settling time and overshoot on hand-built force traces.

use viscoclamp::metrics::{overshoot, overshoot_from_min, settling_time, SettlingSpec, SETTLING_BAND};
use viscoclamp::signals::{TimeSeries, DEFAULT_DT};

fn main() -> viscoclamp::Result<()> {
    let (t0, tf, level, tau) = (0.08, 0.6, 0.05, 0.01);
    let y = TimeSeries::from_fn(0.0, DEFAULT_DT, 6001, |t| {
        if t < t0 {
            1.0
        } else {
            level - 0.02 * (-(t - t0) / tau).exp() + 0.97 * (-(t - t0) / (tau / 4.0)).exp()
        }
    })?;
    let spec = SettlingSpec::new(t0, tf);
    println!("band +/- {:.2}% of the reference force", SETTLING_BAND * 100.0);
    match settling_time(&y, 1.0, level, &spec)? {
        Some(ms) => println!("settling time {ms:.2} ms"),
        None => println!("never settles"),
    }
    println!("overshoot {:.3} %", overshoot(&y, 1.0, level * 100.0, &spec)?);
    println!(
        "overshoot for a minimum of 0.04 at the 5% level: {:.4} %",
        overshoot_from_min(0.04, 5.0)?
    );
    Ok(())
}
