//! Estimation and validation length inputs: bounds, durations and seeding.

use viscoclamp::signals::DEFAULT_DT;
use viscoclamp::sysid::{design_estimation_input, design_validation_input, input_lower_bound, ModelKind};

fn main() -> viscoclamp::Result<()> {
    let ref_length = 10.0;
    println!("allowed range [{}, 0] V", input_lower_bound(ref_length));
    for (name, u) in [
        (
            "linear",
            design_estimation_input(ModelKind::Linear, ref_length, DEFAULT_DT, 1)?,
        ),
        (
            "nonlinear",
            design_estimation_input(ModelKind::Nonlinear, ref_length, DEFAULT_DT, 1)?,
        ),
        ("validation", design_validation_input(ref_length, DEFAULT_DT, 1)?),
    ] {
        println!(
            "{name:<10} {:>6} samples ({:.2} s), min {:+.4} V, max {:+.4} V",
            u.len(),
            u.t_end() - u.t_start(),
            u.min(),
            u.max()
        );
    }
    let a = design_estimation_input(ModelKind::Nonlinear, ref_length, DEFAULT_DT, 7)?;
    let b = design_estimation_input(ModelKind::Nonlinear, ref_length, DEFAULT_DT, 7)?;
    println!("same seed reproduces the input: {}", a == b);
    Ok(())
}
