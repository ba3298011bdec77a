//! Spread of repeated estimates with and without a fixed damping
//! coefficient and a pull towards the initial guess.

use viscoclamp::plant::{make_plant, PlantPreset};
use viscoclamp::sysid::{design_estimation_input, fit_nonlinear, parameter_cv, EstimationOptions, ModelKind};

fn main() -> viscoclamp::Result<()> {
    let plant = make_plant(PlantPreset::AsmLike, 1)?;
    let u = design_estimation_input(ModelKind::Nonlinear, 10.0, plant.dt, 1)?;
    let records: Vec<_> = (0..5)
        .map(|s| plant.clone().with_seed(100 + s).record(&u))
        .collect::<Result<_, _>>()?;
    let delay = plant.apparent_delay_samples();

    let free = EstimationOptions {
        delay_samples: delay,
        ..EstimationOptions::nonlinear()
    };
    let regularized = EstimationOptions {
        delay_samples: delay,
        ..EstimationOptions::regularized(0.01, 0.01)
    };
    for (name, opts) in [("free", free), ("fixed c, alpha 0.01", regularized)] {
        let estimates = records
            .iter()
            .map(|io| fit_nonlinear(io, None, &opts).map(|f| f.nonlinear_params().expect("nonlinear fit")))
            .collect::<Result<Vec<_>, _>>()?;
        let [k1, k2, c, n] = parameter_cv(&estimates)?;
        println!("{name:<20} CV k1 {k1:.4}  k2 {k2:.4}  c {c:.4}  n {n:.4}");
    }
    Ok(())
}
