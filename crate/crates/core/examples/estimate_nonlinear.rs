//! Record a virtual tissue and fit the nonlinear Maxwell model to it.

use viscoclamp::plant::{make_plant, PlantPreset};
use viscoclamp::sysid::{
    design_estimation_input, design_validation_input, fit_nonlinear, EstimationOptions, ModelKind,
};

fn main() -> viscoclamp::Result<()> {
    let plant = make_plant(PlantPreset::Matched, 1)?;
    let est = plant
        .clone()
        .with_seed(11)
        .record(&design_estimation_input(ModelKind::Nonlinear, 10.0, plant.dt, 1)?)?;
    let val = plant
        .clone()
        .with_seed(12)
        .record(&design_validation_input(10.0, plant.dt, 2)?)?;

    let opts = EstimationOptions {
        delay_samples: plant.apparent_delay_samples(),
        ..EstimationOptions::nonlinear()
    };
    let fit = fit_nonlinear(&est, Some(&val), &opts)?;
    let truth = plant.truth.as_maxwell().expect("matched preset has one branch");
    let got = fit.nonlinear_params().expect("nonlinear fit");
    println!("{:<4} {:>10} {:>10}", "", "true", "estimate");
    for (name, t, e) in [
        ("k1", truth.k1, got.k1),
        ("k2", truth.k2, got.k2),
        ("c", truth.c, got.c),
        ("n", truth.n, got.n),
    ] {
        println!("{name:<4} {t:>10.5} {e:>10.5}");
    }
    println!(
        "estimation NRMSE {:.5}, validation NRMSE {:.5}, {} iterations",
        fit.estimation_nrmse,
        fit.validation_nrmse.unwrap_or(f64::NAN),
        fit.iterations
    );
    Ok(())
}
