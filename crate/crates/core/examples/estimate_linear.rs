//! Fit linear transfer functions of orders 1 to 3 and compare them with
//! the nonlinear model on the same validation record.

use viscoclamp::plant::{make_plant, PlantPreset};
use viscoclamp::sysid::{
    design_estimation_input, design_validation_input, fit_linear, fit_nonlinear, select_linear_order,
    EstimationOptions, ModelKind,
};

fn main() -> viscoclamp::Result<()> {
    let plant = make_plant(PlantPreset::Matched, 2)?;
    let delay = plant.apparent_delay_samples();
    let lin = plant
        .clone()
        .with_seed(21)
        .record(&design_estimation_input(ModelKind::Linear, 10.0, plant.dt, 1)?)?;
    let nl = plant
        .clone()
        .with_seed(22)
        .record(&design_estimation_input(ModelKind::Nonlinear, 10.0, plant.dt, 2)?)?;
    let val = plant
        .clone()
        .with_seed(23)
        .record(&design_validation_input(10.0, plant.dt, 3)?)?;

    for order in 1..=3 {
        let fit = fit_linear(&lin, Some(&val), order, delay)?;
        println!(
            "linear order {order}: estimation NRMSE {:.4}, validation NRMSE {:.4}",
            fit.estimation_nrmse,
            fit.validation_nrmse.unwrap_or(f64::NAN)
        );
    }
    let (order, _) = select_linear_order(&lin, &val, delay)?;
    println!("selected order {order}");

    let opts = EstimationOptions {
        delay_samples: delay,
        ..EstimationOptions::nonlinear()
    };
    let fit = fit_nonlinear(&nl, Some(&val), &opts)?;
    println!(
        "nonlinear: validation NRMSE {:.4}",
        fit.validation_nrmse.unwrap_or(f64::NAN)
    );
    Ok(())
}
