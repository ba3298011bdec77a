//! One force clamp in each control mode with a freshly estimated model.
//! Writes the FF+FB traces to `force_clamp.csv` in the working directory.

use std::path::Path;

use viscoclamp::control::{LoopSettings, Mode, PIGains};
use viscoclamp::harness::{single_clamp, DEFAULT_FB_ONLY_KI, DEFAULT_KI};
use viscoclamp::plant::{make_plant, PlantPreset};
use viscoclamp::sysid::{design_estimation_input, fit_nonlinear, EstimationOptions, ModelKind};

fn main() -> viscoclamp::Result<()> {
    let plant = make_plant(PlantPreset::Matched, 1)?;
    let delay = plant.apparent_delay_samples();
    let est = plant
        .clone()
        .with_seed(11)
        .record(&design_estimation_input(ModelKind::Nonlinear, 10.0, plant.dt, 1)?)?;
    let fit = fit_nonlinear(
        &est,
        None,
        &EstimationOptions {
            delay_samples: delay,
            ..EstimationOptions::nonlinear()
        },
    )?;
    let settings = LoopSettings {
        ff_lead_samples: delay + 1,
        ..LoopSettings::default()
    };
    for mode in [Mode::Ff, Mode::Fb, Mode::FfFb] {
        let ki = if mode == Mode::Fb {
            DEFAULT_FB_ONLY_KI
        } else {
            DEFAULT_KI
        };
        let gains = if mode.uses_feedback() {
            PIGains::new(0.0, ki)?
        } else {
            PIGains::zero()
        };
        let rec = single_clamp(&plant, Some(&fit.model), 0.05, mode, gains, settings, 5);
        match (rec.metrics, &rec.abort) {
            (Some(m), _) => println!(
                "{:<5} settling {:>7} ms  overshoot {:.3} %  tracking NRMSE {:.4}",
                mode.key(),
                m.settling_time_ms.map_or("never".into(), |s| format!("{s:.1}")),
                m.overshoot_pct,
                m.nrmse_vs_reference
            ),
            (None, reason) => println!("{:<5} aborted: {reason:?}", mode.key()),
        }
        if mode == Mode::FfFb {
            if let Some(t) = &rec.traces {
                t.save_csv(Path::new("force_clamp.csv"))?;
            }
        }
    }
    Ok(())
}
