//! The virtual tissue presets and their instrumentation.

use viscoclamp::plant::{make_plant, set_contractile_gain, PlantPreset};

fn main() -> viscoclamp::Result<()> {
    for preset in PlantPreset::ALL {
        let plant = make_plant(preset, 1)?;
        println!(
            "{preset:<10} branches {}  isometric force {:.3} V  noise std {:.4} V  io delay {} samples  apparent delay {} samples",
            plant.truth.branches.len(),
            plant.isometric_force(),
            plant.noise_std,
            plant.io_delay_samples,
            plant.apparent_delay_samples()
        );
    }
    let weak = set_contractile_gain(&make_plant(PlantPreset::Matched, 1)?, 0.5)?;
    println!(
        "matched at half contractile force: isometric force {:.3} V",
        weak.isometric_force()
    );
    Ok(())
}
