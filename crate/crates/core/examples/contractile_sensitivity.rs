//! A model estimated at full contractile force, reused after the tissue
//! weakens to half force, against a model re-estimated on the weak tissue.

use viscoclamp::control::Mode;
use viscoclamp::harness::{run_contraction1, run_contraction2, ProtocolConfig};

fn main() -> viscoclamp::Result<()> {
    let base = ProtocolConfig {
        levels: vec![0.05, 0.10],
        repeats: 1,
        repeat_estimations: 0,
        post_hoc_linear: false,
        single_mode_clamps: false,
        ..ProtocolConfig::default()
    };
    let strong = run_contraction1(&base)?;
    let frozen = strong.model_fit().expect("estimation succeeded").clone();

    let mut weak = base.clone();
    weak.plant.contractile_gain = 0.5;
    let with_frozen = run_contraction2(&weak, &frozen)?;
    let re_estimated = run_contraction1(&weak)?;

    for level in [0.05, 0.10] {
        let nrmse = |r: &viscoclamp::harness::RunReport| {
            r.clamps_for(level, Mode::FfFb)
                .filter_map(|c| c.metrics.map(|m| m.nrmse_vs_reference))
                .next()
                .unwrap_or(f64::NAN)
        };
        println!(
            "{:>3}%: tracking NRMSE frozen {:.4}, re-estimated {:.4}",
            level * 100.0,
            nrmse(&with_frozen),
            nrmse(&re_estimated)
        );
    }
    Ok(())
}
