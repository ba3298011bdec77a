//! Paired FB-only and FF+FB clamps on identical noise seeds.

use viscoclamp::harness::{run_comparison, ProtocolConfig};

fn main() -> viscoclamp::Result<()> {
    let report = run_comparison(&ProtocolConfig {
        comparison_repeats: 3,
        ..ProtocolConfig::default()
    })?;
    println!(
        "{:>6} {:>12} {:>12} {:>10} {:>10}",
        "level", "FB ms", "FF+FB ms", "FB OS %", "FF+FB OS %"
    );
    let show = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{v:.2}"));
    for p in &report.pairs {
        println!(
            "{:>5}% {:>12} {:>12} {:>10} {:>10}",
            viscoclamp::harness::format_level(p.level_pct / 100.0),
            show(p.settling_fb_ms),
            show(p.settling_fffb_ms),
            show(p.overshoot_fb_pct),
            show(p.overshoot_fffb_pct)
        );
    }
    let faster = report.pairs.iter().filter(|p| p.fffb_faster()).count();
    println!("FF+FB faster in {faster} of {} pairs", report.pairs.len());
    Ok(())
}
