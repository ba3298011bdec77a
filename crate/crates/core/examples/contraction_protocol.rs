//! The first contraction protocol, then the second contraction with the
//! frozen model. Exports both runs under `runs/` in the working directory.

use std::path::Path;

use viscoclamp::harness::{export_report, run_contraction1, run_contraction2, summary_text, ProtocolConfig};

fn main() -> viscoclamp::Result<()> {
    let config = ProtocolConfig::default();
    let first = run_contraction1(&config)?;
    print!("{}", summary_text(&first));
    export_report(&first, Path::new("runs/c1"))?;

    let fit = first.model_fit().expect("estimation succeeded").clone();
    let second = run_contraction2(&config, &fit)?;
    print!("\n{}", summary_text(&second));
    export_report(&second, Path::new("runs/c2"))?;
    Ok(())
}
