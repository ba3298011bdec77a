use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use viscoclamp::control::{Mode, PIGains};
use viscoclamp::harness::{
    export_report, run_comparison, run_contraction1, run_contraction2, single_clamp, summary_text, write_metrics_csv,
    ProtocolConfig, RunReport, METRICS_FILE, SUMMARY_FILE,
};
use viscoclamp::plant::{PlantPreset, VirtualPlant};
use viscoclamp::signals::{format_sig9, DEFAULT_DT};
use viscoclamp::sysid::{
    design_estimation_input, design_validation_input, fit, input_lower_bound, validate_recording, EstimationOptions,
    FitReport, ModelKind,
};
use viscoclamp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "viscoclamp",
    version,
    about = "Identify a viscoelastic tissue model and force-clamp a virtual tissue with it"
)]
struct Cli {
    /// Seed for the command's randomness (plant, input, noise or protocol base seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Protocol configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputKind {
    Linear,
    Nonlinear,
    Validation,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolName {
    C1,
    C2,
    Compare,
}

#[derive(Subcommand)]
enum Command {
    /// Build a virtual tissue and save it as JSON.
    MakePlant {
        #[arg(long)]
        preset: Option<PlantPreset>,
        /// Fraction of the full contractile force.
        #[arg(long)]
        contractile_gain: Option<f64>,
    },
    /// Generate an estimation or validation length input, optionally
    /// recording the plant's force response to it.
    DesignInput {
        #[arg(long, value_enum)]
        kind: InputKind,
        /// Reference length in volts.
        #[arg(long, default_value_t = 10.0)]
        ref_length: f64,
        /// Record through this plant and write `time_s,u_v,y_v`.
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Fit a model to a recorded experiment.
    Estimate {
        #[arg(long, default_value = "nonlinear")]
        kind: ModelKind,
        /// Linear model order.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Regularization weight pulling the estimate towards the initial guess.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        /// Hold the damping coefficient at this value.
        #[arg(long)]
        fix_c: Option<f64>,
        /// Estimation recording (`time_s,u_v,y_v`).
        #[arg(long = "in")]
        input: PathBuf,
        /// Validation recording.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Input-output delay in samples. Defaults to the plant's apparent
        /// delay when `--plant` is given, else 10.
        #[arg(long)]
        delay: Option<usize>,
        #[arg(long)]
        plant: Option<PathBuf>,
    },
    /// Score a fitted model on a recording.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run one force clamp and write its traces.
    Clamp {
        /// Clamp level as a fraction of the reference force.
        #[arg(long)]
        level: f64,
        #[arg(long, default_value = "fffb")]
        mode: Mode,
        /// Fit file; required for the feedforward modes.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        kp: Option<f64>,
        #[arg(long)]
        ki: Option<f64>,
    },
    /// Run a protocol and export its report.
    Protocol {
        #[arg(value_enum)]
        name: ProtocolName,
        /// Fit from an earlier run; required for c2.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Rewrite the metrics table and summary from a saved report.
    Report {
        /// `report.json` or the directory holding it.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ProtocolConfig> {
    match path {
        Some(p) => ProtocolConfig::load(p),
        None => Ok(ProtocolConfig::default()),
    }
}

fn load_fit(path: &Path) -> Result<FitReport> {
    FitReport::load(path).map_err(|e| Error::Config(format!("cannot use model file: {e}")))
}

fn out_or(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<bool> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::MakePlant {
            preset,
            contractile_gain,
        } => {
            let mut pc = config.plant.clone();
            if let Some(p) = preset {
                pc.preset = p;
            }
            if let Some(s) = cli.seed {
                pc.seed = s;
            }
            if let Some(g) = contractile_gain {
                pc.contractile_gain = g;
            }
            let plant = pc.build()?;
            let out = out_or(&cli.out, "plant.json");
            plant.save(&out)?;
            println!("wrote {} ({} seed {})", out.display(), pc.preset, pc.seed);
        }
        Command::DesignInput {
            kind,
            ref_length,
            plant,
        } => {
            let seed = cli.seed.unwrap_or(0);
            let plant = plant.as_deref().map(VirtualPlant::load).transpose()?;
            let dt = plant.as_ref().map_or(DEFAULT_DT, |p| p.dt);
            let u = match kind {
                InputKind::Linear => design_estimation_input(ModelKind::Linear, ref_length, dt, seed)?,
                InputKind::Nonlinear => design_estimation_input(ModelKind::Nonlinear, ref_length, dt, seed)?,
                InputKind::Validation => design_validation_input(ref_length, dt, seed)?,
            };
            let out = out_or(&cli.out, "input.csv");
            match plant {
                Some(p) => p.with_seed(seed).record(&u)?.save_csv(&out)?,
                None => u.save_csv(&out)?,
            }
            println!(
                "wrote {} ({} samples, bounds [{}, 0] V)",
                out.display(),
                u.len(),
                format_sig9(input_lower_bound(ref_length))
            );
        }
        Command::Estimate {
            kind,
            order,
            alpha,
            fix_c,
            input,
            val,
            delay,
            plant,
        } => {
            let est = viscoclamp::signals::IoRecord::load_csv(&input)?;
            let val = val
                .as_deref()
                .map(viscoclamp::signals::IoRecord::load_csv)
                .transpose()?;
            let delay = match (delay, plant) {
                (Some(d), _) => Some(d),
                (None, Some(p)) => Some(VirtualPlant::load(&p)?.apparent_delay_samples()),
                (None, None) => None,
            };
            let mut opts = match kind {
                ModelKind::Linear => EstimationOptions::linear(order),
                ModelKind::Nonlinear => config
                    .estimation
                    .options(delay.unwrap_or(EstimationOptions::nonlinear().delay_samples)),
            };
            opts.regularization_alpha = alpha;
            if fix_c.is_some() {
                opts.fix_c = fix_c;
            }
            if let Some(d) = delay {
                opts.delay_samples = d;
            }
            let mut report = fit(&est, val.as_ref(), &opts)?;
            report.seed = cli.seed;
            let out = out_or(&cli.out, "fit.json");
            report.save(&out)?;
            println!(
                "{} model: estimation nrmse {}, validation nrmse {}, {} iterations; wrote {}",
                report.model.kind(),
                format_sig9(report.estimation_nrmse),
                report.validation_nrmse.map_or("NA".into(), format_sig9),
                report.iterations,
                out.display()
            );
        }
        Command::Validate { model, input } => {
            let fit = load_fit(&model)?;
            let io = viscoclamp::signals::IoRecord::load_csv(&input)?;
            println!("{}", format_sig9(validate_recording(&fit, &io)?));
        }
        Command::Clamp {
            level,
            mode,
            model,
            plant,
            kp,
            ki,
        } => {
            let plant = VirtualPlant::load(&plant)?;
            let fit = model.as_deref().map(load_fit).transpose()?;
            let base = if mode == Mode::Fb {
                config.fb_only_gains
            } else {
                config.gains
            };
            let gains = PIGains::new(kp.unwrap_or(base.kp), ki.unwrap_or(base.ki))?;
            let delay = fit
                .as_ref()
                .map_or_else(|| plant.apparent_delay_samples(), |f| f.options.delay_samples);
            let rec = single_clamp(
                &plant,
                fit.as_ref().map(|f| &f.model),
                level,
                mode,
                gains,
                config.loop_settings(delay),
                cli.seed.unwrap_or(plant.seed),
            );
            let out = out_or(&cli.out, "clamp.csv");
            if let Some(t) = &rec.traces {
                t.save_csv(&out)?;
            }
            if let Some(m) = rec.metrics {
                println!(
                    "settling {} ms, overshoot {} %, nrmse {}; wrote {}",
                    m.settling_time_ms.map_or("NA".into(), format_sig9),
                    format_sig9(m.overshoot_pct),
                    format_sig9(m.nrmse_vs_reference),
                    out.display()
                );
            }
            if let Some(reason) = &rec.abort {
                eprintln!("clamp aborted: {reason}");
                return Ok(false);
            }
        }
        Command::Protocol { name, model } => {
            let mut config = config;
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let report = match name {
                ProtocolName::C1 => run_contraction1(&config)?,
                ProtocolName::Compare => run_comparison(&config)?,
                ProtocolName::C2 => {
                    let path =
                        model.ok_or_else(|| Error::Config("c2 needs --model with a fit from an earlier run".into()))?;
                    run_contraction2(&config, &load_fit(&path)?)?
                }
            };
            let out = cli
                .out
                .clone()
                .or_else(|| config.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from(format!("run-{}", report.protocol)));
            export_report(&report, &out)?;
            print!("{}", summary_text(&report));
            println!("wrote {}", out.display());
            return Ok(report.succeeded());
        }
        Command::Report { input } => {
            let path = if input.is_dir() {
                input.join("report.json")
            } else {
                input
            };
            let report = RunReport::load(&path)?;
            let dir = cli
                .out
                .clone()
                .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| viscoclamp_io(&dir, e))?;
            let metrics = dir.join(METRICS_FILE);
            let file = std::fs::File::create(&metrics).map_err(|e| viscoclamp_io(&metrics, e))?;
            write_metrics_csv(&report, std::io::BufWriter::new(file))?;
            let summary = dir.join(SUMMARY_FILE);
            std::fs::write(&summary, summary_text(&report)).map_err(|e| viscoclamp_io(&summary, e))?;
            print!("{}", summary_text(&report));
            return Ok(report.succeeded());
        }
    }
    Ok(true)
}

fn viscoclamp_io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}
