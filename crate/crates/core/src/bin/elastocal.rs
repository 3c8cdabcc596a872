use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elastocal::ident::IdentificationMode;
use elastocal::io::cli::{run_command, Inputs, Verb, REPORT_DIR_ENV};
use elastocal::io::project::parse_project;

/// Elastostatic calibration and compliance compensation for 6R robots with
/// a spring gravity compensator.
#[derive(Parser, Debug)]
#[command(version, after_help = "Verbs: simulate, identify-geometry, identify-elastostatics, plan, compensate, evaluate.\n\
The report directory is --report-dir, else $ELASTOCAL_OUT_DIR, else --out.")]
struct Args {
    /// Pipeline stage to run.
    verb: String,
    /// Project file.
    #[arg(short, long, default_value = "project.toml")]
    config: PathBuf,
    /// Artifact directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    report_dir: Option<PathBuf>,
    /// Compensator marker traces (identify-geometry).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Loaded/unloaded marker measurements (identify-elastostatics).
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Existing plan (plan, simulate).
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Held-out measurements (evaluate).
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Fitted compensator geometry (identify-elastostatics).
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Identified stiffness model (compensate, evaluate).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target configurations and loads (compensate).
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Fit a single constant joint-2 compliance.
    #[arg(long)]
    serial_only: bool,
    /// Iterate the joint-space correction.
    #[arg(long)]
    refine: bool,
}

fn run(args: Args) -> elastocal::Result<()> {
    let verb: Verb = args.verb.parse()?;
    let config = parse_project(&args.config)?;
    let report_dir = args
        .report_dir
        .or_else(|| std::env::var_os(REPORT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    let inputs = Inputs {
        out_dir: args.out,
        report_dir,
        traces: args.traces,
        measurements: args.measurements,
        plan: args.plan,
        validation: args.validation,
        geometry: args.geometry,
        model: args.model,
        targets: args.targets,
        mode: if args.serial_only {
            IdentificationMode::SerialOnly
        } else {
            IdentificationMode::CompensatorAware
        },
        refine: args.refine,
    };
    let outcome = run_command(verb, &config, &inputs)?;
    for path in &outcome.artifacts {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
