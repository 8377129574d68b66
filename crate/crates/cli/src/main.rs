use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsiamp::experiment::{emit_csv, emit_plotdata, run_sweep, SweepParameter, SweepSpec};
use dsiamp::{SiMode, SystemConfig};

#[derive(Parser, Debug)]
#[command(name = "dsiamp", version, about = "Monte Carlo sweeps for side-information aided AMP activity detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sweep the pilot length L.
    SweepL(RunArgs),
    /// Sweep p11 with the marginal activity probability held fixed.
    SweepP11(RunArgs),
    /// Run the base configuration only.
    Single(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SI modes: nosi, ssi, dsi, perfect, gdsi:<left>:<right>.
    #[arg(long, value_delimiter = ',', default_value = "nosi,ssi,dsi,perfect")]
    modes: Vec<String>,
    /// Evaluation trials per swept value.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Trials used to calibrate the threshold (default: a quarter of --trials).
    #[arg(long)]
    calibration_trials: Option<usize>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Calibrate the threshold to MDR = FAR.
    #[arg(long, value_enum, default_value_t = Switch::On)]
    calibrate: Switch,
    /// Comma-separated swept values (default: the built-in grid).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
}

fn build_spec(kind: &Command) -> anyhow::Result<(SweepSpec, &RunArgs)> {
    let (args, parameter, default_values): (&RunArgs, _, Vec<f64>) = match kind {
        Command::SweepL(a) => (a, SweepParameter::PilotLength, SweepSpec::DEFAULT_PILOT_LENGTHS.to_vec()),
        Command::SweepP11(a) => (a, SweepParameter::P11, SweepSpec::DEFAULT_P11.to_vec()),
        Command::Single(a) => (a, SweepParameter::PilotLength, Vec::new()),
    };
    let mut base = match &args.config {
        Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    let values = match (&args.values, kind) {
        (Some(_), Command::Single(_)) => bail!("--values is not accepted by `single`"),
        (Some(v), _) => v.clone(),
        (None, Command::Single(_)) => vec![base.pilot_len as f64],
        (None, _) => default_values,
    };
    let modes = args
        .modes
        .iter()
        .map(|m| m.trim().parse::<SiMode>())
        .collect::<Result<Vec<_>, _>>()?;
    let spec = SweepSpec {
        parameter,
        values,
        base,
        modes,
        trials: args.trials,
        calibration_trials: args.calibration_trials.unwrap_or(args.trials.div_ceil(4)),
        calibrate: args.calibrate == Switch::On,
    };
    spec.validate()?;
    Ok((spec, args))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (spec, args) = build_spec(&cli.command)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            bail!("--workers must be positive");
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build()?;
    let rows = pool.install(|| run_sweep(&spec))?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let csv = args.out.join("results.csv");
    emit_csv(&rows, &csv).with_context(|| format!("writing {}", csv.display()))?;
    if !matches!(cli.command, Command::Single(_)) {
        let dir: &Path = &args.out.join("plotdata");
        emit_plotdata(&rows, spec.parameter, dir).with_context(|| format!("writing {}", dir.display()))?;
    }
    for r in &rows {
        eprintln!(
            "{:>14} {}={:<6} MDR={:.4} FAR={:.4} NMSE={:.2} dB",
            r.mode,
            spec.parameter,
            spec.parameter.of_row(r),
            r.mdr,
            r.far,
            r.nmse_db
        );
    }
    eprintln!("wrote {}", csv.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
