use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vacqis::config::{Axis, Config};
use vacqis::{CliError, SweepFormat};

/// Solver, simulator and cross-validation harness for a multi-server retrial
/// queueing-inventory system with server vacations and (s,Q) replenishment.
///
/// Exit codes: 0 ok, 1 configuration or I/O error, 2 unstable model,
/// 3 numerical failure. VACQIS_WORKERS sets the worker-pool size.
#[derive(Parser)]
#[command(name = "vacqis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; omitted keys take baseline values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a parameter, e.g. --set lambda=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Double M until the tail mass above M drops below 1e-6.
    #[arg(long = "auto-M")]
    auto_m: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Base seed; replication i uses stream i of this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model and write its measures as CSV.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write diagnostics here instead of stderr.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        /// Write the per-level stationary vectors here.
        #[arg(long)]
        dump_solution: Option<PathBuf>,
        /// Scale every rate of one transition kind, e.g. service=2 (test hook).
        #[arg(long)]
        perturb: Option<String>,
    },
    /// Evaluate a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept parameter and values, e.g. --param lambda=2,2.5,3 (repeatable;
        /// several axes form a cartesian grid). Adds to [[sweep]] in the config.
        #[arg(long = "param", value_name = "NAME=V1,V2,...")]
        params: Vec<String>,
        #[arg(long, value_enum, default_value = "long")]
        format: Format,
    },
    /// Estimate the measures by discrete-event simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Write the event trace of replication 0 here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare analytic and simulated measures.
    Validate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sim: SimArgs,
        /// Perturb the analytic generator only, e.g. replenishment=2.
        #[arg(long)]
        perturb: Option<String>,
    },
    /// List the states of one orbit level.
    DumpSpace {
        #[command(flatten)]
        common: Common,
    },
    /// Write the generator blocks in coordinate form.
    DumpGenerator {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        perturb: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Long,
    Wide,
}

fn load(common: &Common) -> Result<Config, CliError> {
    let mut cfg = Config::load(common.config.as_deref())?;
    for s in &common.set {
        cfg.apply_override(s)?;
    }
    if common.auto_m {
        cfg.solver.auto_m = true;
    }
    Ok(cfg)
}

fn apply_sim(cfg: &mut Config, a: &SimArgs) {
    if let Some(s) = a.seed {
        cfg.sim.seed = s;
    }
    if let Some(r) = a.reps {
        cfg.sim.reps = r;
    }
    if let Some(h) = a.horizon {
        cfg.sim.window.horizon = h;
    }
    if let Some(w) = a.warmup {
        cfg.sim.window.warmup = w;
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn perturbation(spec: &Option<String>) -> Result<Option<vacqis_core::generator::Perturbation>, CliError> {
    spec.as_deref().map(vacqis::parse_perturbation).transpose()
}

fn parse_axis(spec: &str) -> Result<Axis, CliError> {
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--param expects NAME=V1,V2,..., got '{spec}'")))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--param {name}: '{v}' is not a number"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Axis { param: name.trim().to_string(), values })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, diagnostics, dump_solution, perturb } => {
            let cfg = load(&common)?;
            let mut out = output(&common.out)?;
            let mut diag: Box<dyn Write> = match &diagnostics {
                Some(_) => output(&diagnostics)?,
                None => Box::new(io::stderr().lock()),
            };
            let a = vacqis::run_solve(&cfg, perturbation(&perturb)?, &mut out, &mut diag)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
            diag.flush().map_err(|e| CliError::Io(e.to_string()))?;
            if let Some(path) = dump_solution {
                let mut s = String::new();
                a.solution.dist.dump(&mut s).expect("writing to a String");
                std::fs::write(&path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Sweep { common, params, format } => {
            let cfg = load(&common)?;
            let mut axes = cfg.sweep.clone();
            for p in &params {
                axes.push(parse_axis(p)?);
            }
            if axes.is_empty() {
                return Err(CliError::Config("sweep: no parameter to sweep (use --param or [[sweep]])".into()));
            }
            let points = vacqis::sweep(&cfg.params, &axes, &cfg.solver)?;
            let failed = points.iter().filter(|p| p.result.is_err()).count();
            let format = match format {
                Format::Long => SweepFormat::Long,
                Format::Wide => SweepFormat::Wide,
            };
            let mut out = output(&common.out)?;
            vacqis::write_sweep(&points, format, &mut out)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!("{} points, {failed} failed", points.len());
        }
        Command::Simulate { common, sim, trace } => {
            let mut cfg = load(&common)?;
            apply_sim(&mut cfg, &sim);
            let params = cfg.validated()?;
            if let Some(path) = trace {
                let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::Io(e.to_string()))?);
                writeln!(w, "t,event,orbit,inv,vac,busy,idle,hall").map_err(|e| CliError::Io(e.to_string()))?;
                let mut sink = |r: &vacqis_core::sim::TraceRecord| {
                    let _ = writeln!(w, "{r}");
                };
                vacqis_core::sim::simulate_traced(&params, &cfg.sim.window, vacqis_core::sim::RunSeed::derive(cfg.sim.seed, 0), Some(&mut sink))?;
                w.flush().map_err(|e| CliError::Io(e.to_string()))?;
            }
            let est = vacqis::simulate(&params, &cfg.sim)?;
            let mut out = output(&common.out)?;
            vacqis::write_simulation(&params, &est, &mut out)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
            eprintln!("reps={} events={} min_events_per_rep={}", est.reps, est.counts.total, est.min_events);
        }
        Command::Validate { common, sim, perturb } => {
            let mut cfg = load(&common)?;
            apply_sim(&mut cfg, &sim);
            let params = cfg.validated()?;
            let v = vacqis::validate(&params, &cfg.solver, &cfg.sim, perturbation(&perturb)?)?;
            let mut out = output(&common.out)?;
            vacqis::write_validation(&v, &mut out)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
            let flagged = v.flagged();
            eprintln!(
                "M={} tail_mass={:e} reps={} min_events_per_rep={} flagged: {}",
                v.analysis.params().M,
                v.analysis.solution.dist.tail_mass(),
                v.sim.reps,
                v.sim.min_events,
                if flagged.is_empty() { "none".to_string() } else { flagged.join(",") }
            );
        }
        Command::DumpSpace { common } => {
            let cfg = load(&common)?;
            let mut out = output(&common.out)?;
            vacqis::dump_space(&cfg.validated()?, &mut out)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
        Command::DumpGenerator { common, perturb } => {
            let cfg = load(&common)?;
            let mut out = output(&common.out)?;
            vacqis::dump_generator(&cfg.validated()?, perturbation(&perturb)?, &mut out)?;
            out.flush().map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap would exit with 2 on usage errors, which is reserved for instability
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.exit_code() {
                2 => "unstable",
                3 => "numerical failure",
                _ => "error",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
