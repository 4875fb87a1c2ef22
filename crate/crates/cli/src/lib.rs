//! Library side of the `vacqis` command: configuration, CSV layouts and the
//! commands themselves, kept callable from tests.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;
use vacqis_core::generator::{self, GeneratorBlocks, Perturbation, TransitionKind};
use vacqis_core::metrics::{compute_metrics, MetricsReport, MEASURE_NAMES};
use vacqis_core::model::ModelParams;
use vacqis_core::sim::{self, RunSeed, SimEstimate};
use vacqis_core::solver::{self, r_block_residuals, Solution, SolveError};
use vacqis_core::statespace::{block_dimension_formula, StateSpace};

use config::{Axis, Config, SimSettings, SolverSettings};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "VACQIS_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Unstable(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Unstable(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Unstable { .. } => CliError::Unstable(e.to_string()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<sim::SimError> for CliError {
    fn from(e: sim::SimError) -> Self {
        match e {
            sim::SimError::Params(_) | sim::SimError::BadWindow { .. } | sim::SimError::TooFewReplications(_) | sim::SimError::DuplicateSeed { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Runs `f` on a worker pool sized by [`WORKERS_ENV`] (default: all cores).
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got '{v}'")))?;
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

/// Analytic result for one parameter point.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub solution: Solution,
    pub report: MetricsReport,
    pub elapsed: Duration,
}

impl Analysis {
    /// Parameters actually solved (auto-M may have raised `M`).
    pub fn params(&self) -> &ModelParams {
        &self.solution.params
    }
}

pub fn analyze(
    params: &ModelParams,
    settings: &SolverSettings,
    perturbation: Option<Perturbation>,
) -> Result<Analysis, CliError> {
    let start = Instant::now();
    let solution = if settings.auto_m {
        solver::solve_auto_m(params, &settings.opts, perturbation, settings.tail_threshold, settings.max_m)?
    } else {
        solver::solve_perturbed(params, &settings.opts, perturbation)?
    };
    let report = compute_metrics(&solution.dist, &solution.space, &solution.params)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(Analysis { solution, report, elapsed: start.elapsed() })
}

/// `key=value` diagnostics of a solved point.
pub fn diagnostics(a: &Analysis) -> String {
    let s = &a.solution;
    let res = s.balance_residuals();
    let r_blocks = r_block_residuals(&s.dist.rate, &s.blocks, &s.space, s.params.M);
    let worst_block = r_blocks.iter().map(|x| x.1).fold(0.0, f64::max);
    let st = &s.stability;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("block_dim", s.space.block_dim().to_string());
    kv("block_dim_formula", block_dimension_formula(&s.params).to_string());
    kv("M", s.params.M.to_string());
    kv("stable", st.stable.to_string());
    kv("z1", st.z1.to_string());
    kv("z2", st.z2.to_string());
    kv("z1_p_lambda", st.up.to_string());
    kv("z2_M_theta", st.down.to_string());
    kv("drift_form_discrepancy", st.form_discrepancy().to_string());
    kv("r_iterations", s.dist.rate.iterations.to_string());
    kv("r_residual", s.dist.rate.residual.to_string());
    kv("r_block_residual_max", worst_block.to_string());
    kv("spectral_radius", s.dist.rate.spectral_radius.to_string());
    kv("tail_mass", s.dist.tail_mass().to_string());
    kv("normalization_error", res.normalization.to_string());
    kv("balance_residual_max", res.max_balance().to_string());
    kv("L9_balance", a.report.l9_balance.to_string());
    kv("elapsed_ms", a.elapsed.as_millis().to_string());
    for w in &s.dist.warnings {
        kv("warning", w.clone());
    }
    out
}

/// Solves one point and writes its CSV row to `out` and diagnostics to `diag`.
pub fn run_solve(
    cfg: &Config,
    perturbation: Option<Perturbation>,
    out: &mut dyn Write,
    diag: &mut dyn Write,
) -> Result<Analysis, CliError> {
    let params = cfg.validated()?;
    let a = analyze(&params, &cfg.solver, perturbation)?;
    report::write_csv(out, &report::metrics_header(), &[report::metrics_row(a.params(), &a.report)])?;
    diag.write_all(diagnostics(&a).as_bytes()).map_err(io)?;
    Ok(a)
}

/// Output layout of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepFormat {
    /// One row per point and measure: parameters, `measure`, `value`, `error`.
    Long,
    /// One row per point: the `solve` columns plus `error`.
    Wide,
}

/// Outcome of one grid point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub params: ModelParams,
    pub result: Result<MetricsReport, String>,
}

/// Cartesian product of the axes, first axis varying slowest.
pub fn sweep_grid(base: &ModelParams, axes: &[Axis]) -> Result<Vec<ModelParams>, CliError> {
    for a in axes {
        if base.field(&a.param).is_none() {
            return Err(CliError::Config(format!("sweep: unknown parameter '{}'", a.param)));
        }
        if a.values.is_empty() {
            return Err(CliError::Config(format!("sweep: empty grid for '{}'", a.param)));
        }
    }
    let mut grid = vec![*base];
    for a in axes {
        let mut next = Vec::with_capacity(grid.len() * a.values.len());
        for p in &grid {
            for &v in &a.values {
                let mut q = *p;
                q.set_field(&a.param, v)
                    .map_err(|e| CliError::Config(format!("sweep: {} = {v}: {e}", a.param)))?;
                next.push(q);
            }
        }
        grid = next;
    }
    Ok(grid)
}

/// Evaluates every grid point in parallel; results keep grid order.
pub fn sweep(base: &ModelParams, axes: &[Axis], settings: &SolverSettings) -> Result<Vec<SweepPoint>, CliError> {
    let grid = sweep_grid(base, axes)?;
    with_pool(|| {
        grid.par_iter()
            .map(|p| match p.validate() {
                Err(e) => SweepPoint { params: *p, result: Err(format!("config: {e}")) },
                Ok(p) => match analyze(&p, settings, None) {
                    Ok(a) => SweepPoint { params: *a.params(), result: Ok(a.report) },
                    Err(e) => SweepPoint { params: p, result: Err(e.to_string()) },
                },
            })
            .collect()
    })
}

pub fn write_sweep(points: &[SweepPoint], format: SweepFormat, out: &mut dyn Write) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let header: Vec<String> = match format {
        SweepFormat::Wide => {
            for pt in points {
                match &pt.result {
                    Ok(r) => {
                        let mut row = report::metrics_row(&pt.params, r);
                        row.push(String::new());
                        rows.push(row);
                    }
                    Err(e) => {
                        let mut row = report::param_values(&pt.params);
                        row.extend(std::iter::repeat_n(String::new(), MEASURE_NAMES.len()));
                        row.push(e.clone());
                        rows.push(row);
                    }
                }
            }
            let mut h = report::metrics_header();
            h.push("error".into());
            h
        }
        SweepFormat::Long => {
            for pt in points {
                let params = report::param_values(&pt.params);
                match &pt.result {
                    Ok(r) => {
                        for (name, v) in MEASURE_NAMES.iter().zip(r.values()) {
                            let mut row = params.clone();
                            row.extend([name.to_string(), report::fmt_value(v), String::new()]);
                            rows.push(row);
                        }
                    }
                    Err(e) => {
                        let mut row = params.clone();
                        row.extend([String::new(), String::new(), e.clone()]);
                        rows.push(row);
                    }
                }
            }
            report::PARAM_COLUMNS.iter().map(|s| s.to_string()).chain(["measure".into(), "value".into(), "error".into()]).collect()
        }
    };
    report::write_csv(out, &header, &rows)
}

/// Replications in parallel; seeds follow the rule of [`RunSeed::derive`].
pub fn simulate(params: &ModelParams, settings: &SimSettings) -> Result<SimEstimate, CliError> {
    let seeds: Vec<RunSeed> = (0..settings.reps as u64).map(|i| RunSeed::derive(settings.seed, i)).collect();
    sim::check_seeds(&seeds)?;
    let runs = with_pool(|| {
        seeds
            .par_iter()
            .enumerate()
            .map(|(index, &s)| {
                sim::simulate(params, &settings.window, s)
                    .map_err(|e| sim::SimError::Replication { index, source: Box::new(e) })
            })
            .collect::<Result<Vec<_>, _>>()
    })??;
    Ok(sim::aggregate(&runs)?)
}

pub fn write_simulation(params: &ModelParams, est: &SimEstimate, out: &mut dyn Write) -> Result<(), CliError> {
    report::write_csv(out, &report::sim_header(), &[report::sim_row(params, est)])
}

/// Analytic-versus-simulated comparison.
#[derive(Debug, Clone)]
pub struct Validation {
    pub analysis: Analysis,
    pub sim: SimEstimate,
    /// `(analytic - simulated) / se`, in `L1..L16, ETC` order.
    pub z: [Option<f64>; 17],
    /// Same for the flow-balance form of the loss rate.
    pub z_l9_balance: Option<f64>,
}

/// Measures whose agreement is required for a clean validation.
pub const VALIDATED_MEASURES: [&str; 8] = ["L1", "L2", "L6", "L9", "L10", "L11", "L16", "ETC"];

/// |z| above which a measure is flagged.
pub const Z_LIMIT: f64 = 3.0;

impl Validation {
    pub fn z_of(&self, name: &str) -> Option<f64> {
        MEASURE_NAMES.iter().position(|n| *n == name).and_then(|i| self.z[i])
    }

    /// Names of the [`VALIDATED_MEASURES`] with `|z| > 3`.
    pub fn flagged(&self) -> Vec<&'static str> {
        VALIDATED_MEASURES
            .iter()
            .copied()
            .filter(|n| self.z_of(n).is_some_and(|z| z.abs() > Z_LIMIT))
            .collect()
    }
}

/// Runs both pipelines. The simulation never sees `perturbation`.
pub fn validate(
    params: &ModelParams,
    solver_settings: &SolverSettings,
    sim_settings: &SimSettings,
    perturbation: Option<Perturbation>,
) -> Result<Validation, CliError> {
    let analysis = analyze(params, solver_settings, perturbation)?;
    let est = simulate(params, sim_settings)?;
    Ok(compare(analysis, est))
}

/// z-scores of an analytic report against a simulation estimate.
pub fn compare(analysis: Analysis, sim: SimEstimate) -> Validation {
    let z = sim.z_scores(&analysis.report.values());
    let z_l9_balance = match (sim.mean[8], sim.se[8]) {
        (Some(m), Some(se)) if se > 0.0 => Some((analysis.report.l9_balance - m) / se),
        _ => None,
    };
    Validation { analysis, sim, z, z_l9_balance }
}

pub fn write_validation(v: &Validation, out: &mut dyn Write) -> Result<(), CliError> {
    let header: Vec<String> = ["measure", "analytic", "sim_mean", "sim_se", "z", "flag"].map(String::from).to_vec();
    let flag = |z: Option<f64>| if z.is_some_and(|z| z.abs() > Z_LIMIT) { "|z|>3" } else { "" }.to_string();
    let analytic = v.analysis.report.values();
    let mut rows: Vec<Vec<String>> = (0..MEASURE_NAMES.len())
        .map(|i| {
            vec![
                MEASURE_NAMES[i].to_string(),
                report::fmt_value(analytic[i]),
                report::fmt_value(v.sim.mean[i]),
                report::fmt_value(v.sim.se[i]),
                report::fmt_value(v.z[i]),
                flag(v.z[i]),
            ]
        })
        .collect();
    rows.push(vec![
        "L9_balance".into(),
        report::fmt_value(Some(v.analysis.report.l9_balance)),
        report::fmt_value(v.sim.mean[8]),
        report::fmt_value(v.sim.se[8]),
        report::fmt_value(v.z_l9_balance),
        flag(v.z_l9_balance),
    ]);
    report::write_csv(out, &header, &rows)
}

pub fn parse_perturbation(spec: &str) -> Result<Perturbation, CliError> {
    let (kind, factor) = spec.split_once('=').unwrap_or((spec, "2"));
    let kind = TransitionKind::from_name(kind.trim()).ok_or_else(|| {
        let names: Vec<_> = TransitionKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Config(format!("--perturb: unknown transition '{kind}' (expected one of {})", names.join(", ")))
    })?;
    let factor: f64 = factor
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("--perturb: '{factor}' is not a number")))?;
    Ok(Perturbation { kind, factor })
}

pub fn dump_space(params: &ModelParams, out: &mut dyn Write) -> Result<(), CliError> {
    let space = StateSpace::enumerate(params);
    let mut s = String::new();
    space.dump(&mut s).expect("writing to a String");
    out.write_all(s.as_bytes()).map_err(io)
}

/// Coordinate dump of `H0`, `Hlower(1..=M)` and `Hdiag(0..=M)`.
pub fn dump_generator(params: &ModelParams, perturbation: Option<Perturbation>, out: &mut dyn Write) -> Result<(), CliError> {
    let space = StateSpace::enumerate(params);
    let blocks = GeneratorBlocks::build_perturbed(&space, params, perturbation)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut s = String::from("block,row,col,rate\n");
    generator::dump_coordinates("H0", blocks.h0(), &mut s).expect("writing to a String");
    for i in 1..=params.M {
        generator::dump_coordinates(&format!("Hlower{i}"), &blocks.h_lower(i), &mut s).expect("writing to a String");
    }
    for i in 0..=params.M {
        generator::dump_coordinates(&format!("Hdiag{i}"), &blocks.h_diag(i), &mut s).expect("writing to a String");
    }
    out.write_all(s.as_bytes()).map_err(io)
}
