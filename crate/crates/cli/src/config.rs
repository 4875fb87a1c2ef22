//! TOML configuration.
//!
//! ```toml
//! [model]        # S, s, c, N, M, lambda, mu, theta, eta, beta, p
//! lambda = 2.5
//! [costs]        # ch, cs, co, cw, cl
//! cw = 1.3
//! [solver]
//! tol = 1e-10
//! max_iter = 100000
//! auto_M = false
//! [simulation]
//! reps = 20
//! horizon = 250000.0
//! warmup = 1000.0
//! seed = 1
//! [[sweep]]
//! param = "lambda"
//! values = [2.0, 2.25, 2.5]
//! ```
//!
//! Every key is optional; omitted ones take the built-in baseline values, so
//! an empty file is a valid configuration. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use vacqis_core::model::{ModelParams, UnknownField};
use vacqis_core::sim::SimConfig;
use vacqis_core::solver::SolverOptions;

use crate::CliError;

const MODEL_KEYS: [&str; 11] = ["S", "s", "c", "N", "M", "lambda", "mu", "theta", "eta", "beta", "p"];
const COST_KEYS: [&str; 5] = ["ch", "cs", "co", "cw", "cl"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub params: ModelParams,
    pub solver: SolverSettings,
    pub sim: SimSettings,
    pub sweep: Vec<Axis>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub opts: SolverOptions,
    pub auto_m: bool,
    /// Auto-M stops once the tail mass above M is below this.
    pub tail_threshold: f64,
    pub max_m: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { opts: SolverOptions::default(), auto_m: false, tail_threshold: 1e-6, max_m: 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub reps: usize,
    pub window: SimConfig,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings { reps: 20, window: SimConfig::default(), seed: 1 }
    }
}

/// One swept parameter and its grid.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    model: BTreeMap<String, toml::Value>,
    #[serde(default)]
    costs: BTreeMap<String, toml::Value>,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    simulation: RawSim,
    #[serde(default)]
    sweep: Vec<Axis>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    tol: Option<f64>,
    max_iter: Option<usize>,
    #[serde(rename = "auto_M")]
    auto_m: Option<bool>,
    tail_threshold: Option<f64>,
    #[serde(rename = "max_M")]
    max_m: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    reps: Option<usize>,
    horizon: Option<f64>,
    warmup: Option<f64>,
    seed: Option<u64>,
}

fn number(section: &str, key: &str, v: &toml::Value) -> Result<f64, CliError> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        other => Err(CliError::Config(format!("[{section}] {key}: expected a number, got {other}"))),
    }
}

fn set_param(params: &mut ModelParams, key: &str, value: f64) -> Result<(), CliError> {
    params.set_field(key, value).map_err(|e| match e {
        UnknownField::Unknown => CliError::Config(format!("unknown parameter '{key}'")),
        UnknownField::NotAnInteger => CliError::Config(format!("parameter {key}: expected a non-negative integer, got {value}")),
    })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        let mut cfg = Config::default();
        for (section, keys, table) in [("model", &MODEL_KEYS[..], &raw.model), ("costs", &COST_KEYS[..], &raw.costs)] {
            for (key, v) in table {
                if !keys.contains(&key.as_str()) {
                    return Err(CliError::Config(format!("[{section}] unknown field '{key}'")));
                }
                set_param(&mut cfg.params, key, number(section, key, v)?)?;
            }
        }
        let s = raw.solver;
        let d = SolverSettings::default();
        cfg.solver = SolverSettings {
            opts: SolverOptions { tol: s.tol.unwrap_or(d.opts.tol), max_iter: s.max_iter.unwrap_or(d.opts.max_iter) },
            auto_m: s.auto_m.unwrap_or(d.auto_m),
            tail_threshold: s.tail_threshold.unwrap_or(d.tail_threshold),
            max_m: s.max_m.unwrap_or(d.max_m),
        };
        let m = raw.simulation;
        let d = SimSettings::default();
        cfg.sim = SimSettings {
            reps: m.reps.unwrap_or(d.reps),
            window: SimConfig { horizon: m.horizon.unwrap_or(d.window.horizon), warmup: m.warmup.unwrap_or(d.window.warmup) },
            seed: m.seed.unwrap_or(d.seed),
        };
        cfg.sweep = raw.sweep;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Config::from_toml(&text)
            }
        }
    }

    /// Applies one `key=value` override. Model and cost names are accepted,
    /// as are `tol` and `max_iter`.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got '{spec}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let num: f64 = value
            .parse()
            .map_err(|_| CliError::Config(format!("--set {key}: '{value}' is not a number")))?;
        match key {
            "tol" => self.solver.opts.tol = num,
            "max_iter" => {
                self.solver.opts.max_iter = value
                    .parse()
                    .map_err(|_| CliError::Config(format!("--set max_iter: '{value}' is not an integer")))?
            }
            _ => set_param(&mut self.params, key, num)?,
        }
        Ok(())
    }

    /// Validated model parameters.
    pub fn validated(&self) -> Result<ModelParams, CliError> {
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
