//! CSV layouts shared by every command.

use std::io::Write;

use vacqis_core::metrics::{MetricsReport, MEASURE_NAMES};
use vacqis_core::model::ModelParams;
use vacqis_core::sim::SimEstimate;

use crate::CliError;

/// Parameter columns that open every row.
pub const PARAM_COLUMNS: [&str; 11] = ["lambda", "mu", "theta", "eta", "beta", "p", "S", "s", "c", "N", "M"];

/// Undefined values (zero denominators) are written as this.
pub const MISSING: &str = "NA";

pub fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| x.to_string())
}

pub fn param_values(p: &ModelParams) -> Vec<String> {
    PARAM_COLUMNS.iter().map(|n| p.field(n).expect("known field").to_string()).collect()
}

pub fn metrics_header() -> Vec<String> {
    PARAM_COLUMNS.iter().chain(MEASURE_NAMES.iter()).map(|s| s.to_string()).collect()
}

pub fn metrics_row(p: &ModelParams, r: &MetricsReport) -> Vec<String> {
    let mut row = param_values(p);
    row.extend(r.values().iter().map(|&v| fmt_value(v)));
    row
}

pub fn sim_header() -> Vec<String> {
    let mut h = metrics_header();
    h.extend(MEASURE_NAMES.iter().map(|n| format!("{n}_se")));
    h
}

pub fn sim_row(p: &ModelParams, est: &SimEstimate) -> Vec<String> {
    let mut row = param_values(p);
    row.extend(est.mean.iter().map(|&v| fmt_value(v)));
    row.extend(est.se.iter().map(|&v| fmt_value(v)));
    row
}

/// Writes a header and rows to `out`.
pub fn write_csv<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn io_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}
