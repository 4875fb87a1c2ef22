//! Matrix-analytic solver and simulation oracle for a multi-server retrial
//! queueing-inventory system with asynchronous multiple vacations and (s,Q)
//! replenishment.
//!
//! The pipeline is [`model`] → [`statespace`] → [`generator`] → [`solver`] →
//! [`metrics`]; [`sim`] is an independent discrete-event simulation of the
//! same system that shares only [`model::ModelParams`] with the rest.
//!
//! The crate is `no_std` (it needs `alloc`); the `std` feature just forwards
//! `std` to the dependencies.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod generator;
pub mod metrics;
pub mod model;
pub mod sim;
pub mod solver;
pub mod statespace;

pub use generator::{GeneratorBlocks, Perturbation, TransitionKind};
pub use metrics::MetricsReport;
pub use model::{Costs, ModelParams, ParamError};
pub use sim::{SimConfig, SimEstimate};
pub use solver::{Solution, SolverOptions};
pub use statespace::{MacroLevel, ServerState, StateSpace};
