//! Block matrices of the level-dependent QBD generator.
//!
//! The orbit size is the QBD level. For orbit level `i` the generator has
//! three blocks over the [`StateSpace`]: `H0` (one customer joins the orbit),
//! `Hlower(i)` (a retrial enters the hall) and `Hdiag(i)` (everything that
//! leaves the orbit unchanged). The diagonal of `Hdiag(i)` absorbs the outflow
//! of all three, so each assembled row sums to zero.
//!
//! Within a level a state is read as `(k, m, h)`: items on hand, servers not
//! on vacation, customers in the hall. Service happens whenever a customer,
//! an item and an active server meet, so `busy = min(h, k, m)`. A server
//! that finishes a service, or returns from vacation, goes (back) on vacation
//! exactly when there is neither a customer nor an item left unclaimed by the
//! other active servers.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::ModelParams;
use crate::statespace::{MacroLevel, ServerState, StateSpace};

/// The kinds of transition the generator is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionKind {
    /// Primary arrival admitted to the hall.
    Arrival,
    /// Primary arrival finding the hall full and joining the orbit.
    OrbitEntry,
    /// Orbiting customer entering the hall.
    Retrial,
    Service,
    VacationEnd,
    Replenishment,
}

impl TransitionKind {
    pub const ALL: [TransitionKind; 6] = [
        TransitionKind::Arrival,
        TransitionKind::OrbitEntry,
        TransitionKind::Retrial,
        TransitionKind::Service,
        TransitionKind::VacationEnd,
        TransitionKind::Replenishment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransitionKind::Arrival => "arrival",
            TransitionKind::OrbitEntry => "orbit-entry",
            TransitionKind::Retrial => "retrial",
            TransitionKind::Service => "service",
            TransitionKind::VacationEnd => "vacation-end",
            TransitionKind::Replenishment => "replenishment",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test hook: scales every generator entry of one transition kind.
///
/// The diagonal is recomputed afterwards, so the perturbed matrix is still a
/// generator — just the generator of a different system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub kind: TransitionKind,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeneratorError {
    #[error("{kind} transition from ({from_level}, {from}) has no feasible target")]
    InfeasibleTarget { kind: TransitionKind, from_level: MacroLevel, from: ServerState },
}

/// One off-diagonal rate of the generator, for orbit level 1 in the case of
/// retrials (the retrial rate is linear in the orbit size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub kind: TransitionKind,
    pub rate: f64,
}

/// Orbit-level-independent pieces from which every block is assembled.
#[derive(Debug, Clone)]
pub struct GeneratorBlocks {
    h0: DMatrix<f64>,
    /// `Hlower(1)`; `Hlower(i) = i * Hlower(1)`.
    retrial: DMatrix<f64>,
    retrial_out: DVector<f64>,
    /// Off-diagonal part of `Hdiag`, identical on every orbit level.
    local: DMatrix<f64>,
    local_out: DVector<f64>,
}

impl GeneratorBlocks {
    pub fn build(space: &StateSpace, params: &ModelParams) -> Result<Self, GeneratorError> {
        Self::build_perturbed(space, params, None)
    }

    pub fn build_perturbed(
        space: &StateSpace,
        params: &ModelParams,
        perturbation: Option<Perturbation>,
    ) -> Result<Self, GeneratorError> {
        let n = space.block_dim();
        let mut h0 = DMatrix::zeros(n, n);
        let mut retrial = DMatrix::zeros(n, n);
        let mut local = DMatrix::zeros(n, n);
        for t in transitions(space, params)? {
            let rate = match perturbation {
                Some(p) if p.kind == t.kind => t.rate * p.factor,
                _ => t.rate,
            };
            let target = match t.kind {
                TransitionKind::OrbitEntry => &mut h0,
                TransitionKind::Retrial => &mut retrial,
                _ => &mut local,
            };
            target[(t.from, t.to)] += rate;
        }
        let row_sums = |m: &DMatrix<f64>| DVector::from_iterator(n, m.row_iter().map(|r| r.sum()));
        let retrial_out = row_sums(&retrial);
        let local_out = row_sums(&local);
        Ok(GeneratorBlocks { h0, retrial, retrial_out, local, local_out })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    /// Orbit-entry block.
    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    /// Retrial block at orbit level `iota1` (zero for `iota1 = 0`).
    pub fn h_lower(&self, iota1: u32) -> DMatrix<f64> {
        &self.retrial * f64::from(iota1)
    }

    /// Within-level block at orbit level `iota1`.
    pub fn h_diag(&self, iota1: u32) -> DMatrix<f64> {
        let mut d = self.local.clone();
        let i = f64::from(iota1);
        for r in 0..self.dim() {
            d[(r, r)] -= self.local_out[r] + self.h0[(r, r)] + i * self.retrial_out[r];
        }
        d
    }

    /// Within-level block of the truncated chain: every orbit level `>= m`
    /// behaves like level `m`.
    pub fn modified_diag(&self, m: u32) -> DMatrix<f64> {
        self.h_diag(m)
    }
}

pub fn build_h0(space: &StateSpace, params: &ModelParams) -> Result<DMatrix<f64>, GeneratorError> {
    Ok(GeneratorBlocks::build(space, params)?.h0)
}

pub fn build_h_lower(
    iota1: u32,
    space: &StateSpace,
    params: &ModelParams,
) -> Result<DMatrix<f64>, GeneratorError> {
    Ok(GeneratorBlocks::build(space, params)?.h_lower(iota1))
}

pub fn build_h_diag(
    iota1: u32,
    space: &StateSpace,
    params: &ModelParams,
) -> Result<DMatrix<f64>, GeneratorError> {
    Ok(GeneratorBlocks::build(space, params)?.h_diag(iota1))
}

pub fn build_modified_diag(space: &StateSpace, params: &ModelParams) -> Result<DMatrix<f64>, GeneratorError> {
    Ok(GeneratorBlocks::build(space, params)?.modified_diag(params.M))
}

/// Every rate outside the diagonal of `Hdiag`, in row order. Orbit entries sit
/// on the diagonal of `H0`; retrial rates are per orbiting customer.
pub fn transitions(space: &StateSpace, params: &ModelParams) -> Result<Vec<Transition>, GeneratorError> {
    let c = params.c;
    let q = params.q();
    let n_cap = params.N;
    let mut out = Vec::new();
    for (from, &(level, st)) in space.states().iter().enumerate() {
        let k = level.inventory(q);
        let m = st.active();
        let h = st.hall;
        let busy = st.busy;
        let unclaimed = h.saturating_sub(m) > 0 || k.saturating_sub(m) > 0;
        let mut push = |kind, to: Option<(MacroLevel, ServerState)>, rate: f64| {
            let (tl, ts) = to.ok_or(GeneratorError::InfeasibleTarget { kind, from_level: level, from: st })?;
            let to = space
                .index_of(tl, ts)
                .map_err(|_| GeneratorError::InfeasibleTarget { kind, from_level: level, from: st })?;
            out.push(Transition { from, to, kind, rate });
            Ok(())
        };

        if h < n_cap {
            push(TransitionKind::Arrival, encode(k, m, h + 1, c, q), params.lambda)?;
            push(TransitionKind::Retrial, encode(k, m, h + 1, c, q), params.theta)?;
        } else {
            // stays in place; housed on the diagonal of H0
            push(TransitionKind::OrbitEntry, Some((level, st)), params.p * params.lambda)?;
        }
        if busy > 0 {
            let m_after = if unclaimed { m } else { m - 1 };
            push(TransitionKind::Service, encode(k - 1, m_after, h - 1, c, q), f64::from(busy) * params.mu)?;
        }
        if m < c && unclaimed {
            push(TransitionKind::VacationEnd, encode(k, m + 1, h, c, q), f64::from(c - m) * params.eta)?;
        }
        if k <= params.s {
            push(TransitionKind::Replenishment, encode(k + q, m, h, c, q), params.beta)?;
        }
    }
    out.retain(|t| t.rate != 0.0);
    Ok(out)
}

/// Maps `(items, active servers, hall)` back to a labelled state.
fn encode(k: u32, m: u32, h: u32, c: u32, q: u32) -> Option<(MacroLevel, ServerState)> {
    let level = match (m, k) {
        (0, 0) => MacroLevel::ZeroStar,
        (0, k) if k == q => MacroLevel::QStar,
        (0, _) => return None,
        (_, k) => MacroLevel::Inv(k),
    };
    let busy = h.min(k).min(m);
    Some((level, ServerState::new(c.checked_sub(m)?, busy, m - busy, h)))
}

/// Writes the nonzero entries of `m` as `block,row,col,rate` lines.
pub fn dump_coordinates<W: fmt::Write>(block: &str, m: &DMatrix<f64>, out: &mut W) -> fmt::Result {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                writeln!(out, "{block},{r},{c},{v:e}")?;
            }
        }
    }
    Ok(())
}
