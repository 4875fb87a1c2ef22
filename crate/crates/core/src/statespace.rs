//! Enumeration and dense indexing of the states of one orbit level.
//!
//! A state is a macro-level (inventory, with the two all-vacation levels
//! `0*` and `Q*` split out) together with the server/hall tuple
//! `(iota3, iota4, iota5, iota6)` = (vacationing, busy, idle, hall).
//! The hall count includes customers in service.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

use crate::model::ModelParams;

/// Inventory macro-level. Ordered `0*`, `Q*`, `0`, `1`, ..., `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacroLevel {
    /// No stock, all servers on vacation.
    ZeroStar,
    /// Stock `Q` just delivered while all servers were on vacation.
    QStar,
    Inv(u32),
}

impl MacroLevel {
    fn rank(self) -> u64 {
        match self {
            MacroLevel::ZeroStar => 0,
            MacroLevel::QStar => 1,
            MacroLevel::Inv(k) => 2 + u64::from(k),
        }
    }

    /// Items on hand at this macro-level.
    pub fn inventory(self, q: u32) -> u32 {
        match self {
            MacroLevel::ZeroStar => 0,
            MacroLevel::QStar => q,
            MacroLevel::Inv(k) => k,
        }
    }
}

impl Ord for MacroLevel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank().cmp(&other.rank())
    }
}

impl PartialOrd for MacroLevel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MacroLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MacroLevel::ZeroStar => f.write_str("0*"),
            MacroLevel::QStar => f.write_str("Q*"),
            MacroLevel::Inv(k) => write!(f, "{k}"),
        }
    }
}

/// Server configuration and hall occupancy. Field order gives the
/// lexicographic intra-level order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerState {
    pub on_vacation: u32,
    pub busy: u32,
    pub idle: u32,
    pub hall: u32,
}

impl ServerState {
    pub const fn new(on_vacation: u32, busy: u32, idle: u32, hall: u32) -> Self {
        ServerState { on_vacation, busy, idle, hall }
    }

    /// Servers not on vacation.
    pub fn active(&self) -> u32 {
        self.busy + self.idle
    }
}

impl fmt::Display for ServerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.on_vacation, self.busy, self.idle, self.hall)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateSpaceError {
    #[error("state {state} is not in macro-level {level}")]
    NotFound { level: MacroLevel, state: ServerState },
    #[error("index {index} is outside 0..{dim}")]
    IndexOutOfRange { index: usize, dim: usize },
}

/// All states of one orbit level, with a dense bijective index.
#[derive(Debug, Clone)]
pub struct StateSpace {
    c: u32,
    q: u32,
    states: Vec<(MacroLevel, ServerState)>,
    /// `(level, first index)` for each non-empty macro-level, in order.
    level_starts: Vec<(MacroLevel, usize)>,
    index: BTreeMap<(MacroLevel, ServerState), usize>,
}

impl StateSpace {
    /// Enumerates the feasible states for validated parameters.
    pub fn enumerate(params: &ModelParams) -> Self {
        let states: Vec<_> = defining_sets(params).into_iter().collect();
        let mut level_starts = Vec::new();
        let mut index = BTreeMap::new();
        for (i, &(level, st)) in states.iter().enumerate() {
            if level_starts.last().map(|&(l, _)| l) != Some(level) {
                level_starts.push((level, i));
            }
            index.insert((level, st), i);
        }
        StateSpace { c: params.c, q: params.q(), states, level_starts, index }
    }

    pub fn block_dim(&self) -> usize {
        self.states.len()
    }

    pub fn servers(&self) -> u32 {
        self.c
    }

    pub fn reorder_quantity(&self) -> u32 {
        self.q
    }

    pub fn index_of(&self, level: MacroLevel, st: ServerState) -> Result<usize, StateSpaceError> {
        self.index
            .get(&(level, st))
            .copied()
            .ok_or(StateSpaceError::NotFound { level, state: st })
    }

    pub fn state_of(&self, index: usize) -> Result<(MacroLevel, ServerState), StateSpaceError> {
        self.states
            .get(index)
            .copied()
            .ok_or(StateSpaceError::IndexOutOfRange { index, dim: self.states.len() })
    }

    /// All states in index order.
    pub fn states(&self) -> &[(MacroLevel, ServerState)] {
        &self.states
    }

    /// Non-empty macro-levels in order.
    pub fn levels(&self) -> impl Iterator<Item = MacroLevel> + '_ {
        self.level_starts.iter().map(|&(l, _)| l)
    }

    /// Index range occupied by one macro-level (empty if the level has no states).
    pub fn level_range(&self, level: MacroLevel) -> core::ops::Range<usize> {
        match self.level_starts.iter().position(|&(l, _)| l == level) {
            Some(i) => {
                let start = self.level_starts[i].1;
                let end = self.level_starts.get(i + 1).map_or(self.states.len(), |&(_, e)| e);
                start..end
            }
            None => 0..0,
        }
    }

    /// States of one macro-level, in order.
    pub fn level_states(&self, level: MacroLevel) -> &[(MacroLevel, ServerState)] {
        &self.states[self.level_range(level)]
    }

    /// Writes one `level,iota3,iota4,iota5,iota6,index` line per state.
    pub fn dump<W: fmt::Write>(&self, out: &mut W) -> fmt::Result {
        writeln!(out, "level,iota3,iota4,iota5,iota6,index")?;
        for (i, (level, st)) in self.states.iter().enumerate() {
            writeln!(out, "{level},{},{},{},{},{i}", st.on_vacation, st.busy, st.idle, st.hall)?;
        }
        Ok(())
    }
}

/// The closed-form block dimension `Sc(N+1) + (c+2)N - (2c^3+3c^2-5c-12)/6`.
///
/// `c(c-1)(2c+5)` is always divisible by 6, so the division is exact.
pub fn block_dimension_formula(params: &ModelParams) -> i64 {
    let (s, c, n) = (i64::from(params.S), i64::from(params.c), i64::from(params.N));
    s * c * (n + 1) + (c + 2) * n - (2 * c * c * c + 3 * c * c - 5 * c - 12) / 6
}

/// Union of the eleven defining sets, ordered by macro-level then tuple.
fn defining_sets(params: &ModelParams) -> BTreeSet<(MacroLevel, ServerState)> {
    let (big_s, c, n) = (params.S, params.c, params.N);
    let mut set = BTreeSet::new();
    let mut add = |level: MacroLevel, vac: u32, busy: u32, idle: u32, hall: u32| {
        set.insert((level, ServerState::new(vac, busy, idle, hall)));
    };

    // E1: no stock; x1 idle servers waiting for items (x1 = 0 is level 0*)
    for x1 in 0..=c {
        let level = if x1 == 0 { MacroLevel::ZeroStar } else { MacroLevel::Inv(0) };
        for h in x1..=n {
            add(level, c - x1, 0, x1, h);
        }
    }
    // E2, E3: 2 <= k <= c-1 with fewer active servers than items
    for x2 in 1..c.saturating_sub(1) {
        let level = MacroLevel::Inv(x2 + 1);
        for j in 0..x2 {
            for b in 0..=j {
                add(level, c - (j + 1), b, j + 1 - b, b);
            }
            for h in j + 1..=n {
                add(level, c - (j + 1), j + 1, 0, h);
            }
        }
    }
    // E4, E5: k >= c with x3 < c active servers
    for x3 in 1..c {
        for k in c..=big_s {
            let level = MacroLevel::Inv(k);
            for b in 0..x3 {
                add(level, c - x3, b, x3 - b, b);
            }
            for h in x3..=n {
                add(level, c - x3, x3, 0, h);
            }
        }
    }
    // E6: Q*
    for h in 0..=n {
        add(MacroLevel::QStar, c, 0, 0, h);
    }
    // E7: 1 <= k <= c, as many active servers as items, hall not exceeding them
    for x4 in 0..c {
        for b in 0..=x4 + 1 {
            add(MacroLevel::Inv(x4 + 1), c - (x4 + 1), b, x4 + 1 - b, b);
        }
    }
    // E8: 1 <= k <= c, every item in service
    for x5 in 1..=c {
        for h in x5..=n {
            add(MacroLevel::Inv(x5), c - x5, x5, 0, h);
        }
    }
    // E9: 1 <= k < c, more active servers than items; the surplus sits idle
    for x6 in 1..c {
        for j in 1..=c - x6 {
            for h in x6 + j..=n {
                add(MacroLevel::Inv(x6), c - (x6 + j), x6, j, h);
            }
        }
    }
    // E10, E11: k > c, no vacations
    for k in c + 1..=big_s {
        for b in 0..c {
            add(MacroLevel::Inv(k), 0, b, c - b, b);
        }
        for h in c..=n {
            add(MacroLevel::Inv(k), 0, c, 0, h);
        }
    }
    set
}
