//! Discrete-event simulation of the queueing-inventory system.
//!
//! This is the correctness oracle for the analytic pipeline, so it is written
//! from the operating rules alone and never touches the state space or the
//! generator. Servers are tracked as counts, the orbit is unbounded, and
//! every clock is exponential.
//!
//! Seeding: replication `i` of a study with base seed `b` runs a ChaCha8
//! generator keyed by `seed_from_u64(b)` on stream `i`.

use alloc::boxed::Box;
use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::MetricsReport;
use crate::model::{ModelParams, ParamError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// End of the run.
    pub horizon: f64,
    /// Statistics are collected over `[warmup, horizon]`.
    pub warmup: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { horizon: 2.5e5, warmup: 1e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunSeed {
    pub key: u64,
    pub stream: u64,
}

impl RunSeed {
    /// Seed of replication `rep` under `base_seed`.
    pub fn derive(base_seed: u64, rep: u64) -> Self {
        RunSeed { key: base_seed, stream: rep }
    }

    fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SimState {
    pub orbit: u64,
    pub inventory: u32,
    pub vacationing: u32,
    pub busy: u32,
    pub idle: u32,
    pub hall: u32,
    pub order_outstanding: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    Arrival,
    Retrial,
    ServiceCompletion,
    VacationEnd,
    Replenishment,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Event::Arrival => "arrival",
            Event::Retrial => "retrial",
            Event::ServiceCompletion => "service",
            Event::VacationEnd => "vacation-end",
            Event::Replenishment => "replenishment",
        })
    }
}

/// State right after an event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub event: Event,
    pub state: SimState,
}

impl fmt::Display for TraceRecord {
    /// `t,event,orbit,inv,vac,busy,idle,hall`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.state;
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.time, self.event, s.orbit, s.inventory, s.vacationing, s.busy, s.idle, s.hall
        )
    }
}

/// Event tallies over the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EventCounts {
    /// All events, warmup included.
    pub total: u64,
    pub arrivals: u64,
    pub admitted: u64,
    pub losses: u64,
    pub orbit_entries: u64,
    pub retrials: u64,
    pub retrial_successes: u64,
    pub services: u64,
    pub vacation_starts: u64,
    pub reorders: u64,
}

impl EventCounts {
    fn add(&mut self, o: &EventCounts) {
        self.total += o.total;
        self.arrivals += o.arrivals;
        self.admitted += o.admitted;
        self.losses += o.losses;
        self.orbit_entries += o.orbit_entries;
        self.retrials += o.retrials;
        self.retrial_successes += o.retrial_successes;
        self.services += o.services;
        self.vacation_starts += o.vacation_starts;
        self.reorders += o.reorders;
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("need horizon > warmup >= 0 (horizon {horizon}, warmup {warmup})")]
    BadWindow { horizon: f64, warmup: f64 },
    #[error("invariant breached after {event} at t = {time}: {reason}")]
    InvariantBreach {
        time: f64,
        event: Event,
        reason: &'static str,
        /// Most recent records, oldest first, ending with the offending one.
        trace: Vec<TraceRecord>,
    },
    #[error("replication {index}: {source}")]
    Replication { index: usize, source: Box<SimError> },
    #[error("replications {first} and {second} share the seed {seed:?}")]
    DuplicateSeed { first: usize, second: usize, seed: RunSeed },
    #[error("at least 2 replications are needed (got {0})")]
    TooFewReplications(usize),
}

/// Measures of one run, in the same layout as the analytic report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub seed: RunSeed,
    pub report: MetricsReport,
    pub counts: EventCounts,
}

const TRACE_DEPTH: usize = 32;

struct Sim<'a> {
    p: &'a ModelParams,
    q: u32,
    st: SimState,
    counts: EventCounts,
    recent: VecDeque<TraceRecord>,
}

impl Sim<'_> {
    fn waiting(&self) -> u32 {
        self.st.hall - self.st.busy
    }

    fn free_items(&self) -> u32 {
        self.st.inventory - self.st.busy
    }

    /// Idle servers pick up work while a customer and an item are both free.
    fn activate(&mut self) {
        while self.st.idle > 0 && self.waiting() > 0 && self.free_items() > 0 {
            self.st.idle -= 1;
            self.st.busy += 1;
        }
    }

    /// Whether a server that is not counted among the active ones finds
    /// anything the others leave over.
    fn leftover_work(&self) -> bool {
        self.waiting().saturating_sub(self.st.idle) > 0 || self.free_items().saturating_sub(self.st.idle) > 0
    }

    /// Places a server that just became free (after a service or a vacation).
    fn place_free_server(&mut self) {
        if self.waiting() > 0 && self.free_items() > 0 {
            self.st.busy += 1;
        } else {
            self.st.idle += 1;
        }
    }

    fn enter_hall(&mut self) {
        self.st.hall += 1;
        self.activate();
    }

    fn apply(&mut self, ev: Event, u: f64, observing: bool) {
        let p = self.p;
        let mut counts = EventCounts::default();
        match ev {
            Event::Arrival => {
                counts.arrivals = 1;
                if self.st.hall < p.N {
                    counts.admitted = 1;
                    self.enter_hall();
                } else if u < p.p {
                    counts.orbit_entries = 1;
                    self.st.orbit += 1;
                } else {
                    counts.losses = 1;
                }
            }
            Event::Retrial => {
                counts.retrials = 1;
                if self.st.hall < p.N {
                    counts.retrial_successes = 1;
                    self.st.orbit -= 1;
                    self.enter_hall();
                }
            }
            Event::ServiceCompletion => {
                counts.services = 1;
                self.st.busy -= 1;
                self.st.hall -= 1;
                self.st.inventory -= 1;
                if self.leftover_work() {
                    self.place_free_server();
                } else {
                    counts.vacation_starts = 1;
                    self.st.vacationing += 1;
                }
                if self.st.inventory <= p.s && !self.st.order_outstanding {
                    self.st.order_outstanding = true;
                    counts.reorders = 1;
                }
            }
            Event::VacationEnd => {
                // with nothing left over the server immediately leaves again
                if self.leftover_work() {
                    self.st.vacationing -= 1;
                    self.place_free_server();
                } else {
                    counts.vacation_starts = 1;
                }
            }
            Event::Replenishment => {
                self.st.inventory += self.q;
                self.st.order_outstanding = false;
                self.activate();
            }
        }
        self.counts.total += 1;
        if observing {
            counts.total = 0;
            self.counts.add(&counts);
        }
    }

    fn check(&self) -> Result<(), &'static str> {
        let s = &self.st;
        let p = self.p;
        if s.vacationing + s.busy + s.idle != p.c {
            return Err("server count not conserved");
        }
        if s.hall > p.N {
            return Err("hall over capacity");
        }
        if s.inventory > p.S {
            return Err("inventory above S");
        }
        if s.busy > s.hall || s.busy > s.inventory {
            return Err("more busy servers than customers or items");
        }
        if s.order_outstanding != (s.inventory <= p.s) {
            return Err("order status inconsistent with inventory position");
        }
        if s.idle > 0 && self.waiting() > 0 && self.free_items() > 0 {
            return Err("idle server next to a servable customer");
        }
        Ok(())
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -libm::log1p(-u) / rate
}

/// One replication.
pub fn simulate(params: &ModelParams, cfg: &SimConfig, seed: RunSeed) -> Result<RunResult, SimError> {
    simulate_traced(params, cfg, seed, None)
}

/// One replication, reporting every event to `trace` when given.
pub fn simulate_traced(
    params: &ModelParams,
    cfg: &SimConfig,
    seed: RunSeed,
    mut trace: Option<&mut dyn FnMut(&TraceRecord)>,
) -> Result<RunResult, SimError> {
    let p = params.validate()?;
    if !(cfg.warmup >= 0.0 && cfg.horizon > cfg.warmup && cfg.horizon.is_finite()) {
        return Err(SimError::BadWindow { horizon: cfg.horizon, warmup: cfg.warmup });
    }
    let mut rng = seed.rng();
    let mut sim = Sim {
        p: &p,
        q: p.q(),
        st: SimState { inventory: p.S, idle: p.c, ..Default::default() },
        counts: EventCounts::default(),
        recent: VecDeque::with_capacity(TRACE_DEPTH),
    };

    // time integrals of inventory, orbit, hall, busy, vacationing, idle, all-vacation
    let mut area = [0.0f64; 7];
    let mut t = 0.0f64;
    loop {
        let s = sim.st;
        let rates = [
            p.lambda,
            s.orbit as f64 * p.theta,
            f64::from(s.busy) * p.mu,
            f64::from(s.vacationing) * p.eta,
            if s.order_outstanding { p.beta } else { 0.0 },
        ];
        let total: f64 = rates.iter().sum();
        let t_next = t + exp_sample(&mut rng, total);

        let lo = t.max(cfg.warmup);
        let hi = t_next.min(cfg.horizon);
        if hi > lo {
            let dt = hi - lo;
            let all_vac = if s.vacationing == p.c { 1.0 } else { 0.0 };
            let levels = [s.inventory as f64, s.orbit as f64, s.hall as f64, s.busy as f64, s.vacationing as f64, s.idle as f64, all_vac];
            for (a, l) in area.iter_mut().zip(levels) {
                *a += l * dt;
            }
        }
        if t_next > cfg.horizon {
            break;
        }
        t = t_next;

        let mut pick: f64 = rng.random::<f64>() * total;
        let mut ev = Event::Replenishment;
        for (e, r) in [Event::Arrival, Event::Retrial, Event::ServiceCompletion, Event::VacationEnd, Event::Replenishment]
            .into_iter()
            .zip(rates)
        {
            if r > 0.0 {
                ev = e;
                if pick < r {
                    break;
                }
                pick -= r;
            }
        }
        let u: f64 = rng.random();
        sim.apply(ev, u, t >= cfg.warmup);

        let record = TraceRecord { time: t, event: ev, state: sim.st };
        if sim.recent.len() == TRACE_DEPTH {
            sim.recent.pop_front();
        }
        sim.recent.push_back(record);
        if let Some(f) = trace.as_mut() {
            f(&record);
        }
        if let Err(reason) = sim.check() {
            return Err(SimError::InvariantBreach { time: t, event: ev, reason, trace: sim.recent.into_iter().collect() });
        }
    }

    let span = cfg.horizon - cfg.warmup;
    let c = &sim.counts;
    let rate = |n: u64| n as f64 / span;
    let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
    let [inv, orbit, hall, busy, vac, idle, all_vac] = area.map(|a| a / span);
    let mut report = MetricsReport {
        l1: inv,
        l2: rate(c.reorders),
        l3: orbit,
        l4: rate(c.orbit_entries),
        l5: ratio(orbit, rate(c.orbit_entries)),
        l6: hall,
        l7: rate(c.admitted),
        l8: ratio(hall, rate(c.admitted)),
        l9: rate(c.losses),
        l9_balance: rate(c.losses),
        l10: busy,
        l11: vac,
        l12: idle,
        l13: rate(c.retrials),
        l14: rate(c.retrial_successes),
        l15: ratio(rate(c.retrial_successes), rate(c.retrials)),
        l16: all_vac,
        etc: 0.0,
    };
    report.etc = crate::metrics::expected_total_cost(&report, &p);
    Ok(RunResult { seed, report, counts: sim.counts })
}

/// Mean and standard error across replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    /// Per measure, in `L1..L16, ETC` order. `None` when some replication
    /// had the measure undefined.
    pub mean: [Option<f64>; 17],
    pub se: [Option<f64>; 17],
    pub reps: usize,
    /// Summed over replications.
    pub counts: EventCounts,
    /// Smallest per-replication event count.
    pub min_events: u64,
}

impl SimEstimate {
    /// `(analytic - mean) / se` per measure; `None` where undefined or `se = 0`.
    pub fn z_scores(&self, analytic: &[Option<f64>; 17]) -> [Option<f64>; 17] {
        core::array::from_fn(|i| match (analytic[i], self.mean[i], self.se[i]) {
            (Some(a), Some(m), Some(se)) if se > 0.0 => Some((a - m) / se),
            _ => None,
        })
    }
}

/// Fails if two replications share a seed.
pub fn check_seeds(seeds: &[RunSeed]) -> Result<(), SimError> {
    for (i, a) in seeds.iter().enumerate() {
        if let Some(j) = seeds[..i].iter().position(|b| b == a) {
            return Err(SimError::DuplicateSeed { first: j, second: i, seed: *a });
        }
    }
    Ok(())
}

/// Combines independent runs. The result does not depend on run order.
pub fn aggregate(runs: &[RunResult]) -> Result<SimEstimate, SimError> {
    if runs.len() < 2 {
        return Err(SimError::TooFewReplications(runs.len()));
    }
    let n = runs.len() as f64;
    let mut mean = [None; 17];
    let mut se = [None; 17];
    for i in 0..17 {
        let mut xs: Option<Vec<f64>> = runs.iter().map(|r| r.report.values()[i]).collect();
        if let Some(xs) = xs.as_mut() {
            xs.sort_by(f64::total_cmp);
            let m = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            mean[i] = Some(m);
            se[i] = Some(libm::sqrt(var / n));
        }
    }
    let mut counts = EventCounts::default();
    for r in runs {
        counts.add(&r.counts);
    }
    let min_events = runs.iter().map(|r| r.counts.total).min().unwrap_or(0);
    Ok(SimEstimate { mean, se, reps: runs.len(), counts, min_events })
}

/// Runs the given seeds one after another and aggregates them.
pub fn replicate_seeds(params: &ModelParams, cfg: &SimConfig, seeds: &[RunSeed]) -> Result<SimEstimate, SimError> {
    if seeds.len() < 2 {
        return Err(SimError::TooFewReplications(seeds.len()));
    }
    check_seeds(seeds)?;
    let runs = seeds
        .iter()
        .enumerate()
        .map(|(index, &s)| simulate(params, cfg, s).map_err(|e| SimError::Replication { index, source: Box::new(e) }))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(&runs)
}

/// `reps` replications seeded from `base_seed`.
pub fn replicate(params: &ModelParams, cfg: &SimConfig, reps: usize, base_seed: u64) -> Result<SimEstimate, SimError> {
    let seeds: Vec<_> = (0..reps as u64).map(|i| RunSeed::derive(base_seed, i)).collect();
    replicate_seeds(params, cfg, &seeds)
}
