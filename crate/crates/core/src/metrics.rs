//! Steady-state performance measures and the expected total cost.

use thiserror::Error;

use crate::model::ModelParams;
use crate::solver::StationaryDistribution;
use crate::statespace::{MacroLevel, StateSpace};

/// Column names of the measures, in report order.
pub const MEASURE_NAMES: [&str; 17] = [
    "L1", "L2", "L3", "L4", "L5", "L6", "L7", "L8", "L9", "L10", "L11", "L12", "L13", "L14", "L15", "L16", "ETC",
];

/// The sixteen measures plus cost. Ratios whose denominator vanishes are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Mean inventory level.
    pub l1: f64,
    /// Mean reorder rate.
    pub l2: f64,
    /// Mean orbit size.
    pub l3: f64,
    /// Rate of customers entering the orbit.
    pub l4: f64,
    /// Mean orbit sojourn, `l3 / l4`.
    pub l5: Option<f64>,
    /// Mean number in the waiting hall.
    pub l6: f64,
    /// Rate of primary customers entering the hall.
    pub l7: f64,
    /// Mean hall sojourn, `l6 / l7`.
    pub l8: Option<f64>,
    /// Loss rate of primary customers, weighted as in the literature (the
    /// all-vacation empty-stock level carries weight `p`).
    pub l9: f64,
    /// Loss rate `(1 - p) lambda P(full hall)` from flow balance.
    pub l9_balance: f64,
    /// Mean busy servers.
    pub l10: f64,
    /// Mean servers on vacation.
    pub l11: f64,
    /// Mean idle servers, `c - l10 - l11`.
    pub l12: f64,
    /// Overall retrial rate.
    pub l13: f64,
    /// Successful retrial rate.
    pub l14: f64,
    /// Fraction of successful retrials, `l14 / l13`.
    pub l15: Option<f64>,
    /// Probability that every server is on vacation.
    pub l16: f64,
    pub etc: f64,
}

impl MetricsReport {
    /// `L1..L16, ETC` in column order.
    pub fn values(&self) -> [Option<f64>; 17] {
        [
            Some(self.l1),
            Some(self.l2),
            Some(self.l3),
            Some(self.l4),
            self.l5,
            Some(self.l6),
            Some(self.l7),
            self.l8,
            Some(self.l9),
            Some(self.l10),
            Some(self.l11),
            Some(self.l12),
            Some(self.l13),
            Some(self.l14),
            self.l15,
            Some(self.l16),
            Some(self.etc),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MetricsError {
    #[error("distribution is not normalized (total probability off by {0:e})")]
    NotNormalized(f64),
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// `ch L1 + cs L2 + co L3 + cw L6 + cl L9`.
pub fn expected_total_cost(r: &MetricsReport, params: &ModelParams) -> f64 {
    let k = params.costs;
    k.ch * r.l1 + k.cs * r.l2 + k.co * r.l3 + k.cw * r.l6 + k.cl * r.l9
}

pub fn compute_metrics(
    dist: &StationaryDistribution,
    space: &StateSpace,
    params: &ModelParams,
) -> Result<MetricsReport, MetricsError> {
    let err = dist.normalization_error();
    if err.is_nan() || err > 1e-8 {
        return Err(MetricsError::NotNormalized(err));
    }
    let tot = dist.marginal();
    let orb = dist.orbit_weighted();
    let c = f64::from(params.c);
    let q = params.q();

    let (mut l1, mut reorder, mut l3, mut full, mut full_zero_star, mut l6) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut l10, mut l11, mut retrial_room, mut l16) = (0.0, 0.0, 0.0, 0.0);
    for (i, &(level, st)) in space.states().iter().enumerate() {
        let pr = tot[i];
        let k = level.inventory(q);
        l1 += pr * f64::from(k);
        if k == params.s + 1 {
            reorder += pr * f64::from(st.busy);
        }
        l3 += orb[i];
        if st.hall == params.N {
            full += pr;
            if level == MacroLevel::ZeroStar {
                full_zero_star += pr;
            }
        } else {
            retrial_room += orb[i];
        }
        l6 += pr * f64::from(st.hall);
        l10 += pr * f64::from(st.busy);
        l11 += pr * f64::from(st.on_vacation);
        if st.on_vacation == params.c {
            l16 += pr;
        }
    }
    let l2 = params.mu * reorder;
    let l4 = params.p * params.lambda * full;
    let l7 = params.lambda * (1.0 - full);
    let l9 = params.lambda * ((1.0 - params.p) * (full - full_zero_star) + params.p * full_zero_star);
    let l9_balance = (1.0 - params.p) * params.lambda * full;
    let l13 = params.theta * l3;
    let l14 = params.theta * retrial_room;
    let mut report = MetricsReport {
        l1,
        l2,
        l3,
        l4,
        l5: ratio(l3, l4),
        l6,
        l7,
        l8: ratio(l6, l7),
        l9,
        l9_balance,
        l10,
        l11,
        l12: c - l10 - l11,
        l13,
        l14,
        l15: ratio(l14, l13),
        l16,
        etc: 0.0,
    };
    report.etc = expected_total_cost(&report, params);
    Ok(report)
}
