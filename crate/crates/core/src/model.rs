//! System parameters, unit costs and their validation.

use thiserror::Error;

/// Unit cost coefficients of the expected-total-cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Costs {
    /// Holding cost per item per unit time.
    pub ch: f64,
    /// Setup cost per order.
    pub cs: f64,
    /// Waiting cost per orbiting customer per unit time.
    pub co: f64,
    /// Waiting cost per customer in the hall per unit time.
    pub cw: f64,
    /// Cost per lost customer.
    pub cl: f64,
}

impl Default for Costs {
    fn default() -> Self {
        Costs { ch: 0.01, cs: 3.0, co: 1.0, cw: 1.3, cl: 0.01 }
    }
}

/// Every rate, size and probability of the model.
///
/// Field names follow the conventional notation of the (s,Q) retrial
/// literature so configuration files can use them verbatim.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Maximum inventory.
    pub S: u32,
    /// Reorder level.
    pub s: u32,
    /// Number of identical servers.
    pub c: u32,
    /// Waiting-hall capacity, customers in service included.
    pub N: u32,
    /// Orbit level from which the retrial rate is frozen.
    pub M: u32,
    pub lambda: f64,
    pub mu: f64,
    pub theta: f64,
    pub eta: f64,
    pub beta: f64,
    /// Probability that a customer finding the hall full joins the orbit.
    pub p: f64,
    pub costs: Costs,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            S: 32,
            s: 10,
            c: 3,
            N: 4,
            M: 5,
            lambda: 2.5,
            mu: 5.0,
            theta: 0.7,
            eta: 2.7,
            beta: 1.5,
            p: 0.7,
            costs: Costs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("s must be < S (s = {s}, S = {big_s})")]
    ReorderLevelNotBelowMax { s: u32, big_s: u32 },
    #[error("s must be < Q = S - s (s = {s}, Q = {q})")]
    ReorderLevelNotBelowQuantity { s: u32, q: u32 },
    #[error("c must be >= 1")]
    NoServers,
    #[error("S must be >= c (S = {big_s}, c = {c})")]
    StockBelowServers { big_s: u32, c: u32 },
    #[error("N must be >= c (N = {n}, c = {c})")]
    HallSmallerThanServers { n: u32, c: u32 },
    #[error("M must be >= 1")]
    ZeroTruncation,
    #[error("{name} must be > 0 (got {value})")]
    NonPositiveRate { name: &'static str, value: f64 },
    #[error("theta must be >= 0 (got {0})")]
    NegativeRetrialRate(f64),
    #[error("p must lie in [0,1] (got {0})")]
    ProbabilityOutOfRange(f64),
    #[error("cost {name} must be >= 0 (got {value})")]
    NegativeCost { name: &'static str, value: f64 },
}

/// Quantities that follow directly from the parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    /// Reorder quantity `S - s`.
    pub q: u32,
    /// Offered load `lambda / (c mu)`.
    pub rho: f64,
}

impl ModelParams {
    /// Reorder quantity.
    pub fn q(&self) -> u32 {
        self.S - self.s
    }

    /// Checks every parameter invariant and returns the value unchanged.
    pub fn validate(self) -> Result<Self, ParamError> {
        if self.s >= self.S {
            return Err(ParamError::ReorderLevelNotBelowMax { s: self.s, big_s: self.S });
        }
        if self.s >= self.q() {
            return Err(ParamError::ReorderLevelNotBelowQuantity { s: self.s, q: self.q() });
        }
        if self.c == 0 {
            return Err(ParamError::NoServers);
        }
        if self.S < self.c {
            return Err(ParamError::StockBelowServers { big_s: self.S, c: self.c });
        }
        if self.N < self.c {
            return Err(ParamError::HallSmallerThanServers { n: self.N, c: self.c });
        }
        if self.M == 0 {
            return Err(ParamError::ZeroTruncation);
        }
        for (name, value) in [
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("eta", self.eta),
            ("beta", self.beta),
        ] {
            // written so that NaN is rejected too
            if !(value.is_finite() && value > 0.0) {
                return Err(ParamError::NonPositiveRate { name, value });
            }
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(ParamError::NegativeRetrialRate(self.theta));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ParamError::ProbabilityOutOfRange(self.p));
        }
        let k = self.costs;
        for (name, value) in [("ch", k.ch), ("cs", k.cs), ("co", k.co), ("cw", k.cw), ("cl", k.cl)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::NegativeCost { name, value });
            }
        }
        Ok(self)
    }

    pub fn derived(&self) -> DerivedQuantities {
        DerivedQuantities { q: self.q(), rho: self.lambda / (f64::from(self.c) * self.mu) }
    }

    /// Multiplies every rate by `k`, leaving sizes, probabilities and costs alone.
    pub fn rescale_time(mut self, k: f64) -> Self {
        self.lambda *= k;
        self.mu *= k;
        self.theta *= k;
        self.eta *= k;
        self.beta *= k;
        self
    }

    /// Sets a field by its configuration name.
    pub fn set_field(&mut self, name: &str, value: f64) -> Result<(), UnknownField> {
        let as_int = || -> Result<u32, UnknownField> {
            if value >= 0.0 && libm::trunc(value) == value && value <= f64::from(u32::MAX) {
                Ok(value as u32)
            } else {
                Err(UnknownField::NotAnInteger)
            }
        };
        match name {
            "S" => self.S = as_int()?,
            "s" => self.s = as_int()?,
            "c" => self.c = as_int()?,
            "N" => self.N = as_int()?,
            "M" => self.M = as_int()?,
            "lambda" => self.lambda = value,
            "mu" => self.mu = value,
            "theta" => self.theta = value,
            "eta" => self.eta = value,
            "beta" => self.beta = value,
            "p" => self.p = value,
            "ch" => self.costs.ch = value,
            "cs" => self.costs.cs = value,
            "co" => self.costs.co = value,
            "cw" => self.costs.cw = value,
            "cl" => self.costs.cl = value,
            _ => return Err(UnknownField::Unknown),
        }
        Ok(())
    }

    /// Reads a field by its configuration name.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "S" => f64::from(self.S),
            "s" => f64::from(self.s),
            "c" => f64::from(self.c),
            "N" => f64::from(self.N),
            "M" => f64::from(self.M),
            "lambda" => self.lambda,
            "mu" => self.mu,
            "theta" => self.theta,
            "eta" => self.eta,
            "beta" => self.beta,
            "p" => self.p,
            "ch" => self.costs.ch,
            "cs" => self.costs.cs,
            "co" => self.costs.co,
            "cw" => self.costs.cw,
            "cl" => self.costs.cl,
            _ => return None,
        })
    }
}

/// Configuration names of all parameter fields, in report column order.
pub const FIELD_NAMES: [&str; 16] = [
    "lambda", "mu", "theta", "eta", "beta", "p", "S", "s", "c", "N", "M", "ch", "cs", "co", "cw", "cl",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum UnknownField {
    #[error("unknown parameter")]
    Unknown,
    #[error("expected a non-negative integer")]
    NotAnInteger,
}
