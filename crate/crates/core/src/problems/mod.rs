//! Routing problem instances and their trajectory evaluators.
//!
//! Four variants share one node model: TSP with time windows, TSP with draft
//! limits, and capacitated VRP with time windows (optionally with a fleet
//! limit). Coordinates and times are stored in normalized units (raw values
//! divided by [`ProblemInstance::scale`]).

mod eval;
mod io;

pub use eval::{
    dist, evaluate, evaluate_cvrptw, evaluate_cvrptwlv, evaluate_tspdl, evaluate_tsptw, lagrangian,
};
pub use io::{instance_from_json, instance_to_json, read_jsonl, write_jsonl, FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Default raw-to-normalized factor (raw coordinates live in `[0, 100]`).
pub const DEFAULT_SCALE: f64 = 100.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
    #[error("evaluator for {expected} called on a {found} instance")]
    VariantMismatch { expected: String, found: Variant },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("lagrange multiplier for {0} is negative")]
    NegativeMultiplier(ConstraintFamily),
    #[error("instance format: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    #[serde(rename = "TSPTW")]
    Tsptw,
    #[serde(rename = "TSPDL")]
    Tspdl,
    #[serde(rename = "CVRPTW")]
    Cvrptw,
    #[serde(rename = "CVRPTWLV")]
    Cvrptwlv,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tsptw, Variant::Tspdl, Variant::Cvrptw, Variant::Cvrptwlv];

    /// Multi-route variants whose trajectories may revisit the depot.
    pub fn is_multi_route(self) -> bool {
        matches!(self, Variant::Cvrptw | Variant::Cvrptwlv)
    }

    pub fn has_time_windows(self) -> bool {
        !matches!(self, Variant::Tspdl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tsptw => "TSPTW",
            Variant::Tspdl => "TSPDL",
            Variant::Cvrptw => "CVRPTW",
            Variant::Cvrptwlv => "CVRPTWLV",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TSPTW" => Ok(Variant::Tsptw),
            "TSPDL" => Ok(Variant::Tspdl),
            "CVRPTW" => Ok(Variant::Cvrptw),
            "CVRPTWLV" => Ok(Variant::Cvrptwlv),
            other => Err(ProblemError::Format(format!("unknown variant {other:?}"))),
        }
    }
}

/// A depot or customer. Unbounded windows use `tw_late = f64::INFINITY`.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub x: f64,
    pub y: f64,
    pub demand: f64,
    pub tw_early: f64,
    pub tw_late: f64,
    pub service: f64,
    pub draft: Option<f64>,
}

impl Node {
    pub fn at(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            demand: 0.0,
            tw_early: 0.0,
            tw_late: f64::INFINITY,
            service: 0.0,
            draft: None,
        }
    }

    pub fn with_window(mut self, early: f64, late: f64) -> Self {
        self.tw_early = early;
        self.tw_late = late;
        self
    }

    pub fn with_demand(mut self, demand: f64) -> Self {
        self.demand = demand;
        self
    }

    pub fn with_draft(mut self, draft: f64) -> Self {
        self.draft = Some(draft);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub variant: Variant,
    /// Index 0 is the depot.
    pub nodes: Vec<Node>,
    pub capacity: Option<f64>,
    pub fleet_limit: Option<u32>,
    pub scale: f64,
    /// A known feasible trajectory, when the generator constructed one.
    pub witness: Option<Vec<usize>>,
}

impl ProblemInstance {
    /// Builds and validates an instance.
    pub fn new(
        variant: Variant,
        nodes: Vec<Node>,
        capacity: Option<f64>,
        fleet_limit: Option<u32>,
    ) -> Result<Self, ProblemError> {
        let inst = Self {
            variant,
            nodes,
            capacity,
            fleet_limit,
            scale: DEFAULT_SCALE,
            witness: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn customers(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn depot(&self) -> &Node {
        &self.nodes[0]
    }

    /// Total customer demand (the initial load for draft-limited tours).
    pub fn total_demand(&self) -> f64 {
        self.nodes[1..].iter().map(|n| n.demand).sum()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let bad = |m: String| Err(ProblemError::InvalidInstance(m));
        if self.nodes.is_empty() {
            return bad("no depot".into());
        }
        if !(self.scale > 0.0) {
            return bad(format!("scale {} must be positive", self.scale));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !(n.x.is_finite() && n.y.is_finite()) {
                return bad(format!("node {i} has non-finite coordinates"));
            }
            if !(0.0..=1.0).contains(&n.x) || !(0.0..=1.0).contains(&n.y) {
                return bad(format!("node {i} coordinates ({}, {}) outside [0,1]", n.x, n.y));
            }
            if n.tw_early.is_nan() || n.tw_late.is_nan() || n.tw_early > n.tw_late {
                return bad(format!("node {i} window [{}, {}] is empty", n.tw_early, n.tw_late));
            }
            if !(n.demand >= 0.0) || !n.demand.is_finite() {
                return bad(format!("node {i} demand {} must be nonnegative", n.demand));
            }
            if !(n.service >= 0.0) {
                return bad(format!("node {i} service {} must be nonnegative", n.service));
            }
            if let Some(d) = n.draft {
                if !(d >= n.demand) {
                    return bad(format!("node {i} draft {d} below its demand {}", n.demand));
                }
            }
        }
        if self.nodes[0].demand != 0.0 {
            return bad("depot demand must be 0".into());
        }
        if self.variant.is_multi_route() {
            match self.capacity {
                Some(q) if q > 0.0 => {}
                _ => return bad("capacity must be positive for CVRP variants".into()),
            }
        }
        if self.variant == Variant::Cvrptwlv {
            match self.fleet_limit {
                Some(k) if k >= 1 => {}
                _ => return bad("fleet_limit must be at least 1".into()),
            }
        }
        if self.variant == Variant::Tspdl && self.nodes[1..].iter().any(|n| n.draft.is_none()) {
            return bad("every TSPDL customer needs a draft limit".into());
        }
        Ok(())
    }
}

/// A node visit sequence.
///
/// TSP variants hold a permutation of `1..=n` that is implicitly closed
/// through the depot. CVRP variants hold a depot-delimited sequence that
/// starts and ends at 0.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<usize>,
}

impl Trajectory {
    pub fn new(steps: Vec<usize>) -> Self {
        Self { steps }
    }

    /// Number of depot departures for multi-route trajectories.
    pub fn route_count(&self) -> usize {
        self.steps.windows(2).filter(|w| w[0] == 0 && w[1] != 0).count()
    }

    /// Checks the structural invariants against an instance.
    pub fn check(&self, instance: &ProblemInstance) -> Result<(), ProblemError> {
        let n = instance.customers();
        let bad = |m: String| Err(ProblemError::MalformedTrajectory(m));
        let mut seen = vec![false; n + 1];
        if instance.variant.is_multi_route() {
            if self.steps.first() != Some(&0) || self.steps.last() != Some(&0) {
                return bad("multi-route trajectory must start and end at the depot".into());
            }
            if self.steps.windows(2).any(|w| w[0] == 0 && w[1] == 0) {
                return bad("consecutive depot visits".into());
            }
        } else if self.steps.contains(&0) {
            return bad("depot index inside a TSP tour".into());
        }
        for &s in &self.steps {
            if s > n {
                return bad(format!("node index {s} out of range (n = {n})"));
            }
            if s == 0 {
                continue;
            }
            if seen[s] {
                return bad(format!("customer {s} visited twice"));
            }
            seen[s] = true;
        }
        if let Some(missing) = (1..=n).find(|&i| !seen[i]) {
            return bad(format!("customer {missing} never visited"));
        }
        if n == 0 && instance.variant.is_multi_route() && self.steps.len() != 1 {
            return bad("empty instance trajectory must be [0]".into());
        }
        Ok(())
    }
}

/// Constraint families whose violations enter the Lagrangian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    TimeWindow,
    Draft,
    Capacity,
    Fleet,
}

impl ConstraintFamily {
    pub const ALL: [ConstraintFamily; 4] = [
        ConstraintFamily::TimeWindow,
        ConstraintFamily::Draft,
        ConstraintFamily::Capacity,
        ConstraintFamily::Fleet,
    ];
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintFamily::TimeWindow => "time_window",
            ConstraintFamily::Draft => "draft",
            ConstraintFamily::Capacity => "capacity",
            ConstraintFamily::Fleet => "fleet",
        })
    }
}

/// One nonnegative value per constraint family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerFamily {
    pub time_window: f64,
    pub draft: f64,
    pub capacity: f64,
    pub fleet: f64,
}

impl PerFamily {
    pub fn splat(v: f64) -> Self {
        Self {
            time_window: v,
            draft: v,
            capacity: v,
            fleet: v,
        }
    }

    pub fn get(&self, family: ConstraintFamily) -> f64 {
        match family {
            ConstraintFamily::TimeWindow => self.time_window,
            ConstraintFamily::Draft => self.draft,
            ConstraintFamily::Capacity => self.capacity,
            ConstraintFamily::Fleet => self.fleet,
        }
    }

    pub fn get_mut(&mut self, family: ConstraintFamily) -> &mut f64 {
        match family {
            ConstraintFamily::TimeWindow => &mut self.time_window,
            ConstraintFamily::Draft => &mut self.draft,
            ConstraintFamily::Capacity => &mut self.capacity,
            ConstraintFamily::Fleet => &mut self.fleet,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConstraintFamily, f64)> + '_ {
        ConstraintFamily::ALL.into_iter().map(move |f| (f, self.get(f)))
    }

    pub fn all_zero(&self) -> bool {
        self.iter().all(|(_, v)| v == 0.0)
    }
}

/// Lagrange multipliers. `mu` covers equality families; the four routing
/// problems have none because decoding satisfies them structurally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianConfig {
    pub lambda: PerFamily,
    #[serde(default)]
    pub mu: BTreeMap<String, f64>,
}

impl Default for LagrangianConfig {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl LagrangianConfig {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            lambda: PerFamily::splat(lambda),
            mu: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        for (family, v) in self.lambda.iter() {
            if !(v >= 0.0) {
                return Err(ProblemError::NegativeMultiplier(family));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Total travel distance.
    pub objective: f64,
    pub violations: PerFamily,
    /// 0 iff every violation magnitude is zero.
    pub indicator: u8,
    pub lagrangian: f64,
}

impl EvalReport {
    pub fn is_feasible(&self) -> bool {
        self.indicator == 0
    }

    /// Penalty part of the Lagrangian, `L - f`.
    pub fn penalty(&self) -> f64 {
        self.lagrangian - self.objective
    }
}
