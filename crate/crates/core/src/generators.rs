//! Seeded instance generation for the four variants and the 8x geometric
//! augmentation used at inference.
//!
//! Generation happens in normalized units: raw draws in `[0, 100]` are divided
//! by the scale before any derived quantity (cumulative distance, windows) is
//! computed, so a constructed witness replays through the evaluators with no
//! rounding drift.

use crate::exec::Exec;
use crate::oracle::{solve_exact, OracleStatus};
use crate::problems::{dist, Node, ProblemError, ProblemInstance, Variant, DEFAULT_SCALE};
use crate::rng::StreamRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GENERATOR_VERSION: u32 = 1;

/// Asymptotic constant of the random Euclidean TSP tour length.
pub const BHH_CONSTANT: f64 = 0.7124;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("no certified-feasible instance after {0} attempts")]
    CertificationExhausted(usize),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(GenError::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// Tour-length estimate used by the Easy/Medium time-window generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TnEstimate {
    Auto,
    /// Raw units.
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub variant: Variant,
    /// Customer count.
    pub n: usize,
    pub difficulty: Difficulty,
    pub seed: u64,
    /// Percentage of draft-restricted ports; `None` picks the difficulty default.
    pub sigma_pct: Option<f64>,
    /// Hard time-window half width, raw units.
    pub eta: f64,
    pub tn_estimate: TnEstimate,
    /// Window-width factor range `[lo, hi]` (multiples of `T_N`); `None`
    /// picks the difficulty default.
    pub window_factor: Option<(f64, f64)>,
    /// Easy/Medium TSPTW: place each window (same widths) around the arrival
    /// time along a random permutation, which becomes the witness.
    pub anchored: bool,
    pub capacity: f64,
    /// Half width of the jitter placed around witness arrival times for the
    /// CVRP variants, raw units.
    pub route_window_jitter: f64,
    /// Rejection-sample until the exact oracle proves feasibility (n <= 12).
    pub certify: bool,
    pub certify_attempts: usize,
    pub certify_budget: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Tsptw,
            n: 10,
            difficulty: Difficulty::Medium,
            seed: 0,
            sigma_pct: None,
            eta: 50.0,
            tn_estimate: TnEstimate::Auto,
            window_factor: None,
            anchored: false,
            capacity: 40.0,
            route_window_jitter: 30.0,
            certify: false,
            certify_attempts: 2000,
            certify_budget: 2_000_000,
        }
    }
}

impl GenConfig {
    pub fn new(variant: Variant, n: usize, difficulty: Difficulty, seed: u64) -> Self {
        Self {
            variant,
            n,
            difficulty,
            seed,
            ..Self::default()
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_pct.unwrap_or(match self.difficulty {
            Difficulty::Easy => 50.0,
            Difficulty::Medium => 75.0,
            Difficulty::Hard => 90.0,
        })
    }

    pub fn width_factor(&self) -> (f64, f64) {
        self.window_factor.unwrap_or(match self.difficulty {
            Difficulty::Easy => (0.5, 0.75),
            _ => (0.1, 0.2),
        })
    }

    /// `T_N` in raw units.
    pub fn tn(&self) -> f64 {
        match self.tn_estimate {
            TnEstimate::Auto => tn_estimate(self.n, DEFAULT_SCALE),
            TnEstimate::Value(v) => v,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.n == 0 {
            return Err(GenError::Config("n must be at least 1".into()));
        }
        let sigma = self.sigma();
        if !(0.0..=100.0).contains(&sigma) {
            return Err(GenError::Config(format!("sigma_pct {sigma} outside [0, 100]")));
        }
        if !(self.eta > 0.0) {
            return Err(GenError::Config(format!("eta {} must be positive", self.eta)));
        }
        if !(self.capacity >= 9.0) {
            return Err(GenError::Config(format!("capacity {} must cover the largest demand (9)", self.capacity)));
        }
        let (lo, hi) = self.width_factor();
        if !(0.0 <= lo && lo <= hi) {
            return Err(GenError::Config(format!("window factor [{lo}, {hi}] is not an interval")));
        }
        Ok(())
    }
}

/// `T_N = 0.7124 * sqrt(n) * side`.
pub fn tn_estimate(n: usize, area_side: f64) -> f64 {
    BHH_CONSTANT * (n as f64).sqrt() * area_side
}

fn random_nodes(n: usize, rng: &mut StreamRng) -> Vec<Node> {
    (0..=n)
        .map(|_| {
            let x = rng.uniform_in(0.0, 100.0) / DEFAULT_SCALE;
            let y = rng.uniform_in(0.0, 100.0) / DEFAULT_SCALE;
            Node::at(x, y)
        })
        .collect()
}

fn close_depot_window(inst: &mut ProblemInstance) {
    let late = (1..inst.nodes.len())
        .map(|p| inst.nodes[p].tw_late + dist(inst, 0, p))
        .fold(0.0, f64::max);
    inst.nodes[0].tw_early = 0.0;
    inst.nodes[0].tw_late = late;
}

fn draw_tsptw(cfg: &GenConfig, rng: &mut StreamRng) -> Result<ProblemInstance, GenError> {
    let mut inst = ProblemInstance {
        variant: Variant::Tsptw,
        nodes: random_nodes(cfg.n, rng),
        capacity: None,
        fleet_limit: None,
        scale: DEFAULT_SCALE,
        witness: None,
    };
    match cfg.difficulty {
        Difficulty::Easy | Difficulty::Medium if cfg.anchored => {
            let tn = cfg.tn() / DEFAULT_SCALE;
            let (lo, hi) = cfg.width_factor();
            let mut order: Vec<usize> = (1..=cfg.n).collect();
            rng.shuffle(&mut order);
            let mut psi = 0.0;
            let mut prev = 0;
            for &i in &order {
                psi += dist(&inst, prev, i);
                let w = tn * rng.uniform_in(lo, hi);
                let e = (psi - w * rng.uniform()).max(0.0).min(psi);
                inst.nodes[i].tw_early = e;
                inst.nodes[i].tw_late = (e + w).max(psi);
                prev = i;
            }
            inst.witness = Some(order);
        }
        Difficulty::Easy | Difficulty::Medium => {
            let tn = cfg.tn() / DEFAULT_SCALE;
            let (lo, hi) = cfg.width_factor();
            for node in &mut inst.nodes[1..] {
                let e = rng.uniform_in(0.0, tn);
                node.tw_early = e;
                node.tw_late = e + tn * rng.uniform_in(lo, hi);
            }
        }
        Difficulty::Hard => {
            let eta = cfg.eta / DEFAULT_SCALE;
            let mut order: Vec<usize> = (1..=cfg.n).collect();
            rng.shuffle(&mut order);
            let mut psi = 0.0;
            let mut prev = 0;
            for &i in &order {
                psi += dist(&inst, prev, i);
                let e = rng.uniform_in((psi - eta).max(0.0), psi).min(psi);
                let l = rng.uniform_in(psi, psi + eta).max(psi);
                inst.nodes[i].tw_early = e;
                inst.nodes[i].tw_late = l;
                prev = i;
            }
            inst.witness = Some(order);
        }
    }
    close_depot_window(&mut inst);
    inst.validate()?;
    Ok(inst)
}

fn draw_tspdl(cfg: &GenConfig, rng: &mut StreamRng) -> Result<ProblemInstance, GenError> {
    let n = cfg.n;
    let mut nodes = random_nodes(n, rng);
    let total = n as f64;
    for node in &mut nodes[1..] {
        node.demand = 1.0;
        node.draft = Some(total);
    }
    nodes[0].draft = Some(total);
    let restricted = restricted_count(n, cfg.sigma());
    for c in rng.sample_without_replacement(n, restricted) {
        let node = &mut nodes[c + 1];
        node.draft = Some(rng.uniform_in(node.demand, total).max(node.demand));
    }
    let inst = ProblemInstance {
        variant: Variant::Tspdl,
        nodes,
        capacity: None,
        fleet_limit: None,
        scale: DEFAULT_SCALE,
        witness: None,
    };
    inst.validate()?;
    Ok(inst)
}

/// `round(sigma * n / 100)` draft-restricted ports.
pub fn restricted_count(n: usize, sigma_pct: f64) -> usize {
    ((sigma_pct * n as f64 / 100.0).round() as usize).min(n)
}

/// Packs customers into routes first-fit-decreasing (after a random shuffle
/// so equal demands tie-break randomly), then shuffles visit order inside
/// each route.
fn pack_routes(demands: &[(usize, f64)], capacity: f64, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut items = demands.to_vec();
    rng.shuffle(&mut items);
    items.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut bins: Vec<(f64, Vec<usize>)> = Vec::new();
    for (c, q) in items {
        match bins.iter_mut().find(|(load, _)| load + q <= capacity) {
            Some((load, members)) => {
                *load += q;
                members.push(c);
            }
            None => bins.push((q, vec![c])),
        }
    }
    let mut routes: Vec<Vec<usize>> = bins.into_iter().map(|(_, m)| m).collect();
    for r in &mut routes {
        rng.shuffle(r);
    }
    rng.shuffle(&mut routes);
    routes
}

fn draw_cvrptw(cfg: &GenConfig, rng: &mut StreamRng, variant: Variant) -> Result<ProblemInstance, GenError> {
    let mut nodes = random_nodes(cfg.n, rng);
    for node in &mut nodes[1..] {
        node.demand = (rng.below(9) + 1) as f64;
    }
    let demands: Vec<(usize, f64)> = (1..=cfg.n).map(|i| (i, nodes[i].demand)).collect();
    let mut inst = ProblemInstance {
        variant,
        nodes,
        capacity: Some(cfg.capacity),
        fleet_limit: None,
        scale: DEFAULT_SCALE,
        witness: None,
    };
    let routes = pack_routes(&demands, cfg.capacity, rng);
    let jitter = cfg.route_window_jitter / DEFAULT_SCALE;
    let mut witness = vec![0];
    for route in &routes {
        let mut t = 0.0;
        let mut prev = 0;
        for &c in route {
            t += dist(&inst, prev, c);
            let e = (t - rng.uniform_in(0.0, jitter)).max(0.0).min(t);
            let l = (t + rng.uniform_in(0.0, jitter)).max(t);
            inst.nodes[c].tw_early = e;
            inst.nodes[c].tw_late = l;
            witness.push(c);
            prev = c;
        }
        witness.push(0);
    }
    close_depot_window(&mut inst);
    if variant == Variant::Cvrptwlv {
        let k = fleet_limit(inst.total_demand(), cfg.capacity);
        inst.fleet_limit = Some(k);
        if routes.len() > k as usize {
            witness.clear();
        }
    }
    if !witness.is_empty() {
        inst.witness = Some(witness);
    }
    inst.validate()?;
    Ok(inst)
}

/// `K = ceil(total_demand / Q)`, at least 1.
pub fn fleet_limit(total_demand: f64, capacity: f64) -> u32 {
    ((total_demand / capacity).ceil() as u32).max(1)
}

fn draw(cfg: &GenConfig, rng: &mut StreamRng) -> Result<ProblemInstance, GenError> {
    match cfg.variant {
        Variant::Tsptw => draw_tsptw(cfg, rng),
        Variant::Tspdl => draw_tspdl(cfg, rng),
        Variant::Cvrptw => draw_cvrptw(cfg, rng, Variant::Cvrptw),
        Variant::Cvrptwlv => draw_cvrptw(cfg, rng, Variant::Cvrptwlv),
    }
}

/// The `index`-th instance of the dataset described by `cfg`.
pub fn generate(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    cfg.validate()?;
    let mut rng = StreamRng::for_instance(cfg.seed, index);
    if !cfg.certify {
        return draw(cfg, &mut rng);
    }
    for _ in 0..cfg.certify_attempts {
        let mut inst = draw(cfg, &mut rng)?;
        let res = solve_exact(&inst, cfg.certify_budget);
        if res.status == OracleStatus::Optimal {
            if inst.witness.is_none() {
                inst.witness = res.best_trajectory.map(|t| t.steps);
            }
            return Ok(inst);
        }
    }
    Err(GenError::CertificationExhausted(cfg.certify_attempts))
}

pub fn gen_tsptw(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    generate(&GenConfig { variant: Variant::Tsptw, ..cfg.clone() }, index)
}

pub fn gen_tspdl(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    generate(&GenConfig { variant: Variant::Tspdl, ..cfg.clone() }, index)
}

pub fn gen_cvrptw(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    generate(&GenConfig { variant: Variant::Cvrptw, ..cfg.clone() }, index)
}

pub fn gen_cvrptwlv(cfg: &GenConfig, index: u64) -> Result<ProblemInstance, GenError> {
    generate(&GenConfig { variant: Variant::Cvrptwlv, ..cfg.clone() }, index)
}

/// Instances `offset..offset + count` of a dataset.
pub fn generate_dataset(cfg: &GenConfig, offset: u64, count: usize, exec: Exec) -> Result<Vec<ProblemInstance>, GenError> {
    exec.map_range(count, |i| generate(cfg, offset + i as u64)).into_iter().collect()
}

/// Companion record written next to a JSONL dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub n: usize,
    pub variant: Variant,
    pub difficulty: Difficulty,
    pub count: usize,
    pub generator_version: u32,
}

impl DatasetManifest {
    pub fn for_config(cfg: &GenConfig, count: usize) -> Self {
        Self {
            seed: cfg.seed,
            n: cfg.n,
            variant: cfg.variant,
            difficulty: cfg.difficulty,
            count,
            generator_version: GENERATOR_VERSION,
        }
    }
}

/// The eight coordinate maps, identity first, in table order.
pub fn transform(k: usize, x: f64, y: f64) -> (f64, f64) {
    match k {
        0 => (x, y),
        1 => (1.0 - x, y),
        2 => (x, 1.0 - y),
        3 => (1.0 - x, 1.0 - y),
        4 => (y, x),
        5 => (1.0 - y, x),
        6 => (y, 1.0 - x),
        7 => (1.0 - y, 1.0 - x),
        _ => panic!("augmentation index {k} out of range"),
    }
}

/// Identity plus seven reflections/rotations of the unit square. Only
/// coordinates change.
pub fn augment8(instance: &ProblemInstance) -> Vec<ProblemInstance> {
    (0..8)
        .map(|k| {
            let mut out = instance.clone();
            for node in &mut out.nodes {
                let (x, y) = transform(k, node.x, node.y);
                node.x = x;
                node.y = y;
            }
            out
        })
        .collect()
}
