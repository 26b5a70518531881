//! Exact solutions for small instances: depth-first branch-and-bound with
//! constraint pruning, and a brute-force enumerator that shares nothing with
//! it except the evaluators.

use crate::problems::{dist, evaluate, LagrangianConfig, ProblemInstance, Trajectory, Variant};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest customer count [`solve_enumerate`] accepts.
pub const ENUMERATE_MAX_N: usize = 9;

/// Relative slack on bound comparisons. Keeps float noise in the bounds from
/// cutting a tour whose evaluated length ties the incumbent.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration supports n <= {ENUMERATE_MAX_N}, got {0}")]
    TooLarge(usize),
    #[error("optimality gap needs a positive optimum, got {0}")]
    NonPositiveOptimum(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleStatus {
    Optimal,
    InfeasibleInstance,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub status: OracleStatus,
    pub best_objective: Option<f64>,
    pub best_trajectory: Option<Trajectory>,
    pub nodes_expanded: u64,
}

/// `100 * (obj - opt) / opt`.
pub fn gap(obj: f64, opt: f64) -> Result<f64, OracleError> {
    if !(opt > 0.0) {
        return Err(OracleError::NonPositiveOptimum(opt));
    }
    Ok(100.0 * (obj - opt) / opt)
}

struct Search<'a> {
    inst: &'a ProblemInstance,
    d: Vec<Vec<f64>>,
    visited: Vec<bool>,
    path: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    expanded: u64,
    budget: u64,
    timed_out: bool,
    capacity: f64,
    fleet: usize,
}

impl<'a> Search<'a> {
    fn new(inst: &'a ProblemInstance, budget: u64) -> Self {
        let m = inst.nodes.len();
        let d = (0..m).map(|a| (0..m).map(|b| dist(inst, a, b)).collect()).collect();
        Self {
            inst,
            d,
            visited: vec![false; m],
            path: Vec::with_capacity(2 * m),
            best: None,
            expanded: 0,
            budget,
            timed_out: false,
            capacity: inst.capacity.unwrap_or(f64::INFINITY),
            fleet: inst.fleet_limit.map_or(usize::MAX, |k| k as usize),
        }
    }

    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |(v, _)| *v)
    }

    fn tick(&mut self) -> bool {
        self.expanded += 1;
        if self.expanded > self.budget {
            self.timed_out = true;
        }
        !self.timed_out
    }

    /// Sum of cheapest entering arcs for every unvisited node plus the final
    /// arc back into the depot. `sources_include_depot` admits depot-to-node
    /// arcs (multi-route variants).
    fn in_arc_bound(&self, cur: usize, sources_include_depot: bool) -> f64 {
        let m = self.inst.nodes.len();
        let mut bound = 0.0;
        let mut into_depot = if cur != 0 { self.d[cur][0] } else { f64::INFINITY };
        for v in 1..m {
            if self.visited[v] {
                continue;
            }
            let mut best = self.d[cur][v];
            if sources_include_depot {
                best = best.min(self.d[0][v]);
            }
            for u in 1..m {
                if u != v && !self.visited[u] {
                    best = best.min(self.d[u][v]);
                }
            }
            bound += best;
            into_depot = into_depot.min(self.d[v][0]);
        }
        if into_depot.is_finite() {
            bound += into_depot;
        }
        bound
    }

    fn prunable(&self, partial: f64, bound: f64) -> bool {
        let inc = self.incumbent();
        inc.is_finite() && partial + bound > inc * (1.0 + BOUND_SLACK) + 1e-12
    }

    fn offer(&mut self, objective: f64, steps: Vec<usize>) {
        if objective < self.incumbent() {
            self.best = Some((objective, steps));
        }
    }

    fn tsp(&mut self, cur: usize, t: f64, load: f64, partial: f64, remaining: usize) {
        if !self.tick() {
            return;
        }
        let nodes = &self.inst.nodes;
        let timed = self.inst.variant == Variant::Tsptw;
        if remaining == 0 {
            let d = self.d[cur][0];
            let back = (t + nodes[cur].service + d).max(nodes[0].tw_early);
            if timed && back > nodes[0].tw_late {
                return;
            }
            let steps = self.path.clone();
            self.offer(partial + d, steps);
            return;
        }
        if self.prunable(partial, self.in_arc_bound(cur, false)) {
            return;
        }
        let m = nodes.len();
        for v in 1..m {
            if self.visited[v] {
                continue;
            }
            let d = self.d[cur][v];
            let arrive = (t + nodes[cur].service + d).max(nodes[v].tw_early);
            if timed {
                if arrive > nodes[v].tw_late {
                    continue;
                }
                let leave = arrive + nodes[v].service;
                if leave + self.d[v][0] > nodes[0].tw_late * (1.0 + BOUND_SLACK) + 1e-12 {
                    continue;
                }
                let strands = (1..m).any(|u| {
                    u != v && !self.visited[u] && leave + self.d[v][u] > nodes[u].tw_late * (1.0 + BOUND_SLACK) + 1e-12
                });
                if strands {
                    continue;
                }
            } else if load > nodes[v].draft.unwrap_or(f64::INFINITY) {
                continue;
            }
            self.visited[v] = true;
            self.path.push(v);
            self.tsp(v, arrive, load - nodes[v].demand, partial + d, remaining - 1);
            self.path.pop();
            self.visited[v] = false;
            if self.timed_out {
                return;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn cvrp(&mut self, cur: usize, t: f64, load: f64, routes: usize, partial: f64, remaining: usize, rem_demand: f64) {
        if !self.tick() {
            return;
        }
        let nodes = &self.inst.nodes;
        let q = self.capacity;
        if remaining == 0 {
            let d = self.d[cur][0];
            let back = (t + nodes[cur].service + d).max(nodes[0].tw_early);
            if back > nodes[0].tw_late {
                return;
            }
            let mut steps = self.path.clone();
            steps.push(0);
            self.offer(partial + d, steps);
            return;
        }
        if self.fleet != usize::MAX {
            let spare = if cur != 0 { q - load } else { 0.0 };
            let extra = ((rem_demand - spare).max(0.0) / q).ceil() as usize;
            if routes + extra > self.fleet {
                return;
            }
        }
        if self.prunable(partial, self.in_arc_bound(cur, true)) {
            return;
        }
        let m = nodes.len();
        for v in 1..m {
            if self.visited[v] || load + nodes[v].demand > q {
                continue;
            }
            let routes_next = routes + usize::from(cur == 0);
            if routes_next > self.fleet {
                continue;
            }
            let d = self.d[cur][v];
            let arrive = (t + nodes[cur].service + d).max(nodes[v].tw_early);
            if arrive > nodes[v].tw_late {
                continue;
            }
            self.visited[v] = true;
            self.path.push(v);
            self.cvrp(
                v,
                arrive,
                load + nodes[v].demand,
                routes_next,
                partial + d,
                remaining - 1,
                rem_demand - nodes[v].demand,
            );
            self.path.pop();
            self.visited[v] = false;
            if self.timed_out {
                return;
            }
        }
        if cur != 0 && routes < self.fleet {
            let d = self.d[cur][0];
            let back = (t + nodes[cur].service + d).max(nodes[0].tw_early);
            if back <= nodes[0].tw_late {
                self.path.push(0);
                self.cvrp(0, nodes[0].tw_early, 0.0, routes, partial + d, remaining, rem_demand);
                self.path.pop();
            }
        }
    }
}

fn finish(inst: &ProblemInstance, best: Option<(f64, Vec<usize>)>, expanded: u64, timed_out: bool) -> OracleResult {
    let cfg = LagrangianConfig::default();
    let (best_objective, best_trajectory) = match best {
        Some((_, steps)) => {
            let traj = Trajectory::new(steps);
            let report = evaluate(inst, &traj, &cfg).expect("oracle produced a malformed trajectory");
            debug_assert_eq!(report.indicator, 0);
            (Some(report.objective), Some(traj))
        }
        None => (None, None),
    };
    let status = if timed_out {
        OracleStatus::Timeout
    } else if best_objective.is_some() {
        OracleStatus::Optimal
    } else {
        OracleStatus::InfeasibleInstance
    };
    OracleResult {
        status,
        best_objective,
        best_trajectory,
        nodes_expanded: expanded,
    }
}

/// Branch-and-bound search for a proven optimum, capped at `budget` node
/// expansions.
pub fn solve_exact(instance: &ProblemInstance, budget: u64) -> OracleResult {
    let n = instance.customers();
    let mut s = Search::new(instance, budget);
    if instance.variant.is_multi_route() {
        if n == 0 {
            s.best = Some((0.0, vec![0]));
        } else {
            s.path.push(0);
            let total = instance.total_demand();
            s.cvrp(0, instance.nodes[0].tw_early, 0.0, 0, 0.0, n, total);
        }
    } else {
        s.tsp(0, instance.nodes[0].tw_early, instance.total_demand(), 0.0, n);
    }
    finish(instance, s.best, s.expanded, s.timed_out)
}

/// Lexicographic successor; false once the last permutation is reached.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Evaluates every permutation (and, for multi-route variants, every way of
/// cutting it into routes). Independent cross-check for [`solve_exact`].
pub fn solve_enumerate(instance: &ProblemInstance) -> Result<OracleResult, OracleError> {
    let n = instance.customers();
    if n > ENUMERATE_MAX_N {
        return Err(OracleError::TooLarge(n));
    }
    let cfg = LagrangianConfig::default();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut count = 0u64;
    let mut consider = |steps: Vec<usize>| {
        count += 1;
        let r = evaluate(instance, &Trajectory::new(steps.clone()), &cfg).expect("enumerated trajectory is well formed");
        if r.indicator == 0 && best.as_ref().map_or(true, |(b, _)| r.objective < *b) {
            best = Some((r.objective, steps));
        }
    };
    let mut perm: Vec<usize> = (1..=n).collect();
    loop {
        if instance.variant.is_multi_route() {
            let cuts = if n == 0 { 1 } else { 1u64 << (n - 1) };
            for mask in 0..cuts {
                let mut steps = vec![0];
                for (i, &c) in perm.iter().enumerate() {
                    steps.push(c);
                    if i + 1 < n && mask >> i & 1 == 1 {
                        steps.push(0);
                    }
                }
                if n > 0 {
                    steps.push(0);
                }
                consider(steps);
            }
        } else {
            consider(perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(finish(instance, best, count, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Node;

    #[test]
    fn unit_square_perimeter() {
        let inst = ProblemInstance::new(
            Variant::Tsptw,
            vec![Node::at(0.0, 0.0), Node::at(1.0, 1.0), Node::at(1.0, 0.0), Node::at(0.0, 1.0)],
            None,
            None,
        )
        .unwrap();
        let exact = solve_exact(&inst, 1_000_000);
        assert_eq!(exact.status, OracleStatus::Optimal);
        assert!((exact.best_objective.unwrap() - 4.0).abs() < 1e-12);
        let brute = solve_enumerate(&inst).unwrap();
        assert_eq!(brute.best_objective, exact.best_objective);
    }

    #[test]
    fn unreachable_window_is_infeasible() {
        let inst = ProblemInstance::new(
            Variant::Tsptw,
            vec![Node::at(0.0, 0.0), Node::at(0.6, 0.8).with_window(0.0, 0.5)],
            None,
            None,
        )
        .unwrap();
        assert_eq!(solve_exact(&inst, 1000).status, OracleStatus::InfeasibleInstance);
        assert_eq!(solve_enumerate(&inst).unwrap().status, OracleStatus::InfeasibleInstance);
    }

    #[test]
    fn single_customer_is_trivially_optimal() {
        let inst = ProblemInstance::new(Variant::Tsptw, vec![Node::at(0.0, 0.0), Node::at(0.3, 0.4)], None, None).unwrap();
        let r = solve_enumerate(&inst).unwrap();
        assert_eq!(r.status, OracleStatus::Optimal);
        assert_eq!(r.best_trajectory.unwrap().steps, vec![1]);
        assert!((r.best_objective.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn budget_exhaustion_times_out() {
        let mut nodes = vec![Node::at(0.5, 0.5)];
        for i in 0..9 {
            let a = i as f64;
            nodes.push(Node::at(0.5 + 0.4 * a.cos(), 0.5 + 0.4 * a.sin()));
        }
        let inst = ProblemInstance::new(Variant::Tsptw, nodes, None, None).unwrap();
        let r = solve_exact(&inst, 5);
        assert_eq!(r.status, OracleStatus::Timeout);
    }

    #[test]
    fn enumerate_rejects_large_instances() {
        let nodes = (0..=10).map(|i| Node::at(i as f64 / 10.0, 0.0)).collect();
        let inst = ProblemInstance::new(Variant::Tsptw, nodes, None, None).unwrap();
        assert_eq!(solve_enumerate(&inst), Err(OracleError::TooLarge(10)));
    }

    #[test]
    fn gap_values() {
        assert_eq!(gap(2.0, 2.0).unwrap(), 0.0);
        assert!((gap(1.1 * 3.0, 3.0).unwrap() - 10.0).abs() < 1e-12);
        assert!(gap(1.0, 0.0).is_err());
        assert!(gap(1.0, -1.0).is_err());
    }

    #[test]
    fn permutations_are_complete() {
        let mut p = vec![1, 2, 3, 4];
        let mut count = 1;
        while next_permutation(&mut p) {
            count += 1;
        }
        assert_eq!(count, 24);
    }

    #[test]
    fn cvrp_split_matches_enumeration() {
        let mut nodes = vec![Node::at(0.5, 0.5).with_window(0.0, 10.0)];
        for (i, q) in [4.0, 4.0, 2.0, 3.0].iter().enumerate() {
            let a = i as f64 * 1.3;
            nodes.push(Node::at(0.5 + 0.3 * a.cos(), 0.5 + 0.3 * a.sin()).with_window(0.0, 10.0).with_demand(*q));
        }
        let inst = ProblemInstance::new(Variant::Cvrptwlv, nodes, Some(7.0), Some(2)).unwrap();
        let exact = solve_exact(&inst, 1_000_000);
        let brute = solve_enumerate(&inst).unwrap();
        assert_eq!(exact.status, OracleStatus::Optimal);
        assert_eq!(exact.best_objective, brute.best_objective);
        assert_eq!(exact.best_trajectory.unwrap().route_count(), 2);
    }
}
