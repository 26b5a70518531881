use super::{EvalReport, LagrangianConfig, PerFamily, ProblemError, ProblemInstance, Trajectory, Variant};

/// Euclidean distance between two nodes of an instance.
#[inline]
pub fn dist(instance: &ProblemInstance, a: usize, b: usize) -> f64 {
    let (p, q) = (&instance.nodes[a], &instance.nodes[b]);
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    (dx * dx + dy * dy).sqrt()
}

/// `L = f + sum_j lambda_j g_j`; the equality part is empty for every variant.
pub fn lagrangian(objective: f64, violations: &PerFamily, cfg: &LagrangianConfig) -> Result<f64, ProblemError> {
    cfg.validate()?;
    let mut l = objective;
    for (family, g) in violations.iter() {
        l += cfg.lambda.get(family) * g;
    }
    Ok(l)
}

/// Dispatches to the evaluator matching the instance variant.
pub fn evaluate(
    instance: &ProblemInstance,
    traj: &Trajectory,
    cfg: &LagrangianConfig,
) -> Result<EvalReport, ProblemError> {
    match instance.variant {
        Variant::Tsptw => evaluate_tsptw(instance, traj, cfg),
        Variant::Tspdl => evaluate_tspdl(instance, traj, cfg),
        Variant::Cvrptw => evaluate_cvrptw(instance, traj, cfg),
        Variant::Cvrptwlv => evaluate_cvrptwlv(instance, traj, cfg),
    }
}

fn expect_variant(instance: &ProblemInstance, allowed: &[Variant], name: &str) -> Result<(), ProblemError> {
    if allowed.contains(&instance.variant) {
        Ok(())
    } else {
        Err(ProblemError::VariantMismatch {
            expected: name.to_string(),
            found: instance.variant,
        })
    }
}

fn finish(objective: f64, violations: PerFamily, cfg: &LagrangianConfig) -> Result<EvalReport, ProblemError> {
    let lagrangian = lagrangian(objective, &violations, cfg)?;
    Ok(EvalReport {
        objective,
        violations,
        indicator: u8::from(!violations.all_zero()),
        lagrangian,
    })
}

/// Drives one depot-to-depot route through the arrival-time recursion
/// `t_next = max(t + s + d, e_next)`, adding arc lengths to `objective` and
/// late-arrival overshoot (including the depot return) to `late`.
fn simulate_timed_route(instance: &ProblemInstance, route: &[usize], objective: &mut f64, late: &mut f64) {
    let nodes = &instance.nodes;
    let mut t = nodes[0].tw_early;
    let mut prev = 0;
    for &next in route.iter().chain(std::iter::once(&0)) {
        let d = dist(instance, prev, next);
        *objective += d;
        t = (t + nodes[prev].service + d).max(nodes[next].tw_early);
        let over = t - nodes[next].tw_late;
        if over > 0.0 {
            *late += over;
        }
        prev = next;
    }
}

pub fn evaluate_tsptw(
    instance: &ProblemInstance,
    traj: &Trajectory,
    cfg: &LagrangianConfig,
) -> Result<EvalReport, ProblemError> {
    expect_variant(instance, &[Variant::Tsptw], "TSPTW")?;
    traj.check(instance)?;
    let mut objective = 0.0;
    let mut violations = PerFamily::default();
    simulate_timed_route(instance, &traj.steps, &mut objective, &mut violations.time_window);
    finish(objective, violations, cfg)
}

/// Draft check happens on arrival, before the port's own cargo is discharged.
pub fn evaluate_tspdl(
    instance: &ProblemInstance,
    traj: &Trajectory,
    cfg: &LagrangianConfig,
) -> Result<EvalReport, ProblemError> {
    expect_variant(instance, &[Variant::Tspdl], "TSPDL")?;
    traj.check(instance)?;
    let nodes = &instance.nodes;
    let mut load = instance.total_demand();
    let mut objective = 0.0;
    let mut violations = PerFamily::default();
    let mut prev = 0;
    for &next in &traj.steps {
        objective += dist(instance, prev, next);
        let limit = nodes[next].draft.unwrap_or(f64::INFINITY);
        let over = load - limit;
        if over > 0.0 {
            violations.draft += over;
        }
        load -= nodes[next].demand;
        prev = next;
    }
    objective += dist(instance, prev, 0);
    finish(objective, violations, cfg)
}

/// Splits a depot-delimited sequence into its customer runs.
pub(crate) fn routes(steps: &[usize]) -> impl Iterator<Item = &[usize]> {
    steps.split(|&s| s == 0).filter(|r| !r.is_empty())
}

fn cvrp_core(instance: &ProblemInstance, traj: &Trajectory) -> (f64, PerFamily) {
    let q = instance.capacity.unwrap_or(f64::INFINITY);
    let mut objective = 0.0;
    let mut violations = PerFamily::default();
    for route in routes(&traj.steps) {
        let load: f64 = route.iter().map(|&i| instance.nodes[i].demand).sum();
        if load > q {
            violations.capacity += load - q;
        }
        simulate_timed_route(instance, route, &mut objective, &mut violations.time_window);
    }
    (objective, violations)
}

pub fn evaluate_cvrptw(
    instance: &ProblemInstance,
    traj: &Trajectory,
    cfg: &LagrangianConfig,
) -> Result<EvalReport, ProblemError> {
    expect_variant(instance, &[Variant::Cvrptw, Variant::Cvrptwlv], "CVRPTW")?;
    traj.check(instance)?;
    let (objective, violations) = cvrp_core(instance, traj);
    finish(objective, violations, cfg)
}

/// CVRPTW plus `max(0, routes_used - K)` in route units.
pub fn evaluate_cvrptwlv(
    instance: &ProblemInstance,
    traj: &Trajectory,
    cfg: &LagrangianConfig,
) -> Result<EvalReport, ProblemError> {
    expect_variant(instance, &[Variant::Cvrptwlv], "CVRPTWLV")?;
    traj.check(instance)?;
    let (objective, mut violations) = cvrp_core(instance, traj);
    let k = instance.fleet_limit.unwrap_or(u32::MAX) as f64;
    let used = traj.route_count() as f64;
    if used > k {
        violations.fleet = used - k;
    }
    finish(objective, violations, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ConstraintFamily, Node};

    /// Straight-line re-implementation used as an independent check on the
    /// hand arithmetic below.
    fn scalar_tsptw(points: &[(f64, f64, f64, f64)], tour: &[usize]) -> (f64, f64) {
        let d = |a: usize, b: usize| {
            let (ax, ay, _, _) = points[a];
            let (bx, by, _, _) = points[b];
            ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
        };
        let mut path = vec![0];
        path.extend_from_slice(tour);
        path.push(0);
        let (mut len, mut t, mut viol) = (0.0, 0.0, 0.0);
        for w in path.windows(2) {
            len += d(w[0], w[1]);
            t = f64::max(t + d(w[0], w[1]), points[w[1]].2);
            viol += f64::max(0.0, t - points[w[1]].3);
        }
        (len, viol)
    }

    fn two_customer(l2: f64) -> ProblemInstance {
        ProblemInstance::new(
            Variant::Tsptw,
            vec![
                Node::at(0.0, 0.0),
                Node::at(0.3, 0.0).with_window(0.0, 1.0),
                Node::at(0.3, 0.4).with_window(if l2 < 0.8 { 0.0 } else { 0.8 }, l2),
            ],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn tsptw_waiting_is_free() {
        let inst = two_customer(2.0);
        let r = evaluate_tsptw(&inst, &Trajectory::new(vec![1, 2]), &LagrangianConfig::default()).unwrap();
        assert!((r.objective - 1.2).abs() < 1e-12);
        assert_eq!(r.indicator, 0);
        assert_eq!(r.lagrangian, r.objective);
        let pts = [(0.0, 0.0, 0.0, f64::INFINITY), (0.3, 0.0, 0.0, 1.0), (0.3, 0.4, 0.8, 2.0)];
        let (len, viol) = scalar_tsptw(&pts, &[1, 2]);
        assert!((len - r.objective).abs() < 1e-15);
        assert_eq!(viol, 0.0);
    }

    #[test]
    fn tsptw_late_arrival_is_penalized() {
        let inst = two_customer(0.6);
        let r = evaluate_tsptw(&inst, &Trajectory::new(vec![1, 2]), &LagrangianConfig::default()).unwrap();
        assert!((r.violations.time_window - 0.1).abs() < 1e-12);
        assert_eq!(r.indicator, 1);
        assert!((r.lagrangian - 1.3).abs() < 1e-12);
        let pts = [(0.0, 0.0, 0.0, f64::INFINITY), (0.3, 0.0, 0.0, 1.0), (0.3, 0.4, 0.0, 0.6)];
        let (_, viol) = scalar_tsptw(&pts, &[1, 2]);
        assert!((viol - r.violations.time_window).abs() < 1e-15);
    }

    #[test]
    fn empty_window_rejected_at_construction() {
        let err = ProblemInstance::new(
            Variant::Tsptw,
            vec![Node::at(0.0, 0.0), Node::at(0.3, 0.4).with_window(0.8, 0.65)],
            None,
            None,
        );
        assert!(matches!(err, Err(ProblemError::InvalidInstance(_))));
    }

    #[test]
    fn single_customer_out_and_back() {
        let inst = ProblemInstance::new(Variant::Tsptw, vec![Node::at(0.1, 0.2), Node::at(0.7, 0.9)], None, None).unwrap();
        let r = evaluate_tsptw(&inst, &Trajectory::new(vec![1]), &LagrangianConfig::default()).unwrap();
        assert_eq!(r.objective, 2.0 * dist(&inst, 0, 1));
        assert_eq!(r.indicator, 0);
    }

    #[test]
    fn malformed_tours_are_errors() {
        let inst = two_customer(2.0);
        let cfg = LagrangianConfig::default();
        for steps in [vec![1], vec![1, 1], vec![1, 2, 0], vec![1, 3], vec![]] {
            assert!(matches!(
                evaluate_tsptw(&inst, &Trajectory::new(steps), &cfg),
                Err(ProblemError::MalformedTrajectory(_))
            ));
        }
    }

    fn draft_instance(limits: [f64; 3]) -> ProblemInstance {
        let mut nodes = vec![Node::at(0.5, 0.5)];
        for (i, d) in limits.iter().enumerate() {
            nodes.push(Node::at(0.1 * (i + 1) as f64, 0.2).with_demand(1.0).with_draft(*d));
        }
        ProblemInstance::new(Variant::Tspdl, nodes, None, None).unwrap()
    }

    #[test]
    fn tspdl_arrival_loads() {
        let cfg = LagrangianConfig::default();
        let free = draft_instance([3.0, 3.0, 3.0]);
        assert_eq!(evaluate_tspdl(&free, &Trajectory::new(vec![1, 2, 3]), &cfg).unwrap().indicator, 0);

        let tight = draft_instance([2.0, 3.0, 3.0]);
        let r = evaluate_tspdl(&tight, &Trajectory::new(vec![1, 2, 3]), &cfg).unwrap();
        assert_eq!(r.violations.draft, 1.0);
        assert_eq!(r.indicator, 1);
        assert_eq!(r.lagrangian, r.objective + 1.0);

        let reversed = evaluate_tspdl(&tight, &Trajectory::new(vec![3, 2, 1]), &cfg).unwrap();
        assert_eq!(reversed.indicator, 0);
    }

    fn cvrp(variant: Variant, k: Option<u32>, n: usize, demand: f64) -> ProblemInstance {
        let mut nodes = vec![Node::at(0.5, 0.5).with_window(0.0, 100.0)];
        for i in 0..n {
            let a = i as f64 * 0.7;
            nodes.push(
                Node::at(0.5 + 0.3 * a.cos(), 0.5 + 0.3 * a.sin())
                    .with_window(0.0, 100.0)
                    .with_demand(demand),
            );
        }
        ProblemInstance::new(variant, nodes, Some(5.0), k).unwrap()
    }

    #[test]
    fn cvrptw_routes_and_capacity() {
        let cfg = LagrangianConfig::default();
        let inst = cvrp(Variant::Cvrptw, None, 2, 4.0);
        let r = evaluate_cvrptw(&inst, &Trajectory::new(vec![0, 1, 0, 2, 0]), &cfg).unwrap();
        assert_eq!(r.indicator, 0);
        let expect = 2.0 * dist(&inst, 0, 1) + 2.0 * dist(&inst, 0, 2);
        assert!((r.objective - expect).abs() < 1e-12);

        let one = evaluate_cvrptw(&inst, &Trajectory::new(vec![0, 1, 2, 0]), &cfg).unwrap();
        assert_eq!(one.violations.capacity, 3.0);
        assert_eq!(one.indicator, 1);

        for steps in [vec![0, 0, 1, 0, 2, 0], vec![1, 0, 2, 0], vec![0, 1, 2]] {
            assert!(evaluate_cvrptw(&inst, &Trajectory::new(steps), &cfg).is_err());
        }
    }

    #[test]
    fn cvrptw_time_resets_per_route() {
        let mut inst = cvrp(Variant::Cvrptw, None, 2, 1.0);
        let reach = dist(&inst, 0, 2);
        inst.nodes[2].tw_late = reach;
        let cfg = LagrangianConfig::default();
        let split = evaluate_cvrptw(&inst, &Trajectory::new(vec![0, 1, 0, 2, 0]), &cfg).unwrap();
        assert_eq!(split.violations.time_window, 0.0);
        let chained = evaluate_cvrptw(&inst, &Trajectory::new(vec![0, 1, 2, 0]), &cfg).unwrap();
        assert!(chained.violations.time_window > 0.0);
    }

    #[test]
    fn fleet_limit_counts_routes() {
        let cfg = LagrangianConfig::default();
        let inst = cvrp(Variant::Cvrptwlv, Some(3), 4, 1.0);
        let three = evaluate_cvrptwlv(&inst, &Trajectory::new(vec![0, 1, 2, 0, 3, 0, 4, 0]), &cfg).unwrap();
        assert_eq!(three.violations.fleet, 0.0);
        let four = evaluate_cvrptwlv(&inst, &Trajectory::new(vec![0, 1, 0, 2, 0, 3, 0, 4, 0]), &cfg).unwrap();
        assert_eq!(four.violations.fleet, 1.0);
        assert_eq!(four.lagrangian, four.objective + 1.0);

        let two = cvrp(Variant::Cvrptwlv, Some(2), 2, 1.0);
        let single = evaluate_cvrptwlv(&two, &Trajectory::new(vec![0, 1, 2, 0]), &cfg).unwrap();
        assert_eq!(single.violations.get(ConstraintFamily::Fleet), 0.0);
    }

    #[test]
    fn lagrangian_arithmetic() {
        let mut g = PerFamily::default();
        assert_eq!(lagrangian(1.2, &g, &LagrangianConfig::default()).unwrap(), 1.2);
        g.time_window = 0.1;
        assert!((lagrangian(1.2, &g, &LagrangianConfig::uniform(1.0)).unwrap() - 1.3).abs() < 1e-12);
        assert!((lagrangian(1.2, &g, &LagrangianConfig::uniform(2.0)).unwrap() - 1.4).abs() < 1e-12);
        let mut neg = LagrangianConfig::default();
        neg.lambda.draft = -0.5;
        assert_eq!(
            lagrangian(1.2, &g, &neg),
            Err(ProblemError::NegativeMultiplier(ConstraintFamily::Draft))
        );
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let inst = draft_instance([3.0, 3.0, 3.0]);
        assert!(matches!(
            evaluate_tsptw(&inst, &Trajectory::new(vec![1, 2, 3]), &LagrangianConfig::default()),
            Err(ProblemError::VariantMismatch { .. })
        ));
    }
}
