//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use ucpo_core::problems::{instance_to_json, EvalReport, PerFamily, ProblemInstance, Trajectory};
use ucpo_core::rng::StreamRng;

pub fn feasible(objective: f64) -> EvalReport {
    EvalReport {
        objective,
        violations: PerFamily::default(),
        indicator: 0,
        lagrangian: objective,
    }
}

/// Infeasible report with a time-window violation of `penalty` under unit
/// multipliers.
pub fn infeasible(objective: f64, penalty: f64) -> EvalReport {
    EvalReport {
        objective,
        violations: PerFamily {
            time_window: penalty,
            ..PerFamily::default()
        },
        indicator: 1,
        lagrangian: objective + penalty,
    }
}

/// Mixed feasibility, continuous values, so exact score ties have
/// probability zero.
pub fn random_reports(rng: &mut StreamRng, size: usize) -> Vec<EvalReport> {
    (0..size)
        .map(|_| {
            let f = rng.uniform_in(1.0, 10.0);
            if rng.uniform() < 0.5 {
                feasible(f)
            } else {
                infeasible(f, rng.uniform_in(0.01, 5.0))
            }
        })
        .collect()
}

/// Three feasible and five infeasible solutions.
pub fn mixed_pool() -> Vec<EvalReport> {
    vec![
        infeasible(3.1, 0.7),
        feasible(4.2),
        infeasible(2.9, 2.4),
        feasible(3.7),
        infeasible(3.3, 0.2),
        feasible(5.0),
        infeasible(4.4, 1.1),
        infeasible(3.9, 0.05),
    ]
}

/// Eight infeasible solutions, two of them within 0.1 of the best
/// Lagrangian.
pub fn infeasible_pool() -> Vec<EvalReport> {
    vec![
        infeasible(3.0, 1.0),
        infeasible(3.5, 0.55),
        infeasible(2.5, 3.0),
        infeasible(3.2, 0.9),
        infeasible(4.0, 2.0),
        infeasible(3.3, 0.75),
        infeasible(2.8, 5.5),
        infeasible(3.6, 1.6),
    ]
}

/// A uniformly shuffled tour; multi-route variants split it into routes at
/// random cut points.
pub fn random_trajectory(inst: &ProblemInstance, rng: &mut StreamRng) -> Trajectory {
    let n = inst.customers();
    let mut perm: Vec<usize> = (1..=n).collect();
    rng.shuffle(&mut perm);
    if !inst.variant.is_multi_route() {
        return Trajectory::new(perm);
    }
    let mut steps = vec![0];
    for (i, c) in perm.into_iter().enumerate() {
        if i > 0 && rng.uniform() < 0.3 {
            steps.push(0);
        }
        steps.push(c);
    }
    steps.push(0);
    Trajectory::new(steps)
}

/// Canonical serialization of a dataset, for bitwise comparisons.
pub fn bits(data: &[ProblemInstance]) -> Vec<String> {
    data.iter().map(instance_to_json).collect()
}
