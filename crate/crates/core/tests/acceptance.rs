//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails. Positional arguments select criteria by
//! number (`cargo test --test acceptance -- 1 4`).

mod common;

use common::*;
use std::time::{Duration, Instant};
use ucpo_core::generators::{augment8, fleet_limit, generate, generate_dataset, transform, Difficulty, GenConfig};
use ucpo_core::harness::{aggregate, evaluate, grad_check, instance_record, standard_cases, EvalConfig};
use ucpo_core::losses::{composite_with_grad, BetaKind, LossConfig, Pairing};
use ucpo_core::oracle::{solve_enumerate, solve_exact, OracleStatus};
use ucpo_core::policy::{PolicyHyper, PolicyParams, Preset};
use ucpo_core::problems::{evaluate as evaluate_trajectory, LagrangianConfig, Node, ProblemInstance, Trajectory, Variant};
use ucpo_core::ranking::{compare, rank_batch, Preference, RelationKind};
use ucpo_core::rng::StreamRng;
use ucpo_core::Exec;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s as f64, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

// 1. Gradient fidelity.
fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let hyper = PolicyHyper::preset(Preset::Tiny);
    let params = PolicyParams::init(hyper, 11).map_err(|e| e.to_string())?;
    ensure(params.len() <= 2000, || format!("{} parameters", params.len()))?;
    let inst = generate(&GenConfig::new(Variant::Tsptw, 8, Difficulty::Medium, 5), 0).map_err(|e| e.to_string())?;
    let cases = standard_cases();
    let lag = LagrangianConfig::default();
    // evaluator reports, then fixed mixed and all-infeasible pools so every
    // term is active somewhere
    let pools = [None, Some(mixed_pool()), Some(infeasible_pool())];
    let mut worst = (0.0f64, String::new());
    let mut active = vec![false; cases.len()];
    for pool in &pools {
        let reports = grad_check(&inst, &params, 8, 3, pool.as_deref(), &lag, &cases, 1e-4, 1, Exec::default())
            .map_err(|e| e.to_string())?;
        for (k, r) in reports.iter().enumerate() {
            active[k] |= r.max_abs_grad > 0.0;
            if !(r.max_rel_err <= worst.0) {
                worst = (r.max_rel_err, r.case.clone());
            }
        }
    }
    if let Some(k) = active.iter().position(|a| !a) {
        return Err(format!("{} never produced a gradient", cases[k].name));
    }
    ensure(worst.0 < 1e-3, || format!("max relative error {:.3e} ({})", worst.0, worst.1))?;
    within(start.elapsed(), 60)?;
    Ok(format!(
        "{} losses x 3 pools, {} params, max rel err {:.2e}, {:.1}s",
        cases.len(),
        params.len(),
        worst.0,
        start.elapsed().as_secs_f64()
    ))
}

// 2. Partial-order axioms.
fn partial_order_axioms() -> Outcome {
    let start = Instant::now();
    let relations = [
        RelationKind::Default,
        RelationKind::ConstraintOnly,
        RelationKind::PrimalOnly,
        RelationKind::DualOnly,
    ];
    let mut checks = 0u64;
    for b in 0..1000u64 {
        let mut rng = StreamRng::new(2, 90, b);
        let size = 2 + (rng.uniform() * 9.0) as usize;
        let batch = random_reports(&mut rng, size);
        for rel in relations {
            let c = |i: usize, j: usize| compare(&batch[i], &batch[j], rel);
            for i in 0..size {
                ensure(c(i, i) != Preference::Better, || format!("{rel}: batch {b} item {i} beats itself"))?;
                for j in 0..size {
                    if c(i, j) == Preference::Better {
                        ensure(c(j, i) == Preference::Worse, || format!("{rel}: batch {b} asymmetry {i},{j}"))?;
                        for k in 0..size {
                            if c(j, k) == Preference::Better {
                                ensure(c(i, k) == Preference::Better, || {
                                    format!("{rel}: batch {b} transitivity {i},{j},{k}")
                                })?;
                            }
                            checks += 1;
                        }
                    }
                    if rel != RelationKind::DualOnly && batch[i].is_feasible() && !batch[j].is_feasible() {
                        ensure(c(i, j) == Preference::Better, || format!("{rel}: batch {b} dominance {i},{j}"))?;
                    }
                }
            }
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("1000 batches x 4 relations, {checks} triples, {:.2}s", start.elapsed().as_secs_f64()))
}

// 3. Activation truth table.
fn activation_truth_table() -> Outcome {
    let configs = [
        LossConfig::default(),
        LossConfig {
            beta: BetaKind::DualOnly,
            ..Default::default()
        },
        LossConfig {
            beta: BetaKind::PrimalOnly,
            ..Default::default()
        },
        LossConfig {
            beta: BetaKind::StepIndicator { c: 2.0 },
            ..Default::default()
        },
        LossConfig {
            margin_floor: true,
            ..Default::default()
        },
        LossConfig {
            pairing: Pairing::Subsets,
            ..Default::default()
        },
        LossConfig {
            pairing: Pairing::BestWorst,
            ..Default::default()
        },
        LossConfig {
            pairing: Pairing::ArgMax,
            ..Default::default()
        },
        LossConfig {
            tie_alpha: Some(0.1),
            ..Default::default()
        },
    ];
    let mut seen = [0usize; 3];
    for b in 0..2000u64 {
        let mut rng = StreamRng::new(3, 91, b);
        let size = 1 + (rng.uniform() * 10.0) as usize;
        let batch = random_reports(&mut rng, size);
        let lps: Vec<f64> = (0..size).map(|_| -20.0 * rng.uniform()).collect();
        let ranked = rank_batch(&batch, RelationKind::Default).map_err(|e| e.to_string())?;
        let (t, f) = (ranked.feasible.len(), ranked.infeasible.len());
        for cfg in &configs {
            let (l, g) = composite_with_grad(&ranked, &lps, cfg).map_err(|e| format!("batch {b}: {e}"))?;
            let terms = [l.dual, l.margin, l.primal, l.total];
            ensure(terms.iter().all(|v| v.is_finite() && *v >= 0.0) && g.iter().all(|v| v.is_finite()), || {
                format!("batch {b} {cfg:?}: {l:?}")
            })?;
            if t == 0 {
                ensure(l.margin == 0.0 && l.primal == 0.0, || format!("batch {b}: no feasible but {l:?}"))?;
            }
            if f == 0 {
                ensure(l.dual == 0.0 && l.margin == 0.0, || format!("batch {b}: no infeasible but {l:?}"))?;
            }
            if t <= 1 {
                ensure(l.primal == 0.0, || format!("batch {b}: {t} feasible but {l:?}"))?;
            }
            for (k, v) in [l.dual, l.margin, l.primal].into_iter().enumerate() {
                seen[k] += usize::from(v > 0.0);
            }
        }
    }
    ensure(seen.iter().all(|&s| s > 0), || format!("some term never active: {seen:?}"))?;
    Ok(format!("2000 batches x {} configs, active counts {seen:?}", configs.len()))
}

// 4. Augmentation isometry.
fn augmentation_isometry() -> Outcome {
    let (x, y) = (0.2, 0.7);
    let rows = [
        (1.0 - x, y),
        (x, 1.0 - y),
        (1.0 - x, 1.0 - y),
        (y, x),
        (1.0 - y, x),
        (y, 1.0 - x),
        (1.0 - y, 1.0 - x),
    ];
    ensure(transform(1, x, y) == (0.8, 0.7), || format!("row 1 gives {:?}", transform(1, x, y)))?;
    ensure(transform(0, x, y) == (x, y), || "identity moved the point".into())?;
    for (k, want) in rows.iter().enumerate() {
        let got = transform(k + 1, x, y);
        ensure(got.0.to_bits() == want.0.to_bits() && got.1.to_bits() == want.1.to_bits(), || {
            format!("row {} gives {got:?}, table {want:?}", k + 1)
        })?;
    }
    let lag = LagrangianConfig::uniform(1.3);
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        for i in 0..100u64 {
            let mut rng = StreamRng::new(4, 92, i);
            let difficulty = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard][(i % 3) as usize];
            let inst = generate(&GenConfig::new(variant, 3 + (i % 8) as usize, difficulty, 40), i)
                .map_err(|e| e.to_string())?;
            let traj = random_trajectory(&inst, &mut rng);
            let base = evaluate_trajectory(&inst, &traj, &lag).map_err(|e| e.to_string())?;
            for (k, view) in augment8(&inst).iter().enumerate() {
                let r = evaluate_trajectory(view, &traj, &lag).map_err(|e| e.to_string())?;
                ensure(r.indicator == base.indicator, || format!("{variant:?} #{i} view {k}: indicator changed"))?;
                let diffs = [
                    r.objective - base.objective,
                    r.lagrangian - base.lagrangian,
                    r.violations.time_window - base.violations.time_window,
                    r.violations.draft - base.violations.draft,
                    r.violations.capacity - base.violations.capacity,
                    r.violations.fleet - base.violations.fleet,
                ];
                let d = diffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                worst = worst.max(d);
                ensure(d <= 1e-9, || format!("{variant:?} #{i} view {k}: report moved by {d:e}"))?;
            }
        }
    }
    Ok(format!("table rows exact, 400 pairs x 8 views, max deviation {worst:.1e}"))
}

// 5. Generator contracts.
fn generator_contracts() -> Outcome {
    let hard = GenConfig::new(Variant::Tsptw, 20, Difficulty::Hard, 7);
    let lag = LagrangianConfig::default();
    let mut feasible = 0;
    for i in 0..500 {
        let inst = generate(&hard, i).map_err(|e| e.to_string())?;
        let w = inst.witness.clone().ok_or("hard instance without witness")?;
        let r = evaluate_trajectory(&inst, &Trajectory::new(w), &lag).map_err(|e| e.to_string())?;
        feasible += usize::from(r.is_feasible());
    }
    ensure(feasible == 500, || format!("{feasible}/500 witnesses feasible"))?;

    let mut drafts = 0;
    for difficulty in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
        let cfg = GenConfig::new(Variant::Tspdl, 15, difficulty, 8);
        for i in 0..200 {
            let inst = generate(&cfg, i).map_err(|e| e.to_string())?;
            let cap = inst.total_demand();
            for (j, node) in inst.nodes.iter().enumerate().skip(1) {
                let d = node.draft.ok_or_else(|| format!("port {j} without draft"))?;
                ensure(node.demand <= d && d <= cap, || format!("port {j}: {} <= {d} <= {cap} fails", node.demand))?;
                drafts += 1;
            }
        }
    }

    for n in [5, 10, 20] {
        let cfg = GenConfig::new(Variant::Cvrptwlv, n, Difficulty::Medium, 9);
        for i in 0..100 {
            let inst = generate(&cfg, i).map_err(|e| e.to_string())?;
            let q = inst.capacity.ok_or("no capacity")?;
            let want = (inst.total_demand() / q).ceil() as u32;
            ensure(inst.fleet_limit == Some(want) && fleet_limit(inst.total_demand(), q) == want, || {
                format!("n={n} #{i}: K {:?}, ceil {want}", inst.fleet_limit)
            })?;
        }
    }

    for variant in Variant::ALL {
        for difficulty in [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard] {
            let cfg = GenConfig::new(variant, 12, difficulty, 10);
            let a = generate_dataset(&cfg, 0, 20, Exec::Sequential).map_err(|e| e.to_string())?;
            let b = generate_dataset(&cfg, 0, 20, Exec::default()).map_err(|e| e.to_string())?;
            ensure(bits(&a) == bits(&b), || format!("{variant:?} {difficulty:?}: runs differ"))?;
        }
    }
    Ok(format!("500/500 witnesses, {drafts} draft limits, K exact on 300, 12 configs bit-identical"))
}

// 6. Oracle equivalence.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let lag = LagrangianConfig::default();
    let mut summary = Vec::new();
    for variant in Variant::ALL {
        let max_n = if variant.is_multi_route() { 7 } else { 9 };
        let mut statuses = [0usize; 2];
        for i in 0..50u64 {
            let n = 4 + (i as usize % (max_n - 3));
            let difficulty = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard][(i % 3) as usize];
            let inst = generate(&GenConfig::new(variant, n, difficulty, 60), i).map_err(|e| e.to_string())?;
            let exact = solve_exact(&inst, u64::MAX);
            let brute = solve_enumerate(&inst).map_err(|e| e.to_string())?;
            ensure(exact.status == brute.status, || {
                format!("{variant:?} #{i}: status {:?} vs {:?}", exact.status, brute.status)
            })?;
            let same = match (exact.best_objective, brute.best_objective) {
                (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                (None, None) => true,
                _ => false,
            };
            ensure(same, || {
                format!("{variant:?} #{i}: {:?} vs {:?}", exact.best_objective, brute.best_objective)
            })?;
            if exact.status == OracleStatus::Optimal {
                statuses[0] += 1;
                let t = exact.best_trajectory.clone().ok_or("optimal without trajectory")?;
                let r = evaluate_trajectory(&inst, &t, &lag).map_err(|e| e.to_string())?;
                ensure(r.is_feasible() && Some(r.objective) == exact.best_objective, || {
                    format!("{variant:?} #{i}: optimal trajectory re-evaluates to {r:?}")
                })?;
            } else {
                statuses[1] += 1;
            }
        }
        summary.push(format!("{variant:?} {}/{}", statuses[0], statuses[1]));
    }
    within(start.elapsed(), 300)?;
    Ok(format!(
        "optimal/infeasible: {}, {:.1}s",
        summary.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

// 10. Protocol conformance.
fn protocol_conformance() -> Outcome {
    // pools: best feasible is 4 even though an infeasible sample scores 2;
    // all-infeasible; a single feasible sample at 6 against optimum 5
    let pools = [
        vec![feasible(5.0), infeasible(2.0, 1.0), feasible(4.0)],
        vec![infeasible(3.0, 2.0), infeasible(1.0, 0.5)],
        vec![infeasible(4.0, 3.0), feasible(6.0)],
    ];
    let optima = [Some(4.0), Some(3.0), Some(5.0)];
    let records: Vec<_> = pools
        .iter()
        .zip(optima)
        .enumerate()
        .map(|(i, (p, o))| instance_record(i, p, o))
        .collect();
    let m = aggregate(&records);
    ensure(records.iter().map(|r| r.feasible).eq([true, false, true]), || format!("{records:?}"))?;
    ensure(records.iter().map(|r| r.n_feasible_samples).eq([2, 0, 1]), || format!("{records:?}"))?;
    ensure(m.infeasible_rate == 1.0 / 3.0, || format!("infeasible rate {}", m.infeasible_rate))?;
    ensure(m.mean_best_feasible_objective == Some(5.0), || format!("{m:?}"))?;
    ensure(m.mean_gap_pct == Some(10.0), || format!("{m:?}"))?;

    // the same conventions through the sampling pipeline: every tour of the
    // first instance is feasible, no tour of the second is, the third has a
    // single customer
    let open = ProblemInstance::new(
        Variant::Tsptw,
        vec![
            Node::at(0.0, 0.0).with_window(0.0, 100.0),
            Node::at(0.3, 0.0).with_window(0.0, 100.0),
            Node::at(0.3, 0.4).with_window(0.0, 100.0),
        ],
        None,
        None,
    )
    .map_err(|e| e.to_string())?;
    let closed = ProblemInstance::new(
        Variant::Tsptw,
        vec![
            Node::at(0.0, 0.0).with_window(0.0, 100.0),
            Node::at(0.5, 0.5).with_window(0.0, 0.1),
            Node::at(0.6, 0.5).with_window(0.0, 0.1),
        ],
        None,
        None,
    )
    .map_err(|e| e.to_string())?;
    let single = ProblemInstance::new(
        Variant::Tsptw,
        vec![Node::at(0.0, 0.0).with_window(0.0, 100.0), Node::at(0.0, 0.25).with_window(0.0, 100.0)],
        None,
        None,
    )
    .map_err(|e| e.to_string())?;
    let data = [open, closed, single];
    let optima: Vec<Option<f64>> = data.iter().map(|d| solve_exact(d, u64::MAX).best_objective).collect();
    let params = PolicyParams::init(PolicyHyper::preset(Preset::Tiny), 1).map_err(|e| e.to_string())?;
    for aug8 in [false, true] {
        let cfg = EvalConfig {
            aug8,
            n_samples: Some(4),
            ..Default::default()
        };
        let out = evaluate(&params, &data, Some(&optima), &cfg).map_err(|e| e.to_string())?;
        let per_view = if aug8 { 32 } else { 4 };
        ensure(out.records.iter().map(|r| r.n_feasible_samples).eq([per_view, 0, per_view]), || {
            format!("aug8={aug8}: {:?}", out.records)
        })?;
        ensure(out.metrics.infeasible_rate == 1.0 / 3.0, || format!("{:?}", out.metrics))?;
        let obj = out.metrics.mean_best_feasible_objective.ok_or("objective undefined")?;
        ensure((obj - (1.2 + 0.5) / 2.0).abs() < 1e-12, || format!("mean objective {obj}"))?;
        ensure(out.metrics.mean_gap_pct.is_some_and(|g| g.abs() < 1e-9), || format!("{:?}", out.metrics))?;
    }
    Ok("3-instance record fixtures and 3-instance sampling fixtures exact".into())
}

fn main() {
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "gradient fidelity", gradient_fidelity),
        (2, "partial-order axioms", partial_order_axioms),
        (3, "activation truth table", activation_truth_table),
        (4, "augmentation isometry", augmentation_isometry),
        (5, "generator contracts", generator_contracts),
        (6, "oracle equivalence", oracle_equivalence),
        (7, "training smoke", training::training_smoke),
        (8, "lambda insensitivity", training::lambda_insensitivity),
        (9, "dual loss in cold start", training::dual_necessity),
        (10, "protocol conformance", protocol_conformance),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (k, name, _) in &criteria {
            println!("criterion {k}: {name}: test");
        }
        return;
    }
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {k:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

mod training {
    use super::{ensure, Outcome};
    use std::collections::HashMap;
    use std::sync::{Mutex, OnceLock};
    use ucpo_core::generators::{generate_dataset, Difficulty, GenConfig};
    use ucpo_core::harness::{evaluate, oracle_optima, train, DataSource, EvalConfig, MetricsRecord, TrainConfig};
    use ucpo_core::losses::LossKind;
    use ucpo_core::policy::{PolicyHyper, Preset};
    use ucpo_core::problems::{LagrangianConfig, ProblemInstance, Variant};
    use ucpo_core::Exec;

    const SEEDS: [u64; 3] = [1, 2, 3];
    const WIDE: (f64, f64) = (1.0, 1.5);
    const TIGHT: (f64, f64) = (0.1, 0.2);

    #[derive(Clone, Copy, PartialEq, Eq, Hash)]
    struct Run {
        kind: LossKind,
        seed: u64,
        lambda_milli: u64,
        tight: bool,
        dual: bool,
    }

    impl Run {
        fn ucpo(seed: u64) -> Self {
            Run { kind: LossKind::Ucpo, seed, lambda_milli: 1000, tight: false, dual: true }
        }
    }

    fn data(tight: bool, seed: u64) -> GenConfig {
        let mut cfg = GenConfig::new(Variant::Tsptw, 10, Difficulty::Medium, seed);
        cfg.anchored = true;
        cfg.window_factor = Some(if tight { TIGHT } else { WIDE });
        cfg
    }

    type HeldOut = (Vec<ProblemInstance>, Vec<Option<f64>>);

    fn held_out(tight: bool) -> &'static HeldOut {
        static SETS: OnceLock<[HeldOut; 2]> = OnceLock::new();
        let sets = SETS.get_or_init(|| {
            [false, true].map(|t| {
                let set = generate_dataset(&data(t, 999), 0, 200, Exec::default()).expect("held-out set");
                let optima = oracle_optima(&set, 5_000_000, Exec::default());
                (set, optima)
            })
        });
        &sets[tight as usize]
    }

    fn run(r: Run) -> Result<MetricsRecord, String> {
        static CACHE: OnceLock<Mutex<HashMap<Run, MetricsRecord>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(m) = cache.lock().unwrap().get(&r) {
            return Ok(m.clone());
        }
        let lag = LagrangianConfig::uniform(r.lambda_milli as f64 / 1000.0);
        let mut cfg = TrainConfig {
            epochs: Some(200),
            steps_per_epoch: 10,
            batch_size: 32,
            samples: Some(10),
            seed: r.seed,
            lagrangian: lag.clone(),
            policy: PolicyHyper::preset(Preset::Tiny),
            ..Default::default()
        };
        cfg.optimizer.lr = 1e-3;
        cfg.loss.kind = r.kind;
        cfg.loss.terms.dual = r.dual;
        let source = DataSource::Generate(data(r.tight, 100 + r.seed));
        let out = train(&cfg, &source, None).map_err(|e| e.to_string())?;
        let (set, optima) = held_out(r.tight);
        let eval = EvalConfig { seed: 7, lagrangian: lag, ..Default::default() };
        let m = evaluate(&out.params, set, Some(optima), &eval).map_err(|e| e.to_string())?.metrics;
        cache.lock().unwrap().insert(r, m.clone());
        Ok(m)
    }

    fn show(m: &MetricsRecord) -> String {
        match m.mean_gap_pct {
            Some(g) => format!("{:.1}%/{g:.1}%", 100.0 * m.infeasible_rate),
            None => format!("{:.1}%/-", 100.0 * m.infeasible_rate),
        }
    }

    pub fn training_smoke() -> Outcome {
        let mut passed = 0;
        let mut lines = Vec::new();
        for seed in SEEDS {
            let u = run(Run::ucpo(seed))?;
            let b = run(Run { kind: LossKind::Reinforce, ..Run::ucpo(seed) })?;
            let ok = u.infeasible_rate <= 0.05
                && u.mean_gap_pct.is_some_and(|g| g <= 10.0)
                && b.infeasible_rate > u.infeasible_rate;
            passed += ok as usize;
            lines.push(format!("seed {seed}: ucpo {} reinforce {}", show(&u), show(&b)));
        }
        let detail = format!("{} (infeasible/gap); {passed}/3 seeds pass", lines.join(", "));
        ensure(passed >= 2, || detail.clone())?;
        Ok(detail)
    }

    pub fn lambda_insensitivity() -> Outcome {
        let mut rows = Vec::new();
        for l in [500, 1000, 2000] {
            rows.push((l, run(Run { lambda_milli: l, ..Run::ucpo(SEEDS[0]) })?));
        }
        let spread = |f: &dyn Fn(&MetricsRecord) -> f64| {
            let v: Vec<f64> = rows.iter().map(|(_, m)| f(m)).collect();
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        let inf = spread(&|m| 100.0 * m.infeasible_rate);
        let gap = spread(&|m| m.mean_gap_pct.unwrap_or(f64::NAN));
        let detail = format!(
            "{}; spread {inf:.2} / {gap:.2} points",
            rows.iter().map(|(l, m)| format!("lambda {}: {}", *l as f64 / 1000.0, show(m))).collect::<Vec<_>>().join(", ")
        );
        ensure(inf <= 5.0 && gap <= 2.0, || detail.clone())?;
        Ok(detail)
    }

    pub fn dual_necessity() -> Outcome {
        let mut passed = 0;
        let mut lines = Vec::new();
        for seed in SEEDS {
            let with = run(Run { tight: true, ..Run::ucpo(seed) })?;
            let without = run(Run { tight: true, dual: false, ..Run::ucpo(seed) })?;
            passed += (without.infeasible_rate - with.infeasible_rate >= 0.20) as usize;
            lines.push(format!("seed {seed}: dual {} no dual {}", show(&with), show(&without)));
        }
        let detail = format!("{}; {passed}/3 seeds pass", lines.join(", "));
        ensure(passed >= 2, || detail.clone())?;
        Ok(detail)
    }
}
