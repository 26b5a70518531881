//! Sampling-based evaluation: every instance is decoded from each augmented
//! view, every sample is scored on the original instance, and the best
//! feasible objective is reported.

use super::{HarnessError, MetricsRecord};
use crate::exec::Exec;
use crate::generators::augment8;
use crate::oracle::{gap, solve_exact, OracleStatus};
use crate::policy::{decode_sample, PolicyParams};
use crate::problems::{evaluate as evaluate_trajectory, EvalReport, LagrangianConfig, ProblemInstance};
use crate::rng::{domain, StreamRng};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Samples per augmentation view; `None` uses the customer count.
    pub n_samples: Option<usize>,
    pub aug8: bool,
    pub seed: u64,
    pub lagrangian: LagrangianConfig,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: None,
            aug8: true,
            seed: 0,
            lagrangian: LagrangianConfig::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: usize,
    pub feasible: bool,
    pub best_obj: Option<f64>,
    pub gap: Option<f64>,
    pub n_feasible_samples: usize,
    /// A feasible sample exists but no optimum was supplied.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing_optimum: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutcome {
    pub metrics: MetricsRecord,
    pub records: Vec<InstanceRecord>,
}

/// Best-of-pool record for one instance: feasible iff any sample is, the
/// best objective is the smallest among feasible samples.
pub fn instance_record(instance_id: usize, pool: &[EvalReport], optimum: Option<f64>) -> InstanceRecord {
    let feasible: Vec<f64> = pool.iter().filter(|r| r.is_feasible()).map(|r| r.objective).collect();
    let best_obj = feasible.iter().copied().reduce(f64::min);
    let gap = match (best_obj, optimum) {
        (Some(b), Some(o)) => gap(b, o).ok(),
        _ => None,
    };
    InstanceRecord {
        instance_id,
        feasible: best_obj.is_some(),
        best_obj,
        gap,
        n_feasible_samples: feasible.len(),
        missing_optimum: best_obj.is_some() && optimum.is_none(),
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Dataset-level metrics from per-instance records.
pub fn aggregate(records: &[InstanceRecord]) -> MetricsRecord {
    let n = records.len();
    let infeasible = records.iter().filter(|r| !r.feasible).count();
    MetricsRecord {
        infeasible_rate: if n == 0 { 0.0 } else { infeasible as f64 / n as f64 },
        mean_best_feasible_objective: mean(records.iter().filter_map(|r| r.best_obj)),
        mean_gap_pct: mean(records.iter().filter_map(|r| r.gap)),
        instances: n,
        missing_optimum: records.iter().filter(|r| r.missing_optimum).count(),
        ..Default::default()
    }
}

/// Candidate pool for one instance: `n_samples` per view, scored on the
/// original instance.
fn sample_pool(
    params: &PolicyParams,
    inst: &ProblemInstance,
    id: usize,
    cfg: &EvalConfig,
) -> Result<Vec<EvalReport>, HarnessError> {
    let n_samples = cfg.n_samples.unwrap_or(inst.customers()).max(1);
    let views = if cfg.aug8 { augment8(inst) } else { vec![inst.clone()] };
    let mut pool = Vec::with_capacity(views.len() * n_samples);
    for (k, view) in views.iter().enumerate() {
        let mut rng = StreamRng::new(cfg.seed, domain::EVAL_SAMPLING, (id * 8 + k) as u64);
        let rollout = decode_sample(view, params, n_samples, &mut rng)?;
        for t in &rollout.samples.trajectories {
            pool.push(evaluate_trajectory(inst, t, &cfg.lagrangian)?);
        }
    }
    Ok(pool)
}

pub fn evaluate(
    params: &PolicyParams,
    dataset: &[ProblemInstance],
    optima: Option<&[Option<f64>]>,
    cfg: &EvalConfig,
) -> Result<EvalOutcome, HarnessError> {
    if let Some(o) = optima {
        if o.len() != dataset.len() {
            return Err(HarnessError::Config(format!("{} optima for {} instances", o.len(), dataset.len())));
        }
    }
    let start = Instant::now();
    let records = cfg
        .exec
        .map(dataset, |i, inst| {
            let pool = sample_pool(params, inst, i, cfg)?;
            Ok(instance_record(i, &pool, optima.and_then(|o| o[i])))
        })
        .into_iter()
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut metrics = aggregate(&records);
    metrics.wallclock_s = start.elapsed().as_secs_f64();
    Ok(EvalOutcome { metrics, records })
}

/// Exact optima (`None` when infeasible or over budget).
pub fn oracle_optima(dataset: &[ProblemInstance], budget: u64, exec: Exec) -> Vec<Option<f64>> {
    exec.map(dataset, |_, inst| {
        let r = solve_exact(inst, budget);
        (r.status == OracleStatus::Optimal).then_some(r.best_objective).flatten()
    })
}

pub fn write_records_jsonl<W: Write>(mut w: W, records: &[InstanceRecord]) -> Result<(), HarnessError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// `Method, Inst.%, Obj., Gap%` rows; undefined values print as `-`.
pub fn summary_csv(rows: &[(String, MetricsRecord)]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["Method", "Inst.%", "Obj.", "Gap%"])?;
    for (label, m) in rows {
        w.write_record([
            label.clone(),
            format!("{:.2}", 100.0 * m.infeasible_rate),
            fmt_opt(m.mean_best_feasible_objective, 3),
            fmt_opt(m.mean_gap_pct, 2),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
