//! The training loop: sample, evaluate, rank, stride-filter, compute the
//! loss, accumulate gradients over the batch, one optimizer step per batch.

use super::checkpoint::warm_start;
use super::eval::{evaluate, EvalConfig};
use super::optim::{Adam, AdamConfig};
use super::{HarnessError, MetricsRecord};
use crate::exec::Exec;
use crate::generators::{generate, GenConfig};
use crate::losses::{composite_with_grad, reinforce_loss, LossBreakdown, LossConfig, LossKind};
use crate::policy::{decode_sample, PolicyHyper, PolicyParams};
use crate::problems::{evaluate as evaluate_trajectory, LagrangianConfig, ProblemInstance};
use crate::ranking::{rank_batch, stride_filter, RelationKind};
use crate::rng::{domain, StreamRng};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

pub const COLD_START_EPOCHS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Fine-tuning epochs; `None` means `ceil(0.01 * e_base)` when warm
    /// starting and [`COLD_START_EPOCHS`] otherwise.
    pub epochs: Option<usize>,
    /// Optimizer steps (batches) per epoch.
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Samples per instance; `None` uses the customer count.
    pub samples: Option<usize>,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub relation: RelationKind,
    pub lagrangian: LagrangianConfig,
    pub policy: PolicyHyper,
    pub checkpoint_in: Option<PathBuf>,
    /// Evaluate on the held-out set every this many epochs (0 disables).
    pub eval_every: usize,
    pub eval: EvalConfig,
    /// On-the-fly training distribution.
    pub data: GenConfig,
    pub exec: Exec,
    /// Global gradient-norm clip.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: None,
            steps_per_epoch: 1,
            batch_size: 32,
            samples: None,
            optimizer: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            relation: RelationKind::Default,
            lagrangian: LagrangianConfig::default(),
            policy: PolicyHyper::default(),
            checkpoint_in: None,
            eval_every: 0,
            eval: EvalConfig::default(),
            data: GenConfig::default(),
            exec: Exec::default(),
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be at least 1".into()));
        }
        if self.steps_per_epoch == 0 {
            return Err(HarnessError::Config("steps_per_epoch must be at least 1".into()));
        }
        if self.loss.kind == LossKind::Ucpo && matches!(self.samples, Some(n) if n < 2) {
            return Err(HarnessError::Config("preference losses need at least 2 samples".into()));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(HarnessError::Config("max_grad_norm must be positive".into()));
            }
        }
        self.loss.validate()?;
        self.relation.validate()?;
        self.lagrangian.validate()?;
        self.policy.validate()?;
        Ok(())
    }
}

/// Where training instances come from.
#[derive(Clone, Debug)]
pub enum DataSource {
    /// Fresh instances `step * B + j` of the configured generator.
    Generate(GenConfig),
    /// A fixed list, cycled in batch order.
    Fixed(Vec<ProblemInstance>),
}

impl DataSource {
    fn instance(&self, index: usize) -> Result<ProblemInstance, HarnessError> {
        match self {
            DataSource::Generate(cfg) => Ok(generate(cfg, index as u64)?),
            DataSource::Fixed(items) => {
                if items.is_empty() {
                    return Err(HarnessError::Config("empty training set".into()));
                }
                Ok(items[index % items.len()].clone())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    /// One record per epoch, from the training batches.
    pub history: Vec<MetricsRecord>,
    /// Held-out evaluations at the configured cadence.
    pub evals: Vec<MetricsRecord>,
    /// Total steps seen by the parameters, including the checkpoint's.
    pub e_base: u64,
}

/// `ceil(0.01 * e_base)`, at least 1.
pub fn warm_start_epochs(e_base: u64) -> usize {
    (e_base.div_ceil(100) as usize).max(1)
}

struct ItemResult {
    grad: Vec<f64>,
    value: f64,
    breakdown: LossBreakdown,
    best_feasible: Option<f64>,
}

fn train_item(
    params: &PolicyParams,
    inst: &ProblemInstance,
    cfg: &TrainConfig,
    stream: u64,
) -> Result<ItemResult, HarnessError> {
    let n_samples = cfg.samples.unwrap_or(inst.customers()).max(1);
    let mut rng = StreamRng::new(cfg.seed, domain::TRAIN_SAMPLING, stream);
    let mut rollout = decode_sample(inst, params, n_samples, &mut rng)?;
    let reports = rollout
        .samples
        .trajectories
        .iter()
        .map(|t| evaluate_trajectory(inst, t, &cfg.lagrangian))
        .collect::<Result<Vec<_>, _>>()?;
    let best_feasible = reports.iter().filter(|r| r.is_feasible()).map(|r| r.objective).reduce(f64::min);
    let lps = rollout.samples.logprobs.clone();
    let (value, dlogp, breakdown) = match cfg.loss.kind {
        LossKind::Reinforce => {
            let out = reinforce_loss(&lps, &reports)?;
            let b = LossBreakdown {
                total: out.value,
                ..Default::default()
            };
            (out.value, out.grad, b)
        }
        LossKind::Ucpo => {
            let ranked = rank_batch(&reports, cfg.relation)?;
            let ranked = stride_filter(&ranked, cfg.loss.stride_k)?;
            let (b, g) = composite_with_grad(&ranked, &lps, &cfg.loss)?;
            (b.total, g, b)
        }
    };
    let loss = rollout.attach_loss(value, dlogp);
    let grad = rollout.backward(loss)?;
    Ok(ItemResult {
        grad,
        value,
        breakdown,
        best_feasible,
    })
}

/// Resolves the starting point (checkpoint or seeded init) and trains.
pub fn train(
    cfg: &TrainConfig,
    source: &DataSource,
    eval_set: Option<(&[ProblemInstance], Option<&[Option<f64>]>)>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let (params, e_base) = match &cfg.checkpoint_in {
        Some(path) => {
            let ck = warm_start(path, &cfg.policy)?;
            (ck.params, ck.e_base)
        }
        None => (PolicyParams::init(cfg.policy.clone(), cfg.seed)?, 0),
    };
    train_from(cfg, params, e_base, source, eval_set)
}

/// Trains from explicit initial parameters.
pub fn train_from(
    cfg: &TrainConfig,
    mut params: PolicyParams,
    e_base: u64,
    source: &DataSource,
    eval_set: Option<(&[ProblemInstance], Option<&[Option<f64>]>)>,
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    params.validate()?;
    let epochs = cfg.epochs.unwrap_or(if cfg.checkpoint_in.is_some() {
        warm_start_epochs(e_base)
    } else {
        COLD_START_EPOCHS
    });
    let start = Instant::now();
    let mut opt = Adam::new(cfg.optimizer, params.len());
    let mut history = Vec::with_capacity(epochs);
    let mut evals = Vec::new();
    let b = cfg.batch_size;
    let eval_cfg = EvalConfig {
        lagrangian: cfg.lagrangian.clone(),
        ..cfg.eval.clone()
    };
    for epoch in 0..epochs {
        let mut sums = [0.0f64; 4];
        let mut infeasible = 0usize;
        let mut best = Vec::new();
        for j in 0..cfg.steps_per_epoch {
            let step = epoch * cfg.steps_per_epoch + j;
            let batch = (0..b).map(|i| source.instance(step * b + i)).collect::<Result<Vec<_>, _>>()?;
            let items = cfg
                .exec
                .map(&batch, |i, inst| train_item(&params, inst, cfg, (step * b + i) as u64))
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            let mut grad = vec![0.0; params.len()];
            for (i, it) in items.iter().enumerate() {
                if !it.value.is_finite() || it.grad.iter().any(|g| !g.is_finite()) {
                    return Err(HarnessError::NonFinite {
                        what: if it.value.is_finite() { "gradient" } else { "loss" },
                        step,
                        instance: step * b + i,
                        detail: format!("{:?}", it.breakdown),
                    });
                }
                for (g, x) in grad.iter_mut().zip(&it.grad) {
                    *g += x;
                }
                sums[0] += it.value;
                sums[1] += it.breakdown.dual;
                sums[2] += it.breakdown.margin;
                sums[3] += it.breakdown.primal;
                match it.best_feasible {
                    Some(f) => best.push(f),
                    None => infeasible += 1,
                }
            }
            let inv = 1.0 / b as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            if let Some(clip) = cfg.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            opt.step(&mut params.values, &grad);
            params.quantize();
        }
        let count = (b * cfg.steps_per_epoch) as f64;
        history.push(MetricsRecord {
            epoch,
            infeasible_rate: infeasible as f64 / count,
            mean_best_feasible_objective: (!best.is_empty()).then(|| best.iter().sum::<f64>() / best.len() as f64),
            mean_gap_pct: None,
            loss_total: sums[0] / count,
            loss_dual: sums[1] / count,
            loss_margin: sums[2] / count,
            loss_primal: sums[3] / count,
            instances: b * cfg.steps_per_epoch,
            missing_optimum: 0,
            wallclock_s: start.elapsed().as_secs_f64(),
        });
        if let Some((data, optima)) = eval_set {
            if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 {
                let mut m = evaluate(&params, data, optima, &eval_cfg)?.metrics;
                m.epoch = epoch;
                m.wallclock_s = start.elapsed().as_secs_f64();
                evals.push(m);
            }
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        evals,
        e_base: e_base + (epochs * cfg.steps_per_epoch) as u64,
    })
}
