//! Central finite-difference checks of loss gradients through the policy.

use super::HarnessError;
use crate::exec::Exec;
use crate::losses::{composite_with_grad, reinforce_loss, BetaKind, LossConfig, LossKind, Pairing, TermMask};
use crate::policy::{decode_sample, score_trajectories, PolicyParams};
use crate::problems::{evaluate as evaluate_trajectory, EvalReport, LagrangianConfig, ProblemInstance};
use crate::ranking::{rank_batch, stride_filter, RelationKind};
use crate::rng::{domain, StreamRng};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckCase {
    pub name: String,
    pub relation: RelationKind,
    pub loss: LossConfig,
}

impl GradCheckCase {
    fn new(name: &str, relation: RelationKind, loss: LossConfig) -> Self {
        Self {
            name: name.to_string(),
            relation,
            loss,
        }
    }
}

/// Every loss family: the three terms alone and combined, each scaling and
/// pairing variant, each relation, tie losses and REINFORCE.
pub fn standard_cases() -> Vec<GradCheckCase> {
    let base = LossConfig::default();
    let mask = |dual, margin, primal| LossConfig {
        terms: TermMask { dual, margin, primal },
        ..base.clone()
    };
    let mut cases = vec![
        GradCheckCase::new("composite", RelationKind::Default, base.clone()),
        GradCheckCase::new("dual", RelationKind::Default, mask(true, false, false)),
        GradCheckCase::new("margin", RelationKind::Default, mask(false, true, false)),
        GradCheckCase::new("primal", RelationKind::Default, mask(false, false, true)),
        GradCheckCase::new(
            "margin-floor",
            RelationKind::Default,
            LossConfig {
                margin_floor: true,
                ..base.clone()
            },
        ),
    ];
    for (name, beta) in [
        ("beta-d", BetaKind::DualOnly),
        ("beta-p", BetaKind::PrimalOnly),
        ("beta-c", BetaKind::StepIndicator { c: 1.0 }),
    ] {
        cases.push(GradCheckCase::new(name, RelationKind::Default, LossConfig { beta, ..base.clone() }));
    }
    for (name, pairing) in [
        ("subsets", Pairing::Subsets),
        ("best-worst", Pairing::BestWorst),
        ("argmax", Pairing::ArgMax),
    ] {
        cases.push(GradCheckCase::new(name, RelationKind::Default, LossConfig { pairing, ..base.clone() }));
    }
    for relation in [RelationKind::ConstraintOnly, RelationKind::PrimalOnly, RelationKind::DualOnly] {
        cases.push(GradCheckCase::new(&format!("relation-{relation}"), relation, base.clone()));
    }
    cases.push(GradCheckCase::new("ties", RelationKind::Ties { alpha: 0.1 }, base.clone()));
    cases.push(GradCheckCase::new(
        "stride-2",
        RelationKind::Default,
        LossConfig {
            stride_k: 2,
            ..base.clone()
        },
    ));
    cases.push(GradCheckCase::new(
        "reinforce",
        RelationKind::Default,
        LossConfig {
            kind: LossKind::Reinforce,
            ..base
        },
    ));
    cases
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub case: String,
    pub loss: f64,
    /// `max |g - fd| / max(|g|, |fd|, 1e-6)` over the checked parameters.
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub checked: usize,
    /// Largest analytic gradient magnitude, to spot vacuous checks.
    pub max_abs_grad: f64,
}

fn loss_of(case: &GradCheckCase, reports: &[EvalReport], lps: &[f64]) -> Result<(f64, Vec<f64>), HarnessError> {
    match case.loss.kind {
        LossKind::Reinforce => {
            let out = reinforce_loss(lps, reports)?;
            Ok((out.value, out.grad))
        }
        LossKind::Ucpo => {
            let ranked = stride_filter(&rank_batch(reports, case.relation)?, case.loss.stride_k)?;
            let (b, g) = composite_with_grad(&ranked, lps, &case.loss)?;
            Ok((b.total, g))
        }
    }
}

/// Samples `n_samples` trajectories, then compares the backward gradient of
/// every case against central differences with step `h` on every
/// `stride`-th parameter. `reports` replaces the evaluator's reports when
/// given (same length as the sample count).
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    inst: &ProblemInstance,
    params: &PolicyParams,
    n_samples: usize,
    seed: u64,
    reports: Option<&[EvalReport]>,
    lagrangian: &LagrangianConfig,
    cases: &[GradCheckCase],
    h: f64,
    stride: usize,
    exec: Exec,
) -> Result<Vec<GradCheckReport>, HarnessError> {
    let mut rng = StreamRng::new(seed, domain::TRAIN_SAMPLING, 0);
    let rollout = decode_sample(inst, params, n_samples, &mut rng)?;
    let trajs = rollout.samples.trajectories.clone();
    let reports = match reports {
        Some(r) if r.len() != trajs.len() => {
            return Err(HarnessError::Config(format!("{} reports for {} samples", r.len(), trajs.len())))
        }
        Some(r) => r.to_vec(),
        None => trajs
            .iter()
            .map(|t| evaluate_trajectory(inst, t, lagrangian))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let probe: Vec<usize> = (0..params.len()).step_by(stride.max(1)).collect();
    let shifted = exec
        .map(&probe, |_, &i| {
            let mut vals = params.values.clone();
            let mut at = |v: f64| {
                vals[i] = v;
                let q = PolicyParams {
                    values: vals.clone(),
                    ..params.clone()
                };
                score_trajectories(inst, &q, &trajs).map(|r| r.samples.logprobs)
            };
            let up = at(params.values[i] + h)?;
            let down = at(params.values[i] - h)?;
            Ok((up, down))
        })
        .into_iter()
        .collect::<Result<Vec<_>, crate::policy::PolicyError>>()?;
    let lps = &rollout.samples.logprobs;
    let forced = score_trajectories(inst, params, &trajs)?.samples.logprobs;
    if let Some(k) = (0..lps.len()).find(|&k| (lps[k] - forced[k]).abs() > 1e-12) {
        return Err(HarnessError::Config(format!(
            "forced pass disagrees with sampling on sample {k}: {} vs {}",
            forced[k], lps[k]
        )));
    }
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let (value, dlogp) = loss_of(case, &reports, lps)?;
        let mut r = rollout_clone(inst, params, &trajs)?;
        let loss = r.attach_loss(value, dlogp);
        let grad = r.backward(loss)?;
        let mut report = GradCheckReport {
            case: case.name.clone(),
            loss: value,
            max_rel_err: 0.0,
            worst_param: 0,
            checked: probe.len(),
            max_abs_grad: grad.iter().fold(0.0, |m, g| m.max(g.abs())),
        };
        for (&i, (up, down)) in probe.iter().zip(&shifted) {
            let fd = (loss_of(case, &reports, up)?.0 - loss_of(case, &reports, down)?.0) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst_param = i;
            }
        }
        out.push(report);
    }
    Ok(out)
}

// The sampling tape is consumed by one loss; later cases replay the same
// trajectories through a fresh forced pass, which records identical values.
fn rollout_clone(
    inst: &ProblemInstance,
    params: &PolicyParams,
    trajs: &[crate::problems::Trajectory],
) -> Result<crate::policy::Rollout, HarnessError> {
    Ok(score_trajectories(inst, params, trajs)?)
}
