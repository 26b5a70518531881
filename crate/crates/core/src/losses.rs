//! Preference losses over a ranked batch of sampled trajectories, and the
//! fixed-penalty REINFORCE baseline.
//!
//! Every preference loss is a weighted sum of Bradley-Terry terms
//! `-log sigmoid(beta * (logp_w - logp_l - shift))` (plus tie terms for the
//! tie-aware variant). Each loss first builds the list of terms from the
//! ranking alone, then evaluates value and gradient with respect to the
//! log-likelihood vector in closed form; the trainer pushes that gradient
//! through the policy tape.

use crate::problems::EvalReport;
use crate::ranking::{RankedBatch, RelationKind};
use crate::tape::{sigmoid, softplus};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Ratio denominators below this raise [`LossError::Degenerate`].
pub const DENOM_GUARD: f64 = 1e-12;
pub const DEFAULT_TIE_ALPHA: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("degenerate scaling denominator {value:e} in {what}")]
    Degenerate { what: &'static str, value: f64 },
    #[error("expected {expected} log-probabilities, got {found}")]
    Length { expected: usize, found: usize },
    #[error("non-finite log-probability at {0}")]
    NonFinite(usize),
    #[error("invalid loss config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BetaKind {
    #[default]
    Default,
    /// Dual term scaled by penalty ratios `(L - f) / (L_o - f_o)`.
    DualOnly,
    /// Every term scaled by `f(winner) / f(loser)`.
    PrimalOnly,
    /// Margin scaled by `f(winner) / c`, dual fixed at 1.
    StepIndicator { c: f64 },
}

impl fmt::Display for BetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaKind::Default => write!(f, "default"),
            BetaKind::DualOnly => write!(f, "d"),
            BetaKind::PrimalOnly => write!(f, "p"),
            BetaKind::StepIndicator { c } => write!(f, "c:{c}"),
        }
    }
}

impl std::str::FromStr for BetaKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(BetaKind::Default),
            "d" => Ok(BetaKind::DualOnly),
            "p" => Ok(BetaKind::PrimalOnly),
            "c" => Ok(BetaKind::StepIndicator { c: 1.0 }),
            other => match other.strip_prefix("c:") {
                Some(v) => v
                    .parse()
                    .map(|c| BetaKind::StepIndicator { c })
                    .map_err(|_| LossError::Config(format!("bad step constant {v:?}"))),
                None => Err(LossError::Config(format!("unknown beta {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    #[default]
    Default,
    Subsets,
    BestWorst,
    ArgMax,
}

impl fmt::Display for Pairing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pairing::Default => "default",
            Pairing::Subsets => "subsets",
            Pairing::BestWorst => "bw",
            Pairing::ArgMax => "argmax",
        })
    }
}

impl std::str::FromStr for Pairing {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Pairing::Default),
            "subsets" => Ok(Pairing::Subsets),
            "bw" => Ok(Pairing::BestWorst),
            "argmax" => Ok(Pairing::ArgMax),
            other => Err(LossError::Config(format!("unknown pairing {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Ucpo,
    Reinforce,
}

impl std::str::FromStr for LossKind {
    type Err = LossError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ucpo" => Ok(LossKind::Ucpo),
            "reinforce" => Ok(LossKind::Reinforce),
            other => Err(LossError::Config(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Dual,
    Margin,
    Primal,
}

/// Which of the three terms may fire at all (ablation switch).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermMask {
    pub dual: bool,
    pub margin: bool,
    pub primal: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self {
            dual: true,
            margin: true,
            primal: true,
        }
    }
}

impl TermMask {
    fn allows(&self, t: Term) -> bool {
        match t {
            Term::Dual => self.dual,
            Term::Margin => self.margin,
            Term::Primal => self.primal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub beta: BetaKind,
    pub pairing: Pairing,
    /// Tie threshold; the `Ties` relation supplies one as well.
    pub tie_alpha: Option<f64>,
    /// Clamp the margin scale at 1 from below.
    pub margin_floor: bool,
    pub stride_k: usize,
    pub terms: TermMask,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Ucpo,
            beta: BetaKind::Default,
            pairing: Pairing::Default,
            tie_alpha: None,
            margin_floor: false,
            stride_k: 1,
            terms: TermMask::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.stride_k < 1 {
            return Err(LossError::Config("stride_k must be at least 1".into()));
        }
        if let Some(a) = self.tie_alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(LossError::Config(format!("tie_alpha {a} must be positive")));
            }
        }
        if let BetaKind::StepIndicator { c } = self.beta {
            if !(c > 0.0 && c.is_finite()) {
                return Err(LossError::Config(format!("step constant {c} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveFlags {
    pub dual: bool,
    pub margin: bool,
    pub primal: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub dual: f64,
    pub margin: f64,
    pub primal: f64,
    pub total: f64,
    pub active: ActiveFlags,
    /// Pairs contributing to dual, margin, primal.
    pub pair_count: [usize; 3],
    /// Tie-aware variant: parts of `dual` from non-tied and tied pairs.
    pub non_tie: f64,
    pub tie: f64,
    /// Best-worst pairing found no anchor pair.
    pub missing_anchor: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Pair { shift: f64 },
    Tie { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct PlanTerm {
    term: Term,
    winner: usize,
    loser: usize,
    beta: f64,
    weight: f64,
    kind: Kind,
}

/// `-log sigmoid(beta * (logp_w - logp_l))`, evaluated as a softplus.
pub fn preference_term(logp_winner: f64, logp_loser: f64, beta: f64) -> f64 {
    softplus(-beta * (logp_winner - logp_loser))
}

/// Tie probability of two solutions whose scaled log-likelihood gap is `mu`.
pub fn tie_probability(mu: f64, alpha: f64) -> f64 {
    tie_log_probability(mu, alpha).exp()
}

fn tie_log_probability(mu: f64, alpha: f64) -> f64 {
    (2.0 * alpha).exp_m1().ln() - softplus(mu + alpha) - softplus(alpha - mu)
}

/// `-log sigmoid(log p_tie)`.
pub fn tie_term(mu: f64, alpha: f64) -> f64 {
    softplus(-tie_log_probability(mu, alpha))
}

fn ratio(num: f64, den: f64, what: &'static str) -> Result<f64, LossError> {
    if den.abs() < DENOM_GUARD {
        return Err(LossError::Degenerate { what, value: den });
    }
    Ok(num / den)
}

fn beta_for(term: Term, w: &EvalReport, l: &EvalReport, cfg: &LossConfig) -> Result<f64, LossError> {
    match (cfg.beta, term) {
        (BetaKind::PrimalOnly, _) => ratio(w.objective, l.objective, "primal-only scale"),
        (BetaKind::StepIndicator { .. }, Term::Dual) => Ok(1.0),
        (BetaKind::StepIndicator { c }, Term::Margin) => ratio(w.objective, c, "step scale"),
        (BetaKind::DualOnly, Term::Dual) => ratio(l.penalty(), w.penalty(), "penalty scale"),
        (_, Term::Dual) => ratio(l.lagrangian, w.lagrangian, "dual scale"),
        (_, Term::Margin) => {
            let b = ratio(l.lagrangian, w.objective, "margin scale")?;
            Ok(if cfg.margin_floor { b.max(1.0) } else { b })
        }
        (_, Term::Primal) => ratio(l.objective, w.objective, "primal scale"),
    }
}

struct Planner<'a> {
    ranked: &'a RankedBatch,
    cfg: &'a LossConfig,
    terms: Vec<PlanTerm>,
}

impl Planner<'_> {
    fn pair(&mut self, term: Term, winner: usize, loser: usize, weight: f64) -> Result<(), LossError> {
        let r = &self.ranked.reports;
        let beta = beta_for(term, &r[winner], &r[loser], self.cfg)?;
        self.terms.push(PlanTerm {
            term,
            winner,
            loser,
            beta,
            weight,
            kind: Kind::Pair { shift: 0.0 },
        });
        Ok(())
    }

    /// Dual pivot against every other infeasible solution; with a tie
    /// threshold, pairs within `alpha` in Lagrangian become tie terms and
    /// the rest use the shifted preference.
    fn dual_star(&mut self, pivot: usize, others: &[usize], alpha: Option<f64>) -> Result<(), LossError> {
        let w = 1.0 / others.len() as f64;
        for &l in others {
            match alpha {
                None => self.pair(Term::Dual, pivot, l, w)?,
                Some(a) => {
                    let r = &self.ranked.reports;
                    let beta = beta_for(Term::Dual, &r[pivot], &r[l], self.cfg)?;
                    let kind = if (r[l].lagrangian - r[pivot].lagrangian).abs() <= a {
                        Kind::Tie { alpha: a }
                    } else {
                        Kind::Pair { shift: a }
                    };
                    self.terms.push(PlanTerm {
                        term: Term::Dual,
                        winner: pivot,
                        loser: l,
                        beta,
                        weight: w,
                        kind,
                    });
                }
            }
        }
        Ok(())
    }
}

fn tie_alpha(ranked: &RankedBatch, cfg: &LossConfig) -> Option<f64> {
    cfg.tie_alpha.or(match ranked.relation {
        RelationKind::Ties { alpha } => Some(alpha),
        _ => None,
    })
}

fn argmax_by(items: &[usize], key: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in items {
        if best.map_or(true, |b| key(i) >= key(b)) {
            best = Some(i);
        }
    }
    best
}

fn without(items: &[usize], skip: usize) -> Vec<usize> {
    items.iter().copied().filter(|&i| i != skip).collect()
}

/// `(N_T, N_TF, N_F)` normalizers of the all-pairs scheme.
pub fn subsets_normalizers(n_feasible: usize, n_infeasible: usize) -> (f64, f64, f64) {
    let (t, f) = (n_feasible as f64, n_infeasible as f64);
    (t * (t - 1.0) / 2.0, t * f / 2.0, f * (f - 1.0) / 2.0)
}

fn plan(ranked: &RankedBatch, cfg: &LossConfig) -> Result<(Vec<PlanTerm>, bool), LossError> {
    cfg.validate()?;
    let mut p = Planner {
        ranked,
        cfg,
        terms: Vec::new(),
    };
    let (tt, tf) = (&ranked.feasible, &ranked.infeasible);
    let r = &ranked.reports;
    let mut missing_anchor = false;

    if ranked.relation == RelationKind::DualOnly {
        // feasibility is ignored: one dual-style term over the whole batch
        if ranked.order.len() >= 2 {
            let pivot = ranked.order[0];
            p.dual_star(pivot, &ranked.order[1..], None)?;
        }
        return Ok((p.terms, false));
    }

    match cfg.pairing {
        Pairing::Default => {
            if tt.is_empty() && tf.len() >= 2 {
                let pivot = ranked.pivot_circ.expect("infeasible set is non-empty");
                p.dual_star(pivot, &without(tf, pivot), tie_alpha(ranked, cfg))?;
            }
            if let Some(star) = ranked.pivot_star {
                let w = 1.0 / tf.len().max(1) as f64;
                for &l in tf {
                    p.pair(Term::Margin, star, l, w)?;
                }
                if tt.len() >= 2 {
                    let rest = without(tt, star);
                    let w = 1.0 / rest.len() as f64;
                    for l in rest {
                        p.pair(Term::Primal, star, l, w)?;
                    }
                }
            }
        }
        Pairing::Subsets => {
            let (nt, ntf, nf) = subsets_normalizers(tt.len(), tf.len());
            if tt.is_empty() && tf.len() >= 2 {
                for (a, &i) in tf.iter().enumerate() {
                    for &j in &tf[a + 1..] {
                        if r[i].lagrangian < r[j].lagrangian {
                            p.pair(Term::Dual, i, j, 1.0 / nf)?;
                        }
                    }
                }
            }
            if !tt.is_empty() && !tf.is_empty() {
                for &i in tt {
                    for &j in tf {
                        p.pair(Term::Margin, i, j, 1.0 / ntf)?;
                    }
                }
            }
            if tt.len() >= 2 {
                for (a, &i) in tt.iter().enumerate() {
                    for &j in &tt[a + 1..] {
                        if r[i].objective < r[j].objective {
                            p.pair(Term::Primal, i, j, 1.0 / nt)?;
                        }
                    }
                }
            }
        }
        Pairing::BestWorst => match (ranked.pivot_star, argmax_by(tf, |i| r[i].lagrangian)) {
            (Some(star), Some(worst)) => p.pair(Term::Margin, star, worst, 1.0)?,
            _ => missing_anchor = true,
        },
        Pairing::ArgMax => {
            let hat_circ = argmax_by(tf, |i| r[i].lagrangian);
            let hat_star = argmax_by(tt, |i| r[i].objective);
            if let (Some(c), false) = (hat_circ, tt.is_empty()) {
                let w = 1.0 / tt.len() as f64;
                for &i in tt {
                    p.pair(Term::Margin, i, c, w)?;
                }
            }
            if let (Some(s), true) = (hat_star, tt.len() >= 2) {
                let rest = without(tt, s);
                let w = 1.0 / rest.len() as f64;
                for i in rest {
                    p.pair(Term::Primal, i, s, w)?;
                }
            }
            if let (Some(c), true) = (hat_circ, tt.is_empty() && tf.len() >= 2) {
                let rest = without(tf, c);
                let w = 1.0 / rest.len() as f64;
                for i in rest {
                    p.pair(Term::Dual, i, c, w)?;
                }
            }
        }
    }
    p.terms.retain(|t| cfg.terms.allows(t.term));
    Ok((p.terms, missing_anchor))
}

fn check_logprobs(ranked: &RankedBatch, logprobs: &[f64]) -> Result<(), LossError> {
    if logprobs.len() != ranked.reports.len() {
        return Err(LossError::Length {
            expected: ranked.reports.len(),
            found: logprobs.len(),
        });
    }
    match logprobs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(LossError::NonFinite(i)),
        None => Ok(()),
    }
}

fn evaluate(terms: &[PlanTerm], logprobs: &[f64], missing_anchor: bool) -> (LossBreakdown, Vec<f64>) {
    let mut out = LossBreakdown {
        missing_anchor,
        ..Default::default()
    };
    let mut grad = vec![0.0; logprobs.len()];
    for t in terms {
        let gap = logprobs[t.winner] - logprobs[t.loser];
        let (value, dgap) = match t.kind {
            Kind::Pair { shift } => {
                let z = t.beta * (gap - shift);
                (softplus(-z), -sigmoid(-z) * t.beta)
            }
            Kind::Tie { alpha } => {
                let mu = t.beta * gap;
                let lt = tie_log_probability(mu, alpha);
                let dlt = sigmoid(alpha - mu) - sigmoid(mu + alpha);
                (softplus(-lt), -sigmoid(-lt) * dlt * t.beta)
            }
        };
        let v = t.weight * value;
        grad[t.winner] += t.weight * dgap;
        grad[t.loser] -= t.weight * dgap;
        let (slot, flag, count) = match t.term {
            Term::Dual => (&mut out.dual, &mut out.active.dual, 0),
            Term::Margin => (&mut out.margin, &mut out.active.margin, 1),
            Term::Primal => (&mut out.primal, &mut out.active.primal, 2),
        };
        *slot += v;
        *flag = true;
        out.pair_count[count] += 1;
        match t.kind {
            Kind::Tie { .. } => out.tie += v,
            Kind::Pair { shift } if shift != 0.0 => out.non_tie += v,
            _ => {}
        }
    }
    out.total = out.dual + out.margin + out.primal;
    (out, grad)
}

/// Composite loss (dual + margin + primal under the shared activation rules,
/// or the configured pairing variant) and its gradient with respect to the
/// log-likelihoods.
pub fn composite_with_grad(
    ranked: &RankedBatch,
    logprobs: &[f64],
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    check_logprobs(ranked, logprobs)?;
    let (terms, missing) = plan(ranked, cfg)?;
    Ok(evaluate(&terms, logprobs, missing))
}

pub fn composite_loss(ranked: &RankedBatch, logprobs: &[f64], cfg: &LossConfig) -> Result<LossBreakdown, LossError> {
    composite_with_grad(ranked, logprobs, cfg).map(|(b, _)| b)
}

/// Same as [`composite_loss`]; kept as a separate entry point for the
/// non-default pairings.
pub fn pairing_variant_loss(ranked: &RankedBatch, logprobs: &[f64], cfg: &LossConfig) -> Result<LossBreakdown, LossError> {
    if cfg.pairing == Pairing::Default {
        return Err(LossError::Config("pairing variant requested with default pairing".into()));
    }
    composite_loss(ranked, logprobs, cfg)
}

fn only(term: Term, cfg: &LossConfig) -> LossConfig {
    LossConfig {
        terms: TermMask {
            dual: term == Term::Dual,
            margin: term == Term::Margin,
            primal: term == Term::Primal,
        },
        ..cfg.clone()
    }
}

pub fn dual_loss(ranked: &RankedBatch, logprobs: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    composite_loss(ranked, logprobs, &only(Term::Dual, cfg)).map(|b| b.dual)
}

pub fn margin_loss(ranked: &RankedBatch, logprobs: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    composite_loss(ranked, logprobs, &only(Term::Margin, cfg)).map(|b| b.margin)
}

pub fn primal_loss(ranked: &RankedBatch, logprobs: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    composite_loss(ranked, logprobs, &only(Term::Primal, cfg)).map(|b| b.primal)
}

/// `(non_tie, tie)` parts of the tie-aware dual term with threshold `alpha`.
pub fn tie_losses(ranked: &RankedBatch, logprobs: &[f64], alpha: f64) -> Result<(f64, f64), LossError> {
    let cfg = LossConfig {
        tie_alpha: Some(alpha),
        ..only(Term::Dual, &LossConfig::default())
    };
    composite_loss(ranked, logprobs, &cfg).map(|b| (b.non_tie, b.tie))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReinforceOutcome {
    pub value: f64,
    pub grad: Vec<f64>,
    pub baseline: f64,
    /// A single sample has zero advantage by construction.
    pub single_sample: bool,
}

/// Shared-baseline REINFORCE with reward `-(f + lambda . g)` (the reports'
/// Lagrangian): `mean_i (r_i - mean(r)) * (-logp_i)`.
pub fn reinforce_loss(logprobs: &[f64], reports: &[EvalReport]) -> Result<ReinforceOutcome, LossError> {
    if logprobs.len() != reports.len() {
        return Err(LossError::Length {
            expected: reports.len(),
            found: logprobs.len(),
        });
    }
    if let Some(i) = logprobs.iter().position(|x| !x.is_finite()) {
        return Err(LossError::NonFinite(i));
    }
    let n = reports.len();
    if n == 0 {
        return Err(LossError::Config("empty sample set".into()));
    }
    let rewards: Vec<f64> = reports.iter().map(|r| -r.lagrangian).collect();
    let baseline = rewards.iter().sum::<f64>() / n as f64;
    let inv = 1.0 / n as f64;
    let grad: Vec<f64> = rewards.iter().map(|r| -(r - baseline) * inv).collect();
    let value = grad.iter().zip(logprobs).map(|(g, lp)| g * lp).sum();
    Ok(ReinforceOutcome {
        value,
        grad,
        baseline,
        single_sample: n == 1,
    })
}
