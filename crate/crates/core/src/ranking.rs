//! Feasibility-first partial order over sampled solutions and the ablation
//! relations built on the same reports.

use crate::problems::EvalReport;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("cannot rank an empty batch")]
    EmptyBatch,
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("tie threshold must be positive, got {0}")]
    BadAlpha(f64),
    #[error("unknown relation {0:?}")]
    Parse(String),
}

/// Which preference relation orders the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    /// Feasible by objective, feasible over infeasible, infeasible by Lagrangian.
    #[default]
    Default,
    /// Infeasible solutions compared by their penalty `L - f` alone.
    ConstraintOnly,
    /// Objective within equal feasibility; feasible over infeasible.
    PrimalOnly,
    /// Lagrangian only, feasibility ignored.
    DualOnly,
    /// Default, except infeasible pairs within `alpha` in `L` are tied.
    Ties { alpha: f64 },
}

impl RelationKind {
    pub fn validate(&self) -> Result<(), RankError> {
        match *self {
            RelationKind::Ties { alpha } if !(alpha > 0.0) => Err(RankError::BadAlpha(alpha)),
            _ => Ok(()),
        }
    }

    /// Lexicographic key; smaller is better. `Ties` sorts like `Default`.
    fn key(&self, r: &EvalReport) -> (u8, f64) {
        let feasible = r.is_feasible();
        match self {
            RelationKind::Default | RelationKind::Ties { .. } => {
                if feasible {
                    (0, r.objective)
                } else {
                    (1, r.lagrangian)
                }
            }
            RelationKind::ConstraintOnly => {
                if feasible {
                    (0, r.objective)
                } else {
                    (1, r.penalty())
                }
            }
            RelationKind::PrimalOnly => (r.indicator, r.objective),
            RelationKind::DualOnly => (0, r.lagrangian),
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationKind::Default => f.write_str("default"),
            RelationKind::ConstraintOnly => f.write_str("c"),
            RelationKind::PrimalOnly => f.write_str("p"),
            RelationKind::DualOnly => f.write_str("d"),
            RelationKind::Ties { alpha } => write!(f, "t:{alpha}"),
        }
    }
}

impl std::str::FromStr for RelationKind {
    type Err = RankError;

    /// Parses `default`, `c`, `p`, `d` or `t:<alpha>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rel = match s.to_ascii_lowercase().as_str() {
            "default" => RelationKind::Default,
            "c" => RelationKind::ConstraintOnly,
            "p" => RelationKind::PrimalOnly,
            "d" => RelationKind::DualOnly,
            other => {
                let alpha = other
                    .strip_prefix("t:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .ok_or_else(|| RankError::Parse(s.to_string()))?;
                RelationKind::Ties { alpha }
            }
        };
        rel.validate()?;
        Ok(rel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preference {
    Better,
    Worse,
    Tie,
}

/// Compares solution `i` against `j` under `relation`.
pub fn compare(ri: &EvalReport, rj: &EvalReport, relation: RelationKind) -> Preference {
    if let RelationKind::Ties { alpha } = relation {
        if !ri.is_feasible() && !rj.is_feasible() && (ri.lagrangian - rj.lagrangian).abs() <= alpha {
            return Preference::Tie;
        }
    }
    let (ki, kj) = (relation.key(ri), relation.key(rj));
    match ki.0.cmp(&kj.0).then(ki.1.total_cmp(&kj.1)) {
        Ordering::Less => Preference::Better,
        Ordering::Greater => Preference::Worse,
        Ordering::Equal => Preference::Tie,
    }
}

/// A batch sorted best-first and split by feasibility. Indices always refer
/// to positions in the original sampled batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedBatch {
    pub order: Vec<usize>,
    /// Feasible indices, in ranked order.
    pub feasible: Vec<usize>,
    /// Infeasible indices, in ranked order.
    pub infeasible: Vec<usize>,
    /// Best feasible solution (first feasible entry of `order`).
    pub pivot_star: Option<usize>,
    /// Least-infeasible solution (first infeasible entry of `order`).
    pub pivot_circ: Option<usize>,
    pub reports: Vec<EvalReport>,
    pub relation: RelationKind,
}

impl RankedBatch {
    fn from_order(order: Vec<usize>, reports: Vec<EvalReport>, relation: RelationKind) -> Self {
        let (feasible, infeasible): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| reports[i].is_feasible());
        Self {
            pivot_star: feasible.first().copied(),
            pivot_circ: infeasible.first().copied(),
            order,
            feasible,
            infeasible,
            reports,
            relation,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn report(&self, idx: usize) -> &EvalReport {
        &self.reports[idx]
    }
}

/// Stable sort by the relation; exact score ties keep sampling order.
pub fn rank_batch(reports: &[EvalReport], relation: RelationKind) -> Result<RankedBatch, RankError> {
    if reports.is_empty() {
        return Err(RankError::EmptyBatch);
    }
    relation.validate()?;
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        let (ka, kb) = (relation.key(&reports[a]), relation.key(&reports[b]));
        ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    Ok(RankedBatch::from_order(order, reports.to_vec(), relation))
}

/// Keeps ranked positions `1, k+1, 2k+1, ...` (1-based) and recomputes pivots.
pub fn stride_filter(ranked: &RankedBatch, k: usize) -> Result<RankedBatch, RankError> {
    if k == 0 {
        return Err(RankError::ZeroStride);
    }
    let order = ranked.order.iter().copied().step_by(k).collect();
    Ok(RankedBatch::from_order(order, ranked.reports.clone(), ranked.relation))
}

/// Drops repeated trajectories (keeping the first sample of each), for
/// diagnostics on sample diversity.
pub fn dedup_indices<T: PartialEq>(items: &[T]) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        if !keep.iter().any(|&j| items[j] == *item) {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::PerFamily;

    fn feas(f: f64) -> EvalReport {
        EvalReport {
            objective: f,
            violations: PerFamily::default(),
            indicator: 0,
            lagrangian: f,
        }
    }

    fn infeas(f: f64, l: f64) -> EvalReport {
        EvalReport {
            objective: f,
            violations: PerFamily {
                time_window: l - f,
                ..PerFamily::default()
            },
            indicator: 1,
            lagrangian: l,
        }
    }

    #[test]
    fn case_table() {
        use Preference::*;
        use RelationKind::*;
        assert_eq!(compare(&feas(5.0), &infeas(3.0, 4.0), Default), Better);
        assert_eq!(compare(&feas(5.0), &feas(7.0), Default), Better);
        assert_eq!(compare(&infeas(3.0, 4.0), &infeas(3.0, 9.0), Default), Better);
        assert_eq!(compare(&infeas(3.0, 4.0), &infeas(3.0, 9.0), DualOnly), Better);
        // Dual-only lets a cheap infeasible beat a feasible solution.
        assert_eq!(compare(&feas(5.0), &infeas(3.0, 4.0), DualOnly), Worse);
        // Constraint-only: smaller penalty wins even with larger L.
        assert_eq!(compare(&infeas(9.0, 9.5), &infeas(1.0, 4.0), ConstraintOnly), Better);
        // Primal-only: infeasible pairs by f.
        assert_eq!(compare(&infeas(2.0, 9.0), &infeas(3.0, 4.0), PrimalOnly), Better);
        assert_eq!(compare(&feas(9.0), &infeas(1.0, 2.0), PrimalOnly), Better);
        assert_eq!(compare(&feas(4.0), &feas(4.0), Default), Tie);
        let t = Ties { alpha: 0.5 };
        assert_eq!(compare(&infeas(3.0, 4.0), &infeas(3.0, 4.4), t), Tie);
        assert_eq!(compare(&infeas(3.0, 4.4), &infeas(3.0, 4.0), t), Tie);
        assert_eq!(compare(&infeas(3.0, 4.0), &infeas(3.0, 4.6), t), Better);
        assert_eq!(compare(&feas(4.0), &feas(4.3), t), Better);
    }

    #[test]
    fn mixed_batch_order() {
        let reports = [infeas(1.0, 5.0), feas(3.0), infeas(1.0, 4.0), feas(2.0)];
        let rb = rank_batch(&reports, RelationKind::Default).unwrap();
        assert_eq!(rb.order, vec![3, 1, 2, 0]);
        assert_eq!(rb.feasible, vec![3, 1]);
        assert_eq!(rb.infeasible, vec![2, 0]);
        assert_eq!(rb.pivot_star, Some(3));
        assert_eq!(rb.pivot_circ, Some(2));
    }

    #[test]
    fn homogeneous_batches() {
        let all_feasible = [feas(3.0), feas(1.0), feas(2.0)];
        let rb = rank_batch(&all_feasible, RelationKind::Default).unwrap();
        assert!(rb.infeasible.is_empty() && rb.pivot_circ.is_none());
        assert_eq!(rb.order, vec![1, 2, 0]);

        let all_infeasible = [infeas(1.0, 3.0), infeas(1.0, 2.0), infeas(1.0, 2.5)];
        let rb = rank_batch(&all_infeasible, RelationKind::Default).unwrap();
        assert!(rb.feasible.is_empty() && rb.pivot_star.is_none());
        assert_eq!(rb.pivot_circ, Some(1));
    }

    #[test]
    fn ties_keep_sampling_order() {
        let rb = rank_batch(&[feas(1.0), feas(1.0), feas(0.5), feas(1.0)], RelationKind::Default).unwrap();
        assert_eq!(rb.order, vec![2, 0, 1, 3]);
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(rank_batch(&[], RelationKind::Default), Err(RankError::EmptyBatch));
    }

    #[test]
    fn stride_positions() {
        let reports: Vec<EvalReport> = (0..8).map(|i| feas(i as f64)).collect();
        let rb = rank_batch(&reports, RelationKind::Default).unwrap();
        assert_eq!(stride_filter(&rb, 2).unwrap().order, vec![0, 2, 4, 6]);
        assert_eq!(stride_filter(&rb, 4).unwrap().order, vec![0, 4]);
        assert_eq!(stride_filter(&rb, 1).unwrap(), rb);
        assert_eq!(stride_filter(&rb, 0), Err(RankError::ZeroStride));
    }

    #[test]
    fn stride_recomputes_pivots() {
        let reports = [feas(1.0), infeas(1.0, 2.0), infeas(1.0, 3.0), infeas(1.0, 4.0)];
        let rb = rank_batch(&reports, RelationKind::Default).unwrap();
        let f = stride_filter(&rb, 2).unwrap();
        assert_eq!(f.order, vec![0, 2]);
        assert_eq!(f.pivot_circ, Some(2));
    }

    #[test]
    fn relation_parsing() {
        assert_eq!("default".parse::<RelationKind>().unwrap(), RelationKind::Default);
        assert_eq!("t:0.1".parse::<RelationKind>().unwrap(), RelationKind::Ties { alpha: 0.1 });
        assert!("t:0".parse::<RelationKind>().is_err());
        assert!("x".parse::<RelationKind>().is_err());
    }

    #[test]
    fn dedup_keeps_first() {
        assert_eq!(dedup_indices(&[3, 1, 3, 2, 1]), vec![0, 1, 3]);
    }
}
