//! Cartesian ablation grids over training and evaluation settings.

use super::eval::{evaluate, summary_csv, EvalConfig};
use super::train::{train, DataSource, TrainConfig};
use super::{HarnessError, MetricsRecord};
use crate::losses::{BetaKind, LossKind, Pairing};
use crate::problems::{LagrangianConfig, ProblemInstance};
use crate::ranking::RelationKind;
use serde::{Deserialize, Serialize};

/// Each axis lists the values to sweep; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationGrid {
    pub kinds: Vec<LossKind>,
    pub relations: Vec<RelationKind>,
    pub betas: Vec<BetaKind>,
    pub pairings: Vec<Pairing>,
    pub strides: Vec<usize>,
    /// Uniform multipliers applied to every constraint family.
    pub lambdas: Vec<f64>,
    pub samples: Vec<usize>,
    pub aug: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSettings {
    pub kind: LossKind,
    pub relation: RelationKind,
    pub beta: BetaKind,
    pub pairing: Pairing,
    pub stride: usize,
    pub lambda: Option<f64>,
    pub samples: Option<usize>,
    pub aug8: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CellStatus {
    Completed(MetricsRecord),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: String,
    pub settings: CellSettings,
    pub status: CellStatus,
}

impl CellResult {
    pub fn metrics(&self) -> Option<&MetricsRecord> {
        match &self.status {
            CellStatus::Completed(m) => Some(m),
            CellStatus::Failed(_) => None,
        }
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl AblationGrid {
    pub fn cells(&self, base: &TrainConfig, eval: &EvalConfig) -> Vec<CellSettings> {
        let mut out = Vec::new();
        for kind in axis(&self.kinds, base.loss.kind) {
            for relation in axis(&self.relations, base.relation) {
                for beta in axis(&self.betas, base.loss.beta) {
                    for pairing in axis(&self.pairings, base.loss.pairing) {
                        for stride in axis(&self.strides, base.loss.stride_k) {
                            for lambda in axis(&self.lambdas.iter().map(|&l| Some(l)).collect::<Vec<_>>(), None) {
                                for samples in axis(&self.samples.iter().map(|&s| Some(s)).collect::<Vec<_>>(), base.samples) {
                                    for aug8 in axis(&self.aug, eval.aug8) {
                                        out.push(CellSettings {
                                            kind,
                                            relation,
                                            beta,
                                            pairing,
                                            stride,
                                            lambda,
                                            samples,
                                            aug8,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn label(&self, s: &CellSettings) -> String {
        let mut parts = Vec::new();
        if !self.kinds.is_empty() {
            parts.push(format!("loss={}", match s.kind {
                LossKind::Ucpo => "ucpo",
                LossKind::Reinforce => "reinforce",
            }));
        }
        if !self.relations.is_empty() {
            parts.push(format!("relation={}", s.relation));
        }
        if !self.betas.is_empty() {
            parts.push(format!("beta={}", s.beta));
        }
        if !self.pairings.is_empty() {
            parts.push(format!("pairing={}", s.pairing));
        }
        if !self.strides.is_empty() {
            parts.push(format!("k={}", s.stride));
        }
        if let Some(l) = s.lambda {
            parts.push(format!("lambda={l}"));
        }
        if !self.samples.is_empty() {
            parts.push(format!("N={}", s.samples.map_or("n".to_string(), |v| v.to_string())));
        }
        if !self.aug.is_empty() {
            parts.push(if s.aug8 { "x8".to_string() } else { "x1".to_string() });
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join(" ")
        }
    }
}

fn run_cell(
    s: &CellSettings,
    base: &TrainConfig,
    source: &DataSource,
    dataset: &[ProblemInstance],
    optima: Option<&[Option<f64>]>,
    eval: &EvalConfig,
) -> Result<MetricsRecord, HarnessError> {
    let mut cfg = base.clone();
    cfg.loss.kind = s.kind;
    cfg.relation = s.relation;
    cfg.loss.beta = s.beta;
    cfg.loss.pairing = s.pairing;
    cfg.loss.stride_k = s.stride;
    cfg.samples = s.samples;
    if let Some(l) = s.lambda {
        cfg.lagrangian = LagrangianConfig::uniform(l);
    }
    let trained = train(&cfg, source, None)?;
    let eval = EvalConfig {
        aug8: s.aug8,
        n_samples: s.samples.or(eval.n_samples),
        lagrangian: cfg.lagrangian.clone(),
        ..eval.clone()
    };
    let mut m = evaluate(&trained.params, dataset, optima, &eval)?.metrics;
    if let Some(last) = trained.history.last() {
        m.epoch = last.epoch;
        m.loss_total = last.loss_total;
        m.loss_dual = last.loss_dual;
        m.loss_margin = last.loss_margin;
        m.loss_primal = last.loss_primal;
    }
    Ok(m)
}

/// Trains and evaluates every cell with the base seeds and the shared
/// evaluation set. A failing cell is recorded and the sweep continues.
pub fn ablate(
    base: &TrainConfig,
    grid: &AblationGrid,
    source: &DataSource,
    dataset: &[ProblemInstance],
    optima: Option<&[Option<f64>]>,
    eval: &EvalConfig,
) -> Vec<CellResult> {
    grid.cells(base, eval)
        .into_iter()
        .map(|s| {
            let status = match run_cell(&s, base, source, dataset, optima, eval) {
                Ok(m) => CellStatus::Completed(m),
                Err(e) => CellStatus::Failed(e.to_string()),
            };
            CellResult {
                label: grid.label(&s),
                settings: s,
                status,
            }
        })
        .collect()
}

/// Comparison table; failed cells are reported with every column "failed".
pub fn ablation_csv(cells: &[CellResult]) -> Result<String, HarnessError> {
    let done: Vec<(String, MetricsRecord)> = cells
        .iter()
        .filter_map(|c| c.metrics().map(|m| (c.label.clone(), m.clone())))
        .collect();
    let mut out = summary_csv(&done)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for c in cells.iter().filter(|c| c.metrics().is_none()) {
        w.write_record([c.label.as_str(), "failed", "failed", "failed"])?;
    }
    out.push_str(&String::from_utf8(w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?).expect("utf8"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{generate_dataset, Difficulty, GenConfig};
    use crate::policy::{PolicyHyper, Preset};
    use crate::problems::Variant;

    fn base() -> TrainConfig {
        TrainConfig {
            epochs: Some(1),
            batch_size: 2,
            samples: Some(4),
            policy: PolicyHyper::preset(Preset::Tiny),
            data: GenConfig::new(Variant::Tsptw, 5, Difficulty::Easy, 1),
            ..Default::default()
        }
    }

    #[test]
    fn lambda_grid_completes_three_cells() {
        let cfg = base();
        let data = generate_dataset(&GenConfig::new(Variant::Tsptw, 5, Difficulty::Easy, 99), 0, 3, crate::Exec::Sequential).unwrap();
        let grid = AblationGrid {
            lambdas: vec![0.5, 1.0, 2.0],
            ..Default::default()
        };
        let eval = EvalConfig {
            aug8: false,
            n_samples: Some(4),
            ..Default::default()
        };
        let cells = ablate(&cfg, &grid, &DataSource::Generate(cfg.data.clone()), &data, None, &eval);
        assert_eq!(cells.len(), 3);
        assert!(cells.iter().all(|c| c.metrics().is_some_and(|m| m.instances == 3)));
        let table = ablation_csv(&cells).unwrap();
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().nth(1).unwrap().starts_with("lambda=0.5,"));
    }

    #[test]
    fn failing_cells_are_isolated() {
        let cfg = base();
        let data = generate_dataset(&GenConfig::new(Variant::Tsptw, 5, Difficulty::Easy, 99), 0, 2, crate::Exec::Sequential).unwrap();
        let grid = AblationGrid {
            samples: vec![1, 3],
            ..Default::default()
        };
        let eval = EvalConfig {
            aug8: false,
            ..Default::default()
        };
        let cells = ablate(&cfg, &grid, &DataSource::Generate(cfg.data.clone()), &data, None, &eval);
        assert!(matches!(cells[0].status, CellStatus::Failed(_)));
        assert!(cells[1].metrics().is_some());
        let table = ablation_csv(&cells).unwrap();
        assert!(table.contains("N=1,failed,failed,failed"));
    }
}
