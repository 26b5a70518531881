//! Training, evaluation, ablation grids and checkpoint persistence.

mod ablate;
mod checkpoint;
mod eval;
mod gradcheck;
mod optim;
mod train;

pub use ablate::{ablate, ablation_csv, AblationGrid, CellResult, CellSettings, CellStatus};
pub use checkpoint::{load_checkpoint, params_hash, save_checkpoint, warm_start, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use eval::{
    aggregate, evaluate, instance_record, oracle_optima, summary_csv, write_records_jsonl, EvalConfig, EvalOutcome,
    InstanceRecord,
};
pub use gradcheck::{grad_check, standard_cases, GradCheckCase, GradCheckReport};
pub use optim::{Adam, AdamConfig};
pub use train::{train, train_from, warm_start_epochs, COLD_START_EPOCHS, DataSource, TrainConfig, TrainOutcome};

use crate::generators::GenError;
use crate::losses::LossError;
use crate::policy::PolicyError;
use crate::problems::ProblemError;
use crate::ranking::RankError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable that overrides configured seeds.
pub const SEED_ENV: &str = "UCPO_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("non-finite {what} at step {step}, instance {instance}: {detail}")]
    NonFinite {
        what: &'static str,
        step: usize,
        instance: usize,
        detail: String,
    },
    #[error("invalid config: {0}")]
    Config(String),
}

/// Reads [`SEED_ENV`]; `None` when unset, an error when unparsable.
pub fn seed_override() -> Result<Option<u64>, HarnessError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// One row of a training history or an evaluation summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    /// Fraction of instances without a feasible sample.
    pub infeasible_rate: f64,
    /// Mean best feasible objective over instances that have one.
    pub mean_best_feasible_objective: Option<f64>,
    /// Mean gap (percent) over instances with a feasible sample and a known
    /// optimum.
    pub mean_gap_pct: Option<f64>,
    pub loss_total: f64,
    pub loss_dual: f64,
    pub loss_margin: f64,
    pub loss_primal: f64,
    pub instances: usize,
    /// Instances whose gap could not be computed for lack of an optimum.
    pub missing_optimum: usize,
    pub wallclock_s: f64,
}

impl MetricsRecord {
    /// Same record with the timing field cleared, for determinism checks.
    pub fn untimed(&self) -> Self {
        Self {
            wallclock_s: 0.0,
            ..self.clone()
        }
    }
}
