//! Period-based continual transfer: experiment plans, the pretraining stream, the
//! baseline recipes and the comparison report.
//!
//! Timeline: the stream has `periods + 1` periods. Period `p` is evaluated on its leading
//! `eval_fraction` of target records (boundary `p`) before any model trains on it. Transfer
//! methods deploy at the start of period `t0` from models trained through `t0 - 1` and are
//! reported at boundaries `t0+1 ..= periods`.

mod plan;
mod report;
mod run;

use thiserror::Error;

use crate::features::FeatureError;
use crate::metrics::MetricError;
use crate::model::ModelError;

pub use plan::{default_methods, ExperimentPlan, MethodKind, MethodSpec, TransferMode};
pub use report::{
    compare_report, median, outcome_rows, parse_results_csv, results_csv, Report, ResultRow, SummaryRow, WinLoss,
    RESULTS_HEADER, SUMMARY_HEADER,
};
pub use run::{
    evaluate, model_rng, run_method, run_pretrain, train_period, BoundaryMetrics, Dataset, MethodOutcome, Pretrained,
};

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("source tower changed while training period {0}")]
    FrozenViolation(usize),
}

impl ContinualError {
    /// Whether the failure came from a non-finite value rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ContinualError::Model(ModelError::NonFinite(_))
                | ContinualError::Model(ModelError::Kernel(crate::error::KernelError::NonFinite { .. }))
                | ContinualError::Metric(MetricError::NonFinite(_))
        )
    }
}

/// Runs pretraining and every method of the plan for one seed.
pub fn run_seed(
    plan: &ExperimentPlan,
    data: &Dataset,
    seed: u64,
) -> Result<(Pretrained, Vec<MethodOutcome>), ContinualError> {
    let pre = run_pretrain(plan, data, seed)?;
    let outcomes = plan
        .methods
        .iter()
        .map(|&spec| run_method(spec, plan, data, &pre, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((pre, outcomes))
}

/// Results of every method and seed, ordered by seed then plan method order.
pub fn run_plan(plan: &ExperimentPlan, threads: usize) -> Result<Vec<ResultRow>, ContinualError> {
    plan.validate()?;
    let mut rows = Vec::new();
    for &seed in &plan.seeds {
        let data = Dataset::load(plan, seed, threads)?;
        let (_, outcomes) = run_seed(plan, &data, seed)?;
        rows.extend(outcomes.iter().flat_map(outcome_rows));
    }
    Ok(rows)
}
