//! Retrieval metrics, stage-wise evaluation, budgeted exit curves and the
//! report files written from them.

pub mod budget;
pub mod metrics;
pub mod report;
pub mod stagewise;

pub use budget::{allocate, budget_curve, budget_grid, exit_report, BudgetPoint, CostModel, ExitReport, COST_TOLERANCE};
pub use metrics::{average_precision, cmc_map, RetrievalMetrics};
pub use report::{budget_csv, budget_gnuplot, decision_log, exit_report_csv, parse_decision_log, stagewise_csv};
pub use stagewise::{evaluate_queries, stagewise_eval, EvalOptions, Evaluation, QuerySet, StageMetrics, StageOutcome};
