//! Evaluation: one-vs-rest metrics, percentile bootstrap intervals, and the
//! accuracy-versus-compute report.

mod bootstrap;
mod metrics;
mod report;

pub use bootstrap::bootstrap_ci;
pub use metrics::{evaluate_metrics, ClassMetrics, Metrics};
pub use report::{
    emit_report, render_svg, tradeoff_csv, tradeoff_table, Estimate, MetricsReport, TradeoffRow, ABLATION_FILE,
    EVAL_DIR, REPORT_DIR,
};
