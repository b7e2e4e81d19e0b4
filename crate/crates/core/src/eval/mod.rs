//! Offline metrics, closed-loop trials and report files.

pub mod closed_loop;
pub mod metrics;
pub mod report;

pub use closed_loop::{
    closed_loop_eval, Agent, ClosedLoopConfig, SuccessTable, TaskSuccess, TrialLog,
};
pub use metrics::{
    build_report, cosine, direction_metrics, endpoint_error, evaluate_offline, phase_accuracy,
    rmse_report, DirectionMetrics, MetricReport, PhaseAccuracy, RmseReport, MOVING_EPS,
};
pub use report::{read_report, render_table, write_report, Report};
