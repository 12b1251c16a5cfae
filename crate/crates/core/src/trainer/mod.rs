//! Composition of the full training objective, the optimization loop, and
//! the evaluation and analysis tooling.

mod analysis;
mod config;
mod metrics;
mod model;
mod train;

pub use analysis::{find_correspondences, saliency_backtrace};
pub use config::TrainConfig;
pub use metrics::{
    default_thresholds, eval_iou, eval_l1, evaluate, evaluate_instance, evaluate_parallel, iou_at,
    write_loss_trace_csv, write_metrics_csv, write_metrics_json, ClassMetrics,
    InstanceEval, MetricsReport, SweepEntry,
};
pub use model::{forward_instance, forward_representation, ForwardOutputs, Model};
pub use train::{run_training, train_step, LossBreakdown, TraceRow, TrainingRun};
