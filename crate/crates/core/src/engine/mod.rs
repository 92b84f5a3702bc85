//! Optimizers, the two-phase training loop, evaluation, ablations and
//! charts.

mod ablation;
mod config;
mod eval;
mod model;
mod optim;
mod plot;
mod runlog;
mod train;

pub use ablation::{parse_suite, run_ablation, AblationRow, AblationRun, AblationTable, RunObserver, Variant};
pub use config::{OptimizerConfig, OptimizerKind, Precision, Profile, TrainConfig};
pub use eval::{evaluate, tau_sweep};
pub use model::Model;
pub use optim::{lr_at_epoch, lr_schedule, pretrain_lr_at_epoch, Optimizer};
pub use plot::{easiness_trace_chart, line_chart_svg, run_log_charts, Series};
pub use runlog::{RunLog, RunLogRow};
pub use train::{
    class_weights_for, easiness_for, epoch_order, head_config_for, order_metrics, pretrain, pretrain_model,
    run_training, train_model, training_mask, Pretrained, TrainOutcome, Trainer,
};
