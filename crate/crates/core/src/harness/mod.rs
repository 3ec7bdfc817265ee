//! Training loops, evaluation protocols and reports.

pub mod config;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod report;
pub mod train;

pub use config::TrainConfig;
pub use data::{
    augment_batch, build_dataset, build_dataset_from_streams, identity_batches, shuffled_batches,
    Augment, Dataset, ItemMeta, Sample,
};
pub use eval::{
    evaluate_image_quality, evaluate_reid, rank_metrics, retrieval_attack, EvalReport, EvalSet,
    ImageQuality, RankMetrics,
};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome};
pub use report::{emit_report, parse_report, Report, Table};
pub use train::{
    joint_objective, joint_step, train_attacker, train_inverter, train_joint, train_reid,
    LossBreakdown,
};
