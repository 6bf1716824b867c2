//! Initialisation, optimisation, augmentation, evaluation and the staged
//! training schedule.

mod augment;
mod config;
mod eval;
mod init;
mod metrics;
mod noise;
mod sgd;
mod stages;

pub use augment::{augment_batch, augment_sample, Augment};
pub use config::{
    parse_entries, parse_override, DataSource, LrSchedule, Preset, TrainConfig, CONFIG_KEYS,
};
pub use eval::{evaluate, evaluate_topk, topk_misses, EvalOptions, EvalReport, ScoreView};
pub use init::{seeded_rng, substream, xavier_bound, xavier_init, SeededRng};
pub use metrics::{parse_metrics, EpochMetrics, MetricsLog, METRICS_HEADER};
pub use noise::{add_gaussian_noise, gaussian_perturbation};
pub use sgd::{sgd_update, SgdState};
pub use stages::{eval_options, run_stage, stage_objective, step_gradients, StepOutput};
