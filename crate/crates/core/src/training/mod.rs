//! Optimizers, learning-rate schedules, augmentation, training loops and
//! checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod optim;
pub mod recipe;
pub mod schedule;
pub mod synthetic;
pub mod train;

pub use augment::{
    apply_augment, augment_classifier, augment_sod, fit_resolution, resize_bilinear, resize_nearest, AugmentParams,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{adam_step, sgd_momentum_step, Optimizer, OptimizerConfig, OptimizerKind, ParamState};
pub use recipe::{Recipe, RECIPE_VERSION};
pub use schedule::{schedule_lr, ScheduleKind, ScheduleSpec};
pub use synthetic::{synthetic_cifar, synthetic_sod};
pub use train::{
    evaluate_classifier, predict_sod, top_k_correct, train_classifier, train_sod, with_threads, Accuracy,
    ClassifierTrainReport, SodTrainReport,
};
