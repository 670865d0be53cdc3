//! Optimisation loop: learning-rate schedule, Adam, batching with
//! augmentation, multitask loss combination, evaluation and checkpoints.

pub mod evaluate;
pub mod optimizer;
pub mod schedule;
pub mod trainer;

pub use evaluate::{
    evaluate, evaluate_predictor, evaluate_samples, EvalReport, ModelPredictor, Predictor,
};
pub use optimizer::Adam;
pub use schedule::lr_at;
pub use trainer::{
    train, train_samples, EvalRecord, RunDir, StepRecord, TrainConfig, TrainHistory, Trainer,
};
