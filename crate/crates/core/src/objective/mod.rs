//! Training objective: pair sampling, losses, optimiser and the loop.

mod adam;
mod loss;
mod pairs;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    bpr_gap_grad, bpr_loss, dcor, dcor_with_grad, distance_correlation, distance_correlation_with_grad,
    joint_loss, DisDirection, LossWeights,
};
pub use pairs::{build_user_pairs, sample_o1, sample_o2, PairKind, PairPlan, TrainingPair, UserBatch};
pub use train::{
    batch_objective, dis_applies, format_train_log, train, train_from, write_train_log, BatchLoss, EpochLog,
    TrainConfig, TrainOutcome,
};
