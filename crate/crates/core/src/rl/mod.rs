//! Conservative Q-learning with a small fully connected network, plain SGD
//! on public data and expert-level DP-SGD on private data.

mod cql;
mod dpsgd;
mod net;
mod train;

pub use cql::{cql_example, cql_loss_and_grad, cql_penalty, featurize, q_forward, FeatTransition};
pub use dpsgd::{clip_gradient, dpsgd_step, l2_norm, sample_expert_batch, DpStepStats, ExpertPools};
pub use net::{sgd_step, CheckpointManifest, QNet};
pub use train::{
    evaluate, greedy_action, selective_train, Accountant, Accounting, AutoTag, CurveRow, EvalReport, PrivateStepLog,
    SigmaSpec, TrainConfig, TrainHooks, TrainOutcome, TrainStats, DEFAULT_EVAL_EPISODES,
};
