//! Critic, transport-map and dual updates, and the loop that interleaves them.

mod actor;
mod critic;
mod dual;
mod refine;
mod run;

pub use actor::{
    actor_step, actor_update, behavioral_batch, local_metric, ActorOptimizer, ActorStats, MetricConfig, MetricKind,
};
pub use critic::{critic_update, ActionValue, Critic, DEFAULT_GAMMA, DEFAULT_TAU};
pub use dual::{
    dual_update, DualMode, DualState, DEFAULT_CONSTRAINT_EPSILON, DEFAULT_DUAL_STEP, DEFAULT_LAMBDA,
};
pub use refine::{closed_form_refine, optimality_gap, OptimalityGap};
pub use run::{
    evaluate_behavioral, evaluate_refined, init_behavior, log_to_jsonl, pretrain_flow, run_fidec, BehaviorField,
    BehaviorPolicy, LogRecord, QSource, TrainConfig, TrainOutcome, Trainer,
};
