//! NE and NE++ encode-process-decode executors.

mod checkpoint;
mod model;
mod params;
mod rollout;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{Bound, GraphContext, StepOutput};
pub use params::{
    decoder_width, init_params, input_width, Arch, ExecutorParams, ModelConfig, ParamId, ParamStore, DEFAULT_HIDDEN,
    EDGE_FEATURES, MULTITASK_NEPP_HIDDEN,
};
pub use rollout::{
    features, rollout, rollout_free, rollout_teacher_forced, Budget, FreeRun, Mode, NaExample, RolloutRecord, Selection,
    SMOOTH_L1_BETA,
};
