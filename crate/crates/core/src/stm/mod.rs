//! State transition model: an LSTM stack with a mixture-density head trained
//! on expert trajectories with an auto-conditioning schedule, and rolled out
//! by feeding its own predictions back as inputs.

mod checkpoint;
mod model;
mod rollout;
mod state;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{load_versioned, write_atomically};
pub use model::{
    conditioning_mask, Conditioning, Head, HeadKind, HeadOutput, ScheduleConfig, StmConfig, StmModel, Variant,
};
pub use rollout::{rollout, start_state, RolloutOptions};
pub use state::{
    append_trajectory, decode_input, encode_input, read_dataset, write_dataset, GoalChange, Normalization, State,
    StateLayout, Trajectory, STD_FLOOR,
};
pub use train::{recompute_feedback, train, train_with_observer, LossRecord};
