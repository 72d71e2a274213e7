//! Delay-compensated imitation learning.
//!
//! - [`trajectory`]: demonstration data, timing arithmetic and the dataset file format.
//! - [`compress`]: rewrites zero-delay demonstrations so chunked execution with an
//!   inference delay still arrives on schedule.
//! - [`diffusion`]: a small delay-conditioned denoising diffusion policy.
//! - [`envs`]: desk-scale dynamic tasks with scripted experts.
//! - [`exec`]: closed-loop simulation of synchronous chunked execution under delay.
//! - [`config`]: `key = value` configuration files.

// Validation uses negated comparisons on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compress;
pub mod config;
pub mod diffusion;
pub mod envs;
pub mod error;
pub mod exec;
pub mod trajectory;

pub use compress::{
    adjusted_length, build_delay_dataset, choose_integer_length, compress, skip_amount,
    CompressedTrajectory, DelayDataset, LengthChoice, SkipAmount,
};
pub use config::KvConfig;
pub use diffusion::{
    condition_augment, forward_diffuse, load_model, make_schedule, save_model, train, Conditioning,
    DiffusionModel, DiffusionPolicy, NoiseSchedule, TrainConfig,
};
pub use envs::{expert_demo, EnvState, TaskKind, TaskSpec};
pub use error::{Error, Result};
pub use exec::{
    measure_delay, run_episode, sweep, EpisodeResult, ExecMode, Method, Policy, ReplayPolicy,
    SweepRow,
};
pub use trajectory::{
    dp_execution_time, load_dataset, save_dataset, target_duration, validate, Dataset,
    LabeledTrajectory, Normalization, TimingConfig, TrajMeta, Trajectory, Violation,
};
