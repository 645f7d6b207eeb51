//! Physics-adapter contract, the bundled backend, the sine gait, and
//! episode collection.

pub mod adapter;
pub mod collect;
pub mod engine;
pub mod gait;

pub use adapter::{is_toppled, BasePose, PhysicsAdapter, SimError, StateFrame, JOINT_COUNT};
pub use collect::{
    collect_episode, collect_family, run_cycle, CollectConfig, CollectError, CollectionStats, CycleOutcome,
    Episode, EpisodeMeta, EpisodeSink, Trajectory, CHANNELS, CHANNEL_NAMES,
};
pub use engine::{EngineConfig, RigidBodySim};
pub use gait::{sine_gait_targets, GaitParams, GaitRanges, TAU};
