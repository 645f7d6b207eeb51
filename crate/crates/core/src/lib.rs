//! Procedurally generated legged robots built on an icosahedron body,
//! motor-babbling data collection in a bundled rigid-body simulator, and a
//! classifier that recovers a robot's configuration code from its own
//! proprioceptive trajectories.

pub mod codec;
pub mod config;
pub mod dataset;
pub mod factory;
pub mod net;
pub mod sim;
pub mod train;

pub use codec::{ConfigSpace, FullConfigCode, HalfConfigCode, LegPatternIndex, MirrorTable};
pub use config::{PipelineConfig, Seeds};
pub use dataset::{DatasetManifest, EpisodeStore, SampleWindow, Split, SplitConfig};
pub use factory::{FactoryConfig, RobotFamily, RobotGeometry, RobotRecord};
pub use net::{Checkpoint, ConfigLabels, EncoderConfig, LossConfig, MorphologyNet, Variant};
pub use sim::{CollectConfig, Episode, GaitParams, PhysicsAdapter, RigidBodySim, StateFrame, Trajectory};
pub use train::{EvalReport, MetricsReport, TrainConfig};
