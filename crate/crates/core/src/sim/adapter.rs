use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Actuated joints per robot.
pub const JOINT_COUNT: usize = 12;
/// Values in one proprioceptive state.
pub const STATE_CHANNELS: usize = 18;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot load robot: {0}")]
    Load(String),
    #[error("no robot loaded")]
    NotLoaded,
    #[error("simulation diverged: {0}")]
    Diverged(String),
}

/// Body position and roll/pitch/yaw.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BasePose {
    pub position: [f64; 3],
    pub euler: [f64; 3],
}

/// Proprioceptive state: body position, body roll/pitch/yaw and joint angles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateFrame {
    pub base_position: [f64; 3],
    pub base_euler: [f64; 3],
    pub joint_angles: [f64; JOINT_COUNT],
}

impl StateFrame {
    /// `[x, y, z, roll, pitch, yaw, q1..q12]`.
    pub fn to_channels(&self) -> [f64; STATE_CHANNELS] {
        let mut out = [0.0; STATE_CHANNELS];
        out[..3].copy_from_slice(&self.base_position);
        out[3..6].copy_from_slice(&self.base_euler);
        out[6..].copy_from_slice(&self.joint_angles);
        out
    }
}

/// Roll or pitch beyond a quarter turn.
pub fn is_toppled(euler: &[f64; 3]) -> bool {
    euler[0].abs() > FRAC_PI_2 || euler[1].abs() > FRAC_PI_2
}

/// What the collector and the validity filter need from a physics backend.
///
/// `step` advances one control-rate tick (1/240 s for the bundled engine) and
/// must be deterministic for a fixed configuration.
pub trait PhysicsAdapter {
    fn load(&mut self, urdf: &str) -> Result<(), SimError>;
    fn reset(&mut self, pose: &BasePose, joints: &[f64; JOINT_COUNT]) -> Result<(), SimError>;
    fn set_targets(&mut self, targets: &[f64; JOINT_COUNT]);
    fn step(&mut self) -> Result<(), SimError>;
    fn read_state(&self) -> StateFrame;
    /// Contact between two of the robot's own links.
    fn self_collision(&self) -> bool;
    /// Body height that puts the lowest point of the robot just above the
    /// ground for the given orientation and joint angles.
    fn resting_height(&self, euler: &[f64; 3], joints: &[f64; JOINT_COUNT]) -> Result<f64, SimError>;

    fn toppled(&self) -> bool {
        is_toppled(&self.read_state().base_euler)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topple_predicate_on_injected_orientations() {
        let eps = 1e-9;
        assert!(!is_toppled(&[0.0, 0.0, 3.0]));
        assert!(!is_toppled(&[FRAC_PI_2 - eps, 0.0, 0.0]));
        assert!(is_toppled(&[FRAC_PI_2 + eps, 0.0, 0.0]));
        assert!(is_toppled(&[-FRAC_PI_2 - eps, 0.0, 0.0]));
        assert!(is_toppled(&[0.0, FRAC_PI_2 + eps, 0.0]));
        assert!(is_toppled(&[0.0, -FRAC_PI_2 - eps, 0.0]));
        assert!(!is_toppled(&[1.0, -1.0, -3.1]));
        assert!(is_toppled(&[std::f64::consts::PI, 0.0, 0.0]));
    }
}
