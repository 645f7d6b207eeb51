use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::FactoryError;

/// Physical dimensions shared by every robot in a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotGeometry {
    /// Edge length of the icosahedron body, meters.
    pub body_edge_length: f64,
    /// Body mass, kg.
    pub body_mass: f64,
    /// Inner, middle, outer link lengths, meters.
    pub link_lengths: [f64; 3],
    /// Square cross-section side of every link, meters.
    pub link_width: f64,
    /// Link masses, kg.
    pub link_masses: [f64; 3],
    /// Symmetric joint bound, radians.
    pub joint_limit: f64,
    /// Angle between neighbouring mounting rotations, radians.
    pub attachment_rotation_step: f64,
    /// Fixed bend built into each mounting bracket about the joint axis, radians.
    pub link_bends: [f64; 3],
}

impl Default for RobotGeometry {
    fn default() -> Self {
        RobotGeometry {
            body_edge_length: 0.08,
            body_mass: 0.3,
            link_lengths: [0.06, 0.08, 0.10],
            link_width: 0.02,
            link_masses: [0.05; 3],
            joint_limit: PI / 2.0,
            attachment_rotation_step: PI / 6.0,
            link_bends: [0.0, PI / 4.0, PI / 4.0],
        }
    }
}

impl RobotGeometry {
    pub fn validate(&self) -> Result<(), FactoryError> {
        let positive = [self.body_edge_length, self.body_mass, self.link_width, self.joint_limit]
            .into_iter()
            .chain(self.link_lengths)
            .chain(self.link_masses);
        for v in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FactoryError::Geometry(format!("expected a positive size, got {v}")));
            }
        }
        if (self.attachment_rotation_step * 12.0 - 2.0 * PI).abs() > 1e-9 {
            return Err(FactoryError::Geometry(
                "12 attachment rotations must cover a full turn".into(),
            ));
        }
        Ok(())
    }

    pub fn body_circumradius(&self) -> f64 {
        self.body_edge_length * crate::codec::icosahedron::circumradius_per_edge()
    }
}
