use std::f64::consts::{FRAC_PI_4, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adapter::JOINT_COUNT;

/// Sub-steps per babbling cycle.
pub const TAU: usize = 16;

/// Phase slot (right-hind, right-front, left-front, left-hind) used by each
/// full-code leg (right-hind, right-front, left-hind, left-front).
pub const PHASE_SLOT_OF_LEG: [usize; 4] = [0, 1, 3, 2];

/// Sine-gait parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    /// Amplitude per within-leg joint rank (inner, middle, outer).
    pub amplitude: [f64; 3],
    /// Phase per leg: right-hind, right-front, left-front, left-hind.
    pub phase: [f64; 4],
    /// Offset per joint, full-code joint order.
    pub theta0: [f64; JOINT_COUNT],
}

/// `A_i · sin((t mod τ)/τ · 2π + φ_j) + θ_ij`, clamped to `±joint_limit`.
pub fn sine_gait_targets(params: &GaitParams, t: usize, joint_limit: f64) -> [f64; JOINT_COUNT] {
    let s = (t % TAU) as f64 / TAU as f64 * 2.0 * PI;
    let mut out = [0.0; JOINT_COUNT];
    for leg in 0..4 {
        let phi = params.phase[PHASE_SLOT_OF_LEG[leg]];
        let wave = (s + phi).sin();
        for i in 0..3 {
            let k = leg * 3 + i;
            out[k] = (params.amplitude[i] * wave + params.theta0[k]).clamp(-joint_limit, joint_limit);
        }
    }
    out
}

/// Uniform sampling ranges for babbling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitRanges {
    pub amplitude: (f64, f64),
    pub phase: (f64, f64),
    pub theta0: (f64, f64),
}

impl Default for GaitRanges {
    fn default() -> Self {
        GaitRanges { amplitude: (0.0, FRAC_PI_4), phase: (0.0, 2.0 * PI), theta0: (-FRAC_PI_4, FRAC_PI_4) }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl GaitRanges {
    pub fn validate(&self) -> Result<(), String> {
        for (name, (lo, hi)) in [("amplitude", self.amplitude), ("phase", self.phase), ("theta0", self.theta0)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(format!("{name} range [{lo}, {hi}] is empty"));
            }
        }
        if self.amplitude.0 < 0.0 {
            return Err("amplitude must be non-negative".into());
        }
        Ok(())
    }

    pub fn sample_theta0<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; JOINT_COUNT] {
        let mut out = [0.0; JOINT_COUNT];
        for v in &mut out {
            *v = uniform(rng, self.theta0);
        }
        out
    }

    /// Fresh amplitudes and phases around a fixed offset vector.
    pub fn sample_cycle<R: Rng + ?Sized>(&self, rng: &mut R, theta0: [f64; JOINT_COUNT]) -> GaitParams {
        let mut amplitude = [0.0; 3];
        for a in &mut amplitude {
            *a = uniform(rng, self.amplitude);
        }
        let mut phase = [0.0; 4];
        for p in &mut phase {
            *p = uniform(rng, self.phase);
        }
        GaitParams { amplitude, phase, theta0 }
    }
}
