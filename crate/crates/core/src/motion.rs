//! Mobility and measurement-noise models.
//!
//! Nodes follow a random waypoint pattern inside a bounded rectangle: draw a
//! step length and a turn angle, walk the segment, repeat. Headings whose
//! segment would leave the region are rejected and redrawn, so positions stay
//! interior for the whole run. Measurement noise is zero-mean and
//! magnitude-proportional, uniform by default.

use crate::geometry::fold_angle;
use crate::vec2::Vec2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Axis-aligned rectangular region of motion (region units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Option<Self> {
        if x_max > x_min && y_max > y_min {
            Some(Region {
                x_min,
                x_max,
                y_min,
                y_max,
            })
        } else {
            None
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x > self.x_min && p.x < self.x_max && p.y > self.y_min && p.y < self.y_max
    }

    /// Uniform point strictly inside the region.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec2 {
        Vec2::new(
            rng.random_range(self.x_min..self.x_max),
            rng.random_range(self.y_min..self.y_max),
        )
    }
}

/// One motion decision: rotate by `scan_angle` (to face a contact), then by
/// `turn_angle`, then travel `step_len` along the new heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionCommand {
    pub step_len: f64,
    pub turn_angle: f64,
    pub scan_angle: f64,
}

/// Noise distribution selector for sensitivity studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    /// Zero-mean uniform on +-(fraction * magnitude).
    Uniform,
    /// Zero-mean normal with sigma = fraction * magnitude.
    Gaussian,
}

/// Magnitude-proportional measurement noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-component motion noise as a fraction of the motion magnitude.
    pub motion_noise_frac: f64,
    /// Range noise as a fraction of the true distance.
    pub range_noise_frac: f64,
    pub distribution: NoiseDistribution,
}

impl NoiseConfig {
    pub const NOISELESS: NoiseConfig = NoiseConfig {
        motion_noise_frac: 0.0,
        range_noise_frac: 0.0,
        distribution: NoiseDistribution::Uniform,
    };

    pub fn is_noiseless(&self) -> bool {
        self.motion_noise_frac == 0.0 && self.range_noise_frac == 0.0
    }
}

/// Waypoint draw parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    /// Maximum step length; steps are uniform on [0, max_step].
    pub max_step: f64,
}

/// True pose of a node: position plus heading measured from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

/// Draw a waypoint step: length uniform on [0, max_step], turn angle uniform
/// on [0, 2pi). The scan angle is set by the contact logic, not drawn here.
pub fn draw_motion<R: Rng>(rng: &mut R, params: &MotionParams) -> MotionCommand {
    let step_len = if params.max_step > 0.0 {
        rng.random_range(0.0..=params.max_step)
    } else {
        0.0
    };
    let turn_angle = rng.random_range(0.0..TAU);
    MotionCommand {
        step_len,
        turn_angle,
        scan_angle: 0.0,
    }
}

/// Execute a motion command from `pose`, redrawing the turn angle until the
/// endpoint stays inside `region`. Returns the new pose, the command as
/// accepted (its turn angle is the one actually executed) and the exact
/// displacement.
pub fn apply_motion<R: Rng>(
    pose: &Pose,
    cmd: MotionCommand,
    region: &Region,
    rng: &mut R,
) -> (Pose, MotionCommand, Vec2) {
    debug_assert!(region.contains(pose.position), "pose left the region");
    let mut accepted = cmd;
    loop {
        let heading = fold_angle(pose.heading + accepted.scan_angle + accepted.turn_angle);
        let delta = accepted.step_len * Vec2::unit(heading);
        let endpoint = pose.position + delta;
        if region.contains(endpoint) {
            let new_pose = Pose {
                position: endpoint,
                heading,
            };
            return (new_pose, accepted, delta);
        }
        accepted.turn_angle = rng.random_range(0.0..TAU);
    }
}

fn draw_noise<R: Rng>(half_width: f64, distribution: NoiseDistribution, rng: &mut R) -> f64 {
    if half_width <= 0.0 {
        return 0.0;
    }
    match distribution {
        NoiseDistribution::Uniform => rng.random_range(-half_width..=half_width),
        NoiseDistribution::Gaussian => Normal::new(0.0, half_width)
            .expect("sigma is positive and finite")
            .sample(rng),
    }
}

/// Accelerometer model: the true displacement plus per-component zero-mean
/// noise bounded by `motion_noise_frac` of the displacement magnitude.
/// Bit-exact identity when the fraction is zero.
pub fn noisy_motion<R: Rng>(true_delta: Vec2, cfg: &NoiseConfig, rng: &mut R) -> Vec2 {
    if cfg.motion_noise_frac == 0.0 {
        return true_delta;
    }
    let half_width = cfg.motion_noise_frac * true_delta.norm();
    Vec2::new(
        true_delta.x + draw_noise(half_width, cfg.distribution, rng),
        true_delta.y + draw_noise(half_width, cfg.distribution, rng),
    )
}

/// Ranging model: the true distance scaled by (1 + u) with u zero-mean and
/// bounded by `range_noise_frac`, clamped to stay nonnegative. Bit-exact
/// identity when the fraction is zero.
pub fn noisy_range<R: Rng>(true_d: f64, cfg: &NoiseConfig, rng: &mut R) -> f64 {
    if cfg.range_noise_frac == 0.0 {
        return true_d;
    }
    let u = draw_noise(cfg.range_noise_frac, cfg.distribution, rng);
    (true_d * (1.0 + u)).max(0.0)
}
