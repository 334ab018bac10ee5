//! Sensor and motion emulation: ToF matrices, odometry, UWB.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::world::World;
use crate::exploration::VelocityCommand;
use crate::geometry::Pose2;
use crate::scan::{SensorMatrix, SensorRig, COLUMNS, ROWS, SENSORS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Per simulation step, metres.
    pub odom_xy_sigma: f64,
    /// Per simulation step, radians.
    pub odom_yaw_sigma: f64,
    /// Gyro bias, rad/s.
    pub odom_yaw_bias: f64,
    /// Per pixel, millimetres.
    pub depth_sigma: f64,
    pub depth_dropout: f64,
    pub uwb_sigma: f64,
    pub msg_loss: f64,
    /// UWB ranging fails when the line of sight crosses more walls than this.
    pub uwb_max_walls: Option<usize>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            odom_xy_sigma: 0.001,
            odom_yaw_sigma: 0.0005,
            odom_yaw_bias: 0.005,
            depth_sigma: 10.0,
            depth_dropout: 0.05,
            uwb_sigma: 0.05,
            msg_loss: 0.02,
            uwb_max_walls: None,
        }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel {
            odom_xy_sigma: 0.0,
            odom_yaw_sigma: 0.0,
            odom_yaw_bias: 0.0,
            depth_sigma: 0.0,
            depth_dropout: 0.0,
            uwb_sigma: 0.0,
            msg_loss: 0.0,
            uwb_max_walls: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let sig = [
            ("odom_xy_sigma", self.odom_xy_sigma),
            ("odom_yaw_sigma", self.odom_yaw_sigma),
            ("depth_sigma", self.depth_sigma),
            ("uwb_sigma", self.uwb_sigma),
        ];
        for (name, v) in sig {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("noise.{name} must be non-negative"));
            }
        }
        if !self.odom_yaw_bias.is_finite() {
            return Err("noise.odom_yaw_bias must be finite".into());
        }
        for (name, v) in [("depth_dropout", self.depth_dropout), ("msg_loss", self.msg_loss)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("noise.{name} must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma is positive").sample(rng)
    } else {
        0.0
    }
}

fn noisy_pixel<R: Rng + ?Sized>(range_m: Option<f64>, noise: &NoiseModel, rig: &SensorRig, rng: &mut R) -> Option<f64> {
    let r = range_m?;
    if noise.depth_dropout > 0.0 && rng.random_bool(noise.depth_dropout) {
        return None;
    }
    let mm = r * 1000.0 + gauss(rng, noise.depth_sigma);
    rig.is_valid_depth(mm).then_some(mm)
}

/// Full 8x8 matrices of all sensors for a planar world: every row sees the
/// same wall distance, with independent pixel noise and dropout.
pub fn sense_matrices<R: Rng + ?Sized>(
    world: &World,
    pose: &Pose2,
    rig: &SensorRig,
    noise: &NoiseModel,
    rng: &mut R,
) -> [SensorMatrix; SENSORS] {
    let mut out = [[[None; COLUMNS]; ROWS]; SENSORS];
    for (s, m) in out.iter_mut().enumerate() {
        for c in 0..COLUMNS {
            let bearing = pose.psi + rig.bearing(s, c);
            let hit = world.raycast((pose.x, pose.y), bearing, rig.max_range);
            for row in m.iter_mut() {
                row[c] = noisy_pixel(hit, noise, rig, rng);
            }
        }
    }
    out
}

/// Matrices with per-row elevation against walls of finite height seen from
/// `altitude`. Rays passing over a wall or reaching the floor first are invalid.
pub fn sense_matrices_3d<R: Rng + ?Sized>(
    world: &World,
    pose: &Pose2,
    altitude: f64,
    rig: &SensorRig,
    noise: &NoiseModel,
    rng: &mut R,
) -> [SensorMatrix; SENSORS] {
    let mut out = [[[None; COLUMNS]; ROWS]; SENSORS];
    for (s, m) in out.iter_mut().enumerate() {
        for c in 0..COLUMNS {
            let bearing = pose.psi + rig.bearing(s, c);
            let horiz = world.raycast((pose.x, pose.y), bearing, rig.max_range);
            for (r, row) in m.iter_mut().enumerate() {
                let elev = rig.row_elevation(r);
                let range = horiz.and_then(|d| {
                    let z = altitude + d * elev.tan();
                    (0.0..=world.wall_height).contains(&z).then(|| d / elev.cos())
                });
                row[c] = noisy_pixel(range.filter(|r| *r <= rig.max_range), noise, rig, rng);
            }
        }
    }
    out
}

/// Pose reached by holding a body-frame twist for `dt`.
pub fn twist_motion(cmd: &VelocityCommand, dt: f64) -> Pose2 {
    let th = cmd.omega * dt;
    let (vx, vy) = (cmd.v_x * dt, cmd.v_y * dt);
    let (a, b) = if th.abs() < 1e-9 {
        (1.0 - th * th / 6.0, th / 2.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / th)
    };
    Pose2::new(a * vx - b * vy, b * vx + a * vy, th)
}

/// Odometry reading of a true body-frame motion over one step.
pub fn odometry_reading<R: Rng + ?Sized>(truth: &Pose2, dt: f64, noise: &NoiseModel, rng: &mut R) -> Pose2 {
    Pose2::new(
        truth.x + gauss(rng, noise.odom_xy_sigma),
        truth.y + gauss(rng, noise.odom_xy_sigma),
        truth.psi + noise.odom_yaw_bias * dt + gauss(rng, noise.odom_yaw_sigma),
    )
}

/// Distance between two positions as a UWB pair would measure it.
pub fn uwb_range<R: Rng + ?Sized>(
    world: &World,
    a: (f64, f64),
    b: (f64, f64),
    noise: &NoiseModel,
    rng: &mut R,
) -> Option<f64> {
    if noise.msg_loss > 0.0 && rng.random_bool(noise.msg_loss) {
        return None;
    }
    if let Some(max) = noise.uwb_max_walls {
        if world.walls_between(a, b) > max {
            return None;
        }
    }
    Some(((a.0 - b.0).hypot(a.1 - b.1) + gauss(rng, noise.uwb_sigma)).max(0.0))
}
