//! Vehicle state, action mapping, speed controller and kinematic bicycle model.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{normalize_angle, OrientedRect, Pose, Vec2};

pub const MAX_SPEED: f64 = 6.0;
pub const MAX_STEER: f64 = FRAC_PI_4;

pub type AgentId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub agent_id: AgentId,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    /// Ground-truth social value orientation in `[0, 1]`.
    pub svo: f64,
}

impl VehicleState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.x, self.y, self.heading)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn footprint(&self) -> OrientedRect {
        OrientedRect {
            center: self.position(),
            heading: self.heading,
            length: self.length,
            width: self.width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSetpoint {
    pub target_speed: f64,
    pub steering_angle: f64,
}

/// Maps a normalized action in `[-1, 1]²` to a speed/steering setpoint.
pub fn map_action(a: [f64; 2]) -> Result<ControlSetpoint> {
    if !a.iter().all(|v| (-1.0..=1.0).contains(v)) {
        return Err(SimError::InputDomain(format!("action {a:?} outside [-1, 1]^2")));
    }
    Ok(ControlSetpoint {
        target_speed: 3.0 * (a[0] + 1.0),
        steering_angle: MAX_STEER * a[1],
    })
}

/// Inverse of [`map_action`].
pub fn unmap_action(sp: ControlSetpoint) -> Result<[f64; 2]> {
    if !(0.0..=MAX_SPEED).contains(&sp.target_speed) || !(-MAX_STEER..=MAX_STEER).contains(&sp.steering_angle) {
        return Err(SimError::InputDomain(format!(
            "setpoint {sp:?} outside the actuator box"
        )));
    }
    Ok([sp.target_speed / 3.0 - 1.0, sp.steering_angle / MAX_STEER])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub max_accel: f64,
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 2.0,
            ki: 0.1,
            kd: 0.0,
            max_accel: 3.0,
            integral_limit: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One controller update. Returns `(acceleration, steering, next state)`.
pub fn pid_step(
    state: &VehicleState,
    setpoint: &ControlSetpoint,
    ctrl: PidState,
    gains: &PidGains,
    dt: f64,
) -> (f64, f64, PidState) {
    let e = setpoint.target_speed - state.speed;
    let integral = (ctrl.integral + e * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let de = ctrl.prev_error.map_or(0.0, |p| (e - p) / dt);
    let raw = gains.kp * e + gains.ki * integral + gains.kd * de;
    let accel = raw.clamp(-gains.max_accel, gains.max_accel);
    (
        accel,
        setpoint.steering_angle,
        PidState {
            integral,
            prev_error: Some(e),
        },
    )
}

/// Rear-axle kinematic bicycle update with explicit Euler integration.
pub fn bicycle_step(state: &VehicleState, accel: f64, steering: f64, dt: f64, wheelbase: f64) -> VehicleState {
    let v = state.speed;
    let (s, c) = state.heading.sin_cos();
    VehicleState {
        x: state.x + v * c * dt,
        y: state.y + v * s * dt,
        heading: normalize_angle(state.heading + v / wheelbase * steering.tan() * dt),
        speed: (v + accel * dt).clamp(0.0, MAX_SPEED),
        ..*state
    }
}
