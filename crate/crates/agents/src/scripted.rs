//! SVO-parameterized rule-based driver.
//!
//! Steering is pure pursuit on the agent's global path. The speed target is
//! the minimum of a cruise speed, a car-following speed and, near a conflict
//! zone, a yielding speed. Every SVO-dependent term is monotone: a higher SVO
//! never raises the target speed for the same traffic situation.

use serde::{Deserialize, Serialize};
use svo_sim::{unmap_action, ControlSetpoint, World, MAX_SPEED, MAX_STEER};

use crate::error::Result;
use crate::policy::{Policy, PolicyContext, PolicyOutput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptedParams {
    pub cruise_speed: f64,
    /// Fraction of cruise speed given up by a fully prosocial driver in
    /// dense traffic.
    pub crowd_slowdown: f64,
    pub crowd_near: f64,
    pub crowd_far: f64,
    pub min_gap: f64,
    pub min_gap_per_svo: f64,
    pub headway: f64,
    pub headway_per_svo: f64,
    pub comfort_decel: f64,
    /// Priority is conceded when the rival arrives before `t_ego + margin`,
    /// `margin = priority_margin + priority_per_svo · φ`.
    pub priority_margin: f64,
    pub priority_per_svo: f64,
    pub look_distance: f64,
    pub look_per_svo: f64,
    pub stop_margin: f64,
    pub stop_margin_per_svo: f64,
    /// Closer than this to the conflict zone the driver no longer yields.
    pub commit_distance: f64,
    pub sense_radius: f64,
    pub lookahead_base: f64,
    pub lookahead_gain: f64,
}

impl Default for ScriptedParams {
    fn default() -> Self {
        Self {
            cruise_speed: MAX_SPEED,
            crowd_slowdown: 0.45,
            crowd_near: 6.0,
            crowd_far: 20.0,
            min_gap: 2.0,
            min_gap_per_svo: 2.0,
            headway: 0.8,
            headway_per_svo: 0.8,
            comfort_decel: 2.0,
            priority_margin: -1.5,
            priority_per_svo: 3.5,
            look_distance: 10.0,
            look_per_svo: 30.0,
            stop_margin: 1.0,
            stop_margin_per_svo: 3.0,
            commit_distance: 1.0,
            sense_radius: 40.0,
            lookahead_base: 3.0,
            lookahead_gain: 0.8,
        }
    }
}

/// Another agent heading for the same conflict zone.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rival {
    /// Distance from the rival to the start of its conflict zone (negative
    /// once inside).
    pub distance: f64,
    pub speed: f64,
    pub length: f64,
    /// The rival's own rule tells it to give way to the ego.
    pub yields_to_ego: bool,
    /// The ego precedes the rival in the arrival-time tie-break order.
    pub ego_first: bool,
}

/// The traffic facts the speed rule depends on.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Situation {
    pub speed: f64,
    pub nearest: Option<f64>,
    /// `(bumper gap, leader speed)` of the closest vehicle ahead on the path.
    pub leader: Option<(f64, f64)>,
    /// Distance to the start of the ego's conflict zone, if still ahead.
    pub conflict_distance: Option<f64>,
    pub rivals: Vec<Rival>,
}

impl ScriptedParams {
    fn gap(&self, svo: f64) -> f64 {
        self.min_gap + self.min_gap_per_svo * svo
    }

    fn headway(&self, svo: f64) -> f64 {
        self.headway + self.headway_per_svo * svo
    }

    fn look(&self, svo: f64) -> f64 {
        self.look_distance + self.look_per_svo * svo
    }

    fn priority(&self, svo: f64) -> f64 {
        self.priority_margin + self.priority_per_svo * svo
    }

    /// Speed that keeps a safe distance behind a leader `gap` metres ahead.
    pub fn follow_speed(&self, gap: f64, lead_speed: f64, svo: f64) -> f64 {
        let free = gap - self.gap(svo);
        if free <= 0.0 {
            return 0.0;
        }
        let headway = lead_speed + free / self.headway(svo);
        let braking = (lead_speed * lead_speed + 2.0 * self.comfort_decel * free).sqrt();
        headway.min(braking)
    }

    /// Speed from which the driver can still stop before `distance`.
    pub fn stop_speed(&self, distance: f64, svo: f64) -> f64 {
        let d = distance - self.stop_margin - self.stop_margin_per_svo * svo;
        (2.0 * self.comfort_decel * d.max(0.0)).sqrt()
    }

    /// Whether a driver `d_self` metres from the zone at `v_self` concedes
    /// to a rival `d_other` away at `v_other`.
    pub fn concedes(&self, d_self: f64, v_self: f64, d_other: f64, v_other: f64, svo: f64) -> bool {
        if d_self < self.commit_distance || d_self > self.look(svo) {
            return false;
        }
        let t_self = d_self / v_self.max(1.0);
        let t_other = d_other.max(0.0) / v_other.max(1.0);
        t_other < t_self + self.priority(svo)
    }
}

/// Target speed for the situation; non-increasing in `svo`.
pub fn target_speed(sit: &Situation, svo: f64, p: &ScriptedParams) -> f64 {
    let crowd = sit
        .nearest
        .map(|d| ((p.crowd_far - d) / (p.crowd_far - p.crowd_near)).clamp(0.0, 1.0))
        .unwrap_or(0.0);
    let mut v = p.cruise_speed * (1.0 - p.crowd_slowdown * svo * crowd);
    if let Some((gap, lead)) = sit.leader {
        v = v.min(p.follow_speed(gap, lead, svo));
    }
    if let Some(d) = sit.conflict_distance {
        for r in &sit.rivals {
            if r.yields_to_ego && r.ego_first {
                continue;
            }
            if p.concedes(d, sit.speed, r.distance, r.speed, svo) {
                let behind = p.follow_speed(d - r.distance - r.length, r.speed, svo);
                v = v.min(p.stop_speed(d, svo).max(behind));
            }
        }
    }
    v.clamp(0.0, MAX_SPEED)
}

/// Builds the situation of agent `idx`; `svo_of(j)` is the SVO the agent
/// attributes to agent `j`.
pub fn situation(world: &World, idx: usize, svo_of: impl Fn(usize) -> f64, p: &ScriptedParams) -> Situation {
    let me = world.vehicle(idx);
    let path = world.path(idx);
    let s_me = world.progress(idx);
    let mut sit = Situation {
        speed: me.speed,
        ..Situation::default()
    };
    let my_zone = path.conflict.filter(|z| s_me < z.end + me.length);
    sit.conflict_distance = my_zone.map(|z| z.start - s_me).filter(|&d| d >= p.commit_distance);
    let t_me = sit.conflict_distance.map(|d| d / me.speed.max(1.0));

    for j in 0..world.len() {
        if j == idx || !world.is_present(j) {
            continue;
        }
        let other = world.vehicle(j);
        let dist = other.position().dist(me.position());
        sit.nearest = Some(sit.nearest.map_or(dist, |n: f64| n.min(dist)));
        if dist > p.sense_radius {
            continue;
        }
        let proj = path.line.project(other.position());
        let ahead = proj.s - s_me;
        let aligned = svo_sim::normalize_angle(other.heading - me.heading).abs() < std::f64::consts::FRAC_PI_2;
        if ahead > 0.0 && aligned && proj.distance < (me.width + other.width) / 2.0 + 0.5 {
            let gap = ahead - (me.length + other.length) / 2.0;
            if sit.leader.is_none_or(|(g, _)| gap < g) {
                sit.leader = Some((gap, other.speed));
            }
        }
        let (Some(d_me), Some(t_me)) = (sit.conflict_distance, t_me) else {
            continue;
        };
        let other_path = world.path(j);
        if other_path.route == path.route {
            continue;
        }
        let Some(zone) = other_path.conflict else {
            continue;
        };
        let s_other = world.progress(j);
        if s_other >= zone.end + other.length {
            continue;
        }
        let d_other = zone.start - s_other;
        let speed = if world.is_active(j) { other.speed } else { 0.0 };
        let t_other = d_other.max(0.0) / speed.max(1.0);
        let yields_to_ego = world.is_active(j) && p.concedes(d_other, speed, d_me, me.speed, svo_of(j));
        let ego_first = (t_me, me.agent_id) < (t_other, other.agent_id);
        sit.rivals.push(Rival {
            distance: d_other,
            speed,
            length: other.length,
            yields_to_ego,
            ego_first,
        });
    }
    sit
}

/// Pure-pursuit steering angle towards a point ahead on the agent's path.
pub fn pursuit_steering(world: &World, idx: usize, p: &ScriptedParams) -> f64 {
    let me = world.vehicle(idx);
    let path = world.path(idx);
    let lookahead = p.lookahead_base + p.lookahead_gain * me.speed;
    let target = path.line.pose_at(world.progress(idx) + lookahead);
    let local = me.pose().to_local(target);
    let dist = local.x.hypot(local.y);
    if dist < 1e-6 {
        return 0.0;
    }
    let alpha = local.y.atan2(local.x);
    let wheelbase = world.config().wheelbase_ratio * me.length;
    (2.0 * wheelbase * alpha.sin() / dist)
        .atan()
        .clamp(-MAX_STEER, MAX_STEER)
}

#[derive(Clone, Debug, Default)]
pub struct ScriptedPolicy {
    pub params: ScriptedParams,
}

impl ScriptedPolicy {
    pub fn new(params: ScriptedParams) -> Self {
        Self { params }
    }
}

/// Scripted action for agent `idx`, expressed as a normalized action.
pub fn scripted_policy(ctx: &PolicyContext<'_>, idx: usize, params: &ScriptedParams) -> Result<PolicyOutput> {
    let world = ctx.world;
    let sit = situation(world, idx, |j| ctx.svo_seen_by(idx, j), params);
    let setpoint = ControlSetpoint {
        target_speed: target_speed(&sit, world.vehicle(idx).svo, params),
        steering_angle: pursuit_steering(world, idx, params),
    };
    Ok(PolicyOutput::deterministic(unmap_action(setpoint)?))
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, ctx: &PolicyContext<'_>, idx: usize) -> Result<PolicyOutput> {
        scripted_policy(ctx, idx, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_road_is_full_speed() {
        let p = ScriptedParams::default();
        for svo in [0.0, 0.5, 1.0] {
            assert_eq!(target_speed(&Situation::default(), svo, &p), MAX_SPEED);
        }
    }

    #[test]
    fn follow_speed_stops_inside_min_gap() {
        let p = ScriptedParams::default();
        assert_eq!(p.follow_speed(1.0, 5.0, 0.0), 0.0);
        assert!(p.follow_speed(30.0, 0.0, 0.0) > 5.0);
    }
}
