//! Individual driving reward, neighborhoods and SVO mixing.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::road::FailureCause;
use crate::vehicle::{AgentId, MAX_SPEED};
use crate::world::{StepEvents, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub w_speed: f64,
    pub collision: f64,
    pub off_zone: f64,
    pub off_path: f64,
    /// Neighborhood radius for the social term.
    pub radius: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_speed: 0.1,
            collision: -10.0,
            off_zone: -10.0,
            off_path: -5.0,
            radius: 30.0,
        }
    }
}

impl RewardConfig {
    pub fn penalty(&self, cause: FailureCause) -> f64 {
        match cause {
            FailureCause::Collision => self.collision,
            FailureCause::OffZone => self.off_zone,
            FailureCause::OffPath => self.off_path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_individual: f64,
    pub r_social: f64,
    pub r_total: f64,
    pub components: BTreeMap<String, f64>,
}

/// Speed incentive plus the penalty of a failure on this tick, if any.
/// Returns the total and its named terms.
pub fn individual_reward(
    cfg: &RewardConfig,
    speed: f64,
    failure: Option<FailureCause>,
) -> (f64, BTreeMap<String, f64>) {
    let mut terms = BTreeMap::new();
    let speed_term = cfg.w_speed * speed / MAX_SPEED;
    terms.insert("speed".to_string(), speed_term);
    let mut total = speed_term;
    for cause in [FailureCause::Collision, FailureCause::OffZone, FailureCause::OffPath] {
        let v = if failure == Some(cause) {
            cfg.penalty(cause)
        } else {
            0.0
        };
        terms.insert(cause.as_str().to_string(), v);
        total += v;
    }
    (total, terms)
}

/// Agents active during the last transition, other than `idx`, whose centre
/// lies within `radius` of it. Returns storage indices.
pub fn neighborhood(world: &World, idx: usize, radius: f64) -> Vec<usize> {
    let me = world.vehicle(idx).position();
    (0..world.len())
        .filter(|&j| j != idx && world.was_active_last_step(j))
        .filter(|&j| world.vehicle(j).position().dist(me) <= radius)
        .collect()
}

/// `cos(πφ/2)·r_i + sin(πφ/2)·r_s`, with `r_s` the mean neighbor reward
/// (zero without neighbors).
pub fn svo_reward(r_individual: f64, neighbor_rewards: &[f64], svo: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&svo) {
        return Err(SimError::InputDomain(format!("svo {svo} outside [0, 1]")));
    }
    let r_social = if neighbor_rewards.is_empty() {
        0.0
    } else {
        neighbor_rewards.iter().sum::<f64>() / neighbor_rewards.len() as f64
    };
    Ok(RewardBreakdown {
        r_individual,
        r_social,
        r_total: mix_reward(r_individual, r_social, svo),
        components: BTreeMap::new(),
    })
}

/// `cos(πφ/2)·r_i + sin(πφ/2)·r_s` without domain checks.
pub fn mix_reward(r_i: f64, r_s: f64, svo: f64) -> f64 {
    // exact endpoints; cos(π/2) is not exactly zero in floating point
    if svo == 0.0 {
        r_i
    } else if svo == 1.0 {
        r_s
    } else {
        let (s, c) = (FRAC_PI_2 * svo).sin_cos();
        c * r_i + s * r_s
    }
}

/// Rewards for every agent that was active during the step that produced
/// `events`, keyed by agent id.
pub fn step_rewards(
    world: &World,
    events: &StepEvents,
    cfg: &RewardConfig,
) -> Result<BTreeMap<AgentId, RewardBreakdown>> {
    let failure_of: BTreeMap<usize, (FailureCause, f64)> =
        events.failures.iter().map(|&(i, c, v)| (i, (c, v))).collect();
    let alive: Vec<usize> = (0..world.len()).filter(|&i| world.was_active_last_step(i)).collect();
    let mut individual = vec![0.0; world.len()];
    let mut terms = vec![BTreeMap::new(); world.len()];
    for &i in &alive {
        let (failure, speed) = match failure_of.get(&i) {
            Some(&(c, v)) => (Some(c), v),
            None => (None, world.vehicle(i).speed),
        };
        let (r, t) = individual_reward(cfg, speed, failure);
        individual[i] = r;
        terms[i] = t;
    }
    let mut out = BTreeMap::new();
    for &i in &alive {
        let neigh: Vec<f64> = neighborhood(world, i, cfg.radius)
            .iter()
            .map(|&j| individual[j])
            .collect();
        let mut b = svo_reward(individual[i], &neigh, world.vehicle(i).svo)?;
        b.components = std::mem::take(&mut terms[i]);
        out.insert(world.vehicle(i).agent_id, b);
    }
    Ok(out)
}
