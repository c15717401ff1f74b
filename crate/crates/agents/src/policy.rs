//! Policy interface shared by scripted, learned and random drivers.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svo_sim::{AgentId, Observation, ObservationConfig, StaticMap, World};

use crate::error::{AgentError, Result};

/// Where a decision policy gets the SVOs of other agents from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SvoMode {
    /// Ground truth.
    #[default]
    #[serde(rename = "true_svo")]
    TrueSvo,
    /// Per-observer estimates from a recognition network.
    #[serde(rename = "recog")]
    Recog,
    /// No information; every neighbor is treated as 0.5.
    #[serde(rename = "no_svo")]
    NoSvo,
}

/// Value substituted for unknown SVOs.
pub const NEUTRAL_SVO: f64 = 0.5;

/// Estimated SVOs per observer: `beliefs[observer][other]`.
pub type Beliefs = BTreeMap<AgentId, BTreeMap<AgentId, f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyInput {
    pub observation: Observation,
    pub self_svo: f64,
    pub neighbor_svos: Vec<f64>,
}

impl PolicyInput {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if self.neighbor_svos.len() != self.observation.others.len() {
            return Err(AgentError::Input(format!(
                "{} neighbor svos for {} neighbors",
                self.neighbor_svos.len(),
                self.observation.others.len()
            )));
        }
        if !ok(self.self_svo) || !self.neighbor_svos.iter().all(|&v| ok(v)) {
            return Err(AgentError::Input("svo outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub action: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_std: Option<[f64; 2]>,
}

impl PolicyOutput {
    pub fn deterministic(action: [f64; 2]) -> Self {
        Self {
            action: [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)],
            mean: None,
            log_std: None,
        }
    }
}

/// Everything a policy may read when acting for one agent.
pub struct PolicyContext<'a> {
    pub world: &'a World,
    pub map: &'a StaticMap,
    pub observation: &'a ObservationConfig,
    pub mode: SvoMode,
    pub beliefs: Option<&'a Beliefs>,
}

impl PolicyContext<'_> {
    /// SVO that `observer` attributes to `other` (storage indices).
    pub fn svo_seen_by(&self, observer: usize, other: usize) -> f64 {
        match self.mode {
            SvoMode::TrueSvo => self.world.vehicle(other).svo,
            SvoMode::NoSvo => NEUTRAL_SVO,
            SvoMode::Recog => {
                let (o, t) = (
                    self.world.vehicle(observer).agent_id,
                    self.world.vehicle(other).agent_id,
                );
                self.beliefs
                    .and_then(|b| b.get(&o))
                    .and_then(|m| m.get(&t))
                    .copied()
                    .unwrap_or(NEUTRAL_SVO)
            }
        }
    }

    /// Recognition-mode observation plus the SVOs the agent may use.
    pub fn policy_input(&self, idx: usize) -> Result<PolicyInput> {
        let observation = svo_sim::observe(self.world, self.map, idx, self.observation, false)?;
        let neighbor_svos = observation
            .others
            .iter()
            .map(|e| {
                let j = e
                    .agent_id
                    .and_then(|id| self.world.index_of(id))
                    .expect("observed agent exists");
                self.svo_seen_by(idx, j)
            })
            .collect();
        Ok(PolicyInput {
            observation,
            self_svo: self.world.vehicle(idx).svo,
            neighbor_svos,
        })
    }
}

pub trait Policy {
    fn act(&mut self, ctx: &PolicyContext<'_>, idx: usize) -> Result<PolicyOutput>;

    /// Acts for several agents at once; the default calls [`Policy::act`].
    fn act_all(&mut self, ctx: &PolicyContext<'_>, indices: &[usize]) -> Result<Vec<PolicyOutput>> {
        indices.iter().map(|&i| self.act(ctx, i)).collect()
    }
}

/// Uniform random actions from a seeded generator.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _ctx: &PolicyContext<'_>, _idx: usize) -> Result<PolicyOutput> {
        Ok(PolicyOutput::deterministic([
            self.rng.gen_range(-1.0..=1.0),
            self.rng.gen_range(-1.0..=1.0),
        ]))
    }
}
