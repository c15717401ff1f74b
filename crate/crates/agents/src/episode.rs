//! Closed-loop episode driver shared by data generation, training and
//! evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svo_sim::{
    spawn_agents, step_rewards, AgentId, ObservationConfig, RewardBreakdown, RewardConfig, ScenarioSpec, SimConfig,
    StaticMap, StepEvents, World,
};

use crate::error::{AgentError, Result};
use crate::policy::{Beliefs, Policy, PolicyContext, PolicyOutput, SvoMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub observation: ObservationConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Fixed agent count; drawn from the scenario range when absent.
    #[serde(default)]
    pub agents: Option<usize>,
}

fn default_horizon() -> u64 {
    130
}

impl EpisodeConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        Self {
            scenario,
            sim: SimConfig::default(),
            observation: ObservationConfig::default(),
            reward: RewardConfig::default(),
            horizon: default_horizon(),
            agents: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.sim.validate()?;
        self.observation.validate()?;
        if self.horizon == 0 {
            return Err(AgentError::Input("horizon must be at least 1".into()));
        }
        if let Some(n) = self.agents {
            if n == 0 || n > svo_sim::scenario::MAX_AGENTS {
                return Err(AgentError::Input(format!("agent count {n} out of range")));
            }
        }
        Ok(())
    }
}

/// Everything produced by one tick.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Indexed by storage position; `None` for agents that were not active.
    pub actions: Vec<Option<PolicyOutput>>,
    pub events: StepEvents,
    pub rewards: BTreeMap<AgentId, RewardBreakdown>,
}

pub struct Episode {
    pub world: World,
    pub map: Arc<StaticMap>,
    config: EpisodeConfig,
}

impl Episode {
    pub fn new(config: &EpisodeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let network = Arc::new(config.scenario.build_network()?);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config
            .agents
            .unwrap_or_else(|| config.scenario.draw_agent_count(&mut rng));
        let agents = spawn_agents(&network, &config.scenario, n, &mut rng)?;
        let map = Arc::new(StaticMap::new(&network, config.observation.static_spacing));
        let world = World::new(network, agents, config.sim.clone(), seed)?;
        Ok(Self {
            world,
            map,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn done(&self) -> bool {
        self.world.all_done() || self.world.tick() >= self.config.horizon
    }

    pub fn context<'a>(&'a self, mode: SvoMode, beliefs: Option<&'a Beliefs>) -> PolicyContext<'a> {
        PolicyContext {
            world: &self.world,
            map: &self.map,
            observation: &self.config.observation,
            mode,
            beliefs,
        }
    }

    /// Queries the policy for every active agent, then advances the world.
    pub fn step(&mut self, policy: &mut dyn Policy, mode: SvoMode, beliefs: Option<&Beliefs>) -> Result<StepOutcome> {
        let active: Vec<usize> = self.world.active_indices().collect();
        let outputs = policy.act_all(&self.context(mode, beliefs), &active)?;
        let mut actions = vec![None; self.world.len()];
        for (&i, o) in active.iter().zip(outputs) {
            actions[i] = Some(o);
        }
        self.apply(actions)
    }

    /// Advances the world with externally chosen actions.
    pub fn apply(&mut self, actions: Vec<Option<PolicyOutput>>) -> Result<StepOutcome> {
        let raw: Vec<Option<[f64; 2]>> = actions.iter().map(|a| a.map(|o| o.action)).collect();
        let events = self.world.step(&raw)?;
        let rewards = step_rewards(&self.world, &events, &self.config.reward)?;
        Ok(StepOutcome {
            actions,
            events,
            rewards,
        })
    }
}

/// Independent per-item seed from a root seed and a counter (SplitMix64).
pub fn derive_seed(root: u64, counter: u64) -> u64 {
    let mut z = root ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
