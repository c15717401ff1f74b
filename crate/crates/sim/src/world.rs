//! World state and the per-tick advancement loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::Pose;
use crate::road::{check_failures, detect_collisions, FailureCause, GlobalPath, RoadNetwork};
use crate::scenario::SpawnedAgent;
use crate::vehicle::{bicycle_step, map_action, pid_step, AgentId, PidGains, PidState, VehicleState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    /// Wheelbase as a fraction of vehicle length.
    pub wheelbase_ratio: f64,
    pub pid: PidGains,
    pub max_path_deviation: f64,
    /// Remaining path length at which an agent counts as arrived.
    pub goal_tolerance: f64,
    /// Number of past ticks retained per agent, including the current one.
    pub history_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            wheelbase_ratio: 0.8,
            pid: PidGains::default(),
            max_path_deviation: 4.0,
            goal_tolerance: 1.5,
            history_len: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt > 0.0
            && self.wheelbase_ratio > 0.0
            && self.max_path_deviation > 0.0
            && self.goal_tolerance >= 0.0
            && self.history_len >= 1
            && self.pid.max_accel > 0.0
            && self.pid.integral_limit >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid simulator settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    Succeeded { tick: u64 },
    Crashed { tick: u64, cause: FailureCause },
}

impl AgentStatus {
    pub fn is_active(self) -> bool {
        self == AgentStatus::Active
    }

    /// Tick at which the agent left the active set, if it did.
    pub fn terminal_tick(self) -> Option<u64> {
        match self {
            AgentStatus::Active => None,
            AgentStatus::Succeeded { tick } | AgentStatus::Crashed { tick, .. } => Some(tick),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub pose: Pose,
    pub speed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepEvents {
    pub tick: u64,
    pub collisions: BTreeSet<(AgentId, AgentId)>,
    /// `(agent index, cause, speed reached on the failing tick)`.
    pub failures: Vec<(usize, FailureCause, f64)>,
    pub successes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct World {
    config: SimConfig,
    network: Arc<RoadNetwork>,
    tick: u64,
    seed: u64,
    vehicles: Vec<VehicleState>,
    paths: Vec<GlobalPath>,
    status: Vec<AgentStatus>,
    pid: Vec<PidState>,
    history: Vec<VecDeque<TrackPoint>>,
    lookup: BTreeMap<AgentId, usize>,
}

impl World {
    pub fn new(network: Arc<RoadNetwork>, agents: Vec<SpawnedAgent>, config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut lookup = BTreeMap::new();
        for (i, a) in agents.iter().enumerate() {
            if lookup.insert(a.state.agent_id, i).is_some() {
                return Err(SimError::Config(format!("duplicate agent id {}", a.state.agent_id)));
            }
            if !(0.0..=1.0).contains(&a.state.svo) {
                return Err(SimError::InputDomain(format!("svo {} outside [0, 1]", a.state.svo)));
            }
        }
        let n = agents.len();
        let history = agents
            .iter()
            .map(|a| {
                let mut h = VecDeque::with_capacity(config.history_len);
                h.push_back(TrackPoint {
                    pose: a.state.pose(),
                    speed: a.state.speed,
                });
                h
            })
            .collect();
        let (vehicles, paths) = agents.into_iter().map(|a| (a.state, a.path)).unzip();
        Ok(Self {
            config,
            network,
            tick: 0,
            seed,
            vehicles,
            paths,
            status: vec![AgentStatus::Active; n],
            pid: vec![PidState::default(); n],
            history,
            lookup,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.network
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    pub fn vehicle(&self, idx: usize) -> &VehicleState {
        &self.vehicles[idx]
    }

    pub fn path(&self, idx: usize) -> &GlobalPath {
        &self.paths[idx]
    }

    pub fn status(&self, idx: usize) -> AgentStatus {
        self.status[idx]
    }

    pub fn statuses(&self) -> &[AgentStatus] {
        &self.status
    }

    /// Most recent tracked states, oldest first.
    pub fn history(&self, idx: usize) -> &VecDeque<TrackPoint> {
        &self.history[idx]
    }

    pub fn index_of(&self, id: AgentId) -> Option<usize> {
        self.lookup.get(&id).copied()
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.status[idx].is_active()
    }

    /// Vehicles still present on the road: active or crashed in place.
    pub fn is_present(&self, idx: usize) -> bool {
        !matches!(self.status[idx], AgentStatus::Succeeded { .. })
    }

    /// Active now, or terminated on the current tick.
    pub fn was_active_last_step(&self, idx: usize) -> bool {
        match self.status[idx].terminal_tick() {
            None => true,
            Some(t) => t == self.tick && t > 0,
        }
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_active(i))
    }

    pub fn all_done(&self) -> bool {
        self.status.iter().all(|s| !s.is_active())
    }

    /// Arc length of the agent's projection onto its own path.
    pub fn progress(&self, idx: usize) -> f64 {
        self.paths[idx].line.project(self.vehicles[idx].position()).s
    }

    /// Advances one tick. `actions[i]` is required for every active agent and
    /// ignored otherwise.
    pub fn step(&mut self, actions: &[Option<[f64; 2]>]) -> Result<StepEvents> {
        if actions.len() != self.len() {
            return Err(SimError::ActionCount {
                expected: self.len(),
                got: actions.len(),
            });
        }
        let dt = self.config.dt;
        let mut next = self.vehicles.clone();
        let mut pid = self.pid.clone();
        for i in 0..self.len() {
            if !self.is_active(i) {
                continue;
            }
            let a = actions[i].ok_or(SimError::NotActive(self.vehicles[i].agent_id))?;
            let sp = map_action(a)?;
            let v = &self.vehicles[i];
            let (acc, steer, st) = pid_step(v, &sp, self.pid[i], &self.config.pid, dt);
            pid[i] = st;
            next[i] = bicycle_step(v, acc, steer, dt, self.config.wheelbase_ratio * v.length);
        }
        self.vehicles = next;
        self.pid = pid;
        self.tick += 1;
        let tick = self.tick;

        let present: Vec<usize> = (0..self.len()).filter(|&i| self.is_present(i)).collect();
        let snapshot: Vec<VehicleState> = present.iter().map(|&i| self.vehicles[i]).collect();
        let collisions = detect_collisions(&snapshot);
        let mut failures = Vec::new();
        let mut successes = Vec::new();
        let mut crashed = vec![false; self.len()];
        for &(a, b) in &collisions {
            let (ia, ib) = (self.lookup[&a], self.lookup[&b]);
            for k in [ia, ib] {
                if self.is_active(k) {
                    crashed[k] = true;
                }
            }
        }
        for i in 0..self.len() {
            if !self.is_active(i) {
                continue;
            }
            let cause = if crashed[i] {
                Some(FailureCause::Collision)
            } else if self.progress(i) >= self.paths[i].line.length() - self.config.goal_tolerance {
                self.status[i] = AgentStatus::Succeeded { tick };
                successes.push(i);
                None
            } else {
                check_failures(
                    &self.vehicles[i],
                    &self.network,
                    &self.paths[i],
                    self.config.max_path_deviation,
                )
            };
            if let Some(cause) = cause {
                failures.push((i, cause, self.vehicles[i].speed));
                self.status[i] = AgentStatus::Crashed { tick, cause };
                self.vehicles[i].speed = 0.0;
            }
        }
        for i in 0..self.len() {
            if !self.is_present(i) {
                continue;
            }
            let h = &mut self.history[i];
            if h.len() == self.config.history_len {
                h.pop_front();
            }
            h.push_back(TrackPoint {
                pose: self.vehicles[i].pose(),
                speed: self.vehicles[i].speed,
            });
        }
        Ok(StepEvents {
            tick,
            collisions,
            failures,
            successes,
        })
    }
}
