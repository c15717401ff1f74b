//! Closed-loop episode runner producing [`EpisodeLog`]s.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use svo_agents::{
    derive_seed, Actor, Beliefs, Episode, LearnedPolicy, Policy, PolicyOutput, RandomPolicy, RecognitionNet,
    ScriptedPolicy, SvoMode,
};
use svo_sim::{observe, AgentStatus, Observation};

use crate::config::{PolicyKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::log::{
    AgentAction, AgentOutcome, AgentReward, EpisodeLog, Estimates, Failure, LogHeader, Outcome, Summary, TickRecord,
    LOG_FORMAT, LOG_VERSION,
};

/// Decision policy chosen by a run configuration, shareable across threads.
#[derive(Clone)]
pub enum Driver {
    Scripted(ScriptedPolicy),
    Learned(LearnedPolicy),
    Random(u64),
}

impl Driver {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(match config.policy.kind {
            PolicyKind::Scripted => Driver::Scripted(ScriptedPolicy::new(config.policy.scripted.clone())),
            PolicyKind::Random => Driver::Random(config.seed),
            PolicyKind::Learned => {
                let path = config.policy.checkpoint.as_ref().ok_or_else(|| HarnessError::Config {
                    path: Default::default(),
                    detail: "policy kind \"learned\" requires policy.checkpoint".into(),
                })?;
                Driver::Learned(LearnedPolicy {
                    actor: Arc::new(Actor::load(path)?),
                })
            }
        })
    }

    /// Policy instance for one episode; random drivers are reseeded per episode.
    pub fn for_episode(&self, episode_seed: u64) -> Box<dyn Policy + Send> {
        match self {
            Driver::Scripted(p) => Box::new(p.clone()),
            Driver::Learned(p) => Box::new(p.clone()),
            Driver::Random(root) => Box::new(RandomPolicy::new(derive_seed(*root, episode_seed))),
        }
    }
}

/// Recognition estimates for every active observer with at least one
/// neighbor, returned as beliefs plus the loggable records.
pub fn recognize_all(episode: &Episode, net: &RecognitionNet) -> Result<(Beliefs, Vec<Estimates>)> {
    let world = &episode.world;
    let cfg = &episode.config().observation;
    let mut observers = Vec::new();
    let mut observations: Vec<Observation> = Vec::new();
    for i in world.active_indices() {
        let obs = observe(world, &episode.map, i, cfg, false)?;
        if !obs.others.is_empty() {
            observers.push(i);
            observations.push(obs);
        }
    }
    let refs: Vec<&Observation> = observations.iter().collect();
    let estimates = if refs.is_empty() {
        Vec::new()
    } else {
        net.recognize_batch(&refs, cfg.horizon)?
    };
    let mut beliefs = Beliefs::new();
    let mut records = Vec::with_capacity(observers.len());
    for ((&i, obs), est) in observers.iter().zip(&observations).zip(estimates) {
        let observer = world.vehicle(i).agent_id;
        let neighbors: Vec<_> = obs
            .others
            .iter()
            .map(|e| e.agent_id.expect("vehicle element has an id"))
            .collect();
        let truths = neighbors
            .iter()
            .map(|&id| world.index_of(id).map(|j| world.vehicle(j).svo).unwrap_or(f64::NAN))
            .collect();
        beliefs.insert(observer, neighbors.iter().copied().zip(est.iter().copied()).collect());
        records.push(Estimates {
            observer,
            neighbors,
            estimates: est,
            truths,
        });
    }
    Ok((beliefs, records))
}

/// Runs one episode of `config` with the given seed.
pub fn run_episode(
    config: &RunConfig,
    index: u64,
    seed: u64,
    policy: &mut dyn Policy,
    recognizer: Option<&RecognitionNet>,
) -> Result<EpisodeLog> {
    if config.mode == SvoMode::Recog && recognizer.is_none() {
        return Err(HarnessError::Invalid("recog mode needs a recognition network".into()));
    }
    let mut episode = Episode::new(&config.episode, seed)?;
    let header = LogHeader {
        format: LOG_FORMAT.into(),
        version: LOG_VERSION,
        config_digest: config.digest(),
        episode: index,
        seed,
        mode: config.mode,
        horizon: config.episode.horizon,
        dt: episode.world.dt(),
        initial: episode.world.vehicles().to_vec(),
    };
    let mut ticks = Vec::new();
    while !episode.done() {
        let (beliefs, estimates) = match (config.mode, recognizer) {
            (SvoMode::Recog, Some(net)) => {
                let (b, e) = recognize_all(&episode, net)?;
                (Some(b), e)
            }
            _ => (None, Vec::new()),
        };
        let step = episode.step(policy, config.mode, beliefs.as_ref())?;
        let world = &episode.world;
        let actions = step
            .actions
            .iter()
            .enumerate()
            .filter_map(|(i, a): (usize, &Option<PolicyOutput>)| {
                a.map(|o| AgentAction {
                    agent_id: world.vehicle(i).agent_id,
                    action: o.action,
                })
            })
            .collect();
        let rewards = step
            .rewards
            .into_iter()
            .map(|(agent_id, reward)| AgentReward { agent_id, reward })
            .collect();
        let failures = step
            .events
            .failures
            .iter()
            .map(|&(i, cause, _)| Failure {
                agent_id: world.vehicle(i).agent_id,
                cause,
            })
            .collect();
        let successes = step
            .events
            .successes
            .iter()
            .map(|&i| world.vehicle(i).agent_id)
            .collect();
        ticks.push(TickRecord {
            tick: world.tick(),
            vehicles: world.vehicles().to_vec(),
            actions,
            rewards,
            estimates,
            failures,
            successes,
        });
    }
    let world = &episode.world;
    let outcomes = (0..world.len())
        .map(|i| AgentOutcome {
            agent_id: world.vehicle(i).agent_id,
            outcome: match world.status(i) {
                AgentStatus::Active => Outcome::Timeout,
                AgentStatus::Succeeded { tick } => Outcome::Success { tick },
                AgentStatus::Crashed { tick, cause } => Outcome::Crash { tick, cause },
            },
        })
        .collect();
    let summary = Summary {
        ticks: ticks.len() as u64,
        outcomes,
    };
    Ok(EpisodeLog { header, ticks, summary })
}

/// Seed of episode `k` under root seed `root`.
pub fn episode_seed(root: u64, k: u64) -> u64 {
    derive_seed(root, k)
}

/// Runs `config.episodes` episodes on `threads` workers and hands every log
/// to `sink` in episode order. Results do not depend on the thread count.
pub fn run_episodes<T: Send>(
    config: &RunConfig,
    driver: &Driver,
    recognizer: Option<&RecognitionNet>,
    threads: usize,
    map: impl Fn(EpisodeLog) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let n = config.episodes as usize;
    parallel_indexed(n, threads, |k| {
        let seed = episode_seed(config.seed, k as u64);
        let mut policy = driver.for_episode(seed);
        let log = run_episode(config, k as u64, seed, policy.as_mut(), recognizer)?;
        map(log)
    })
}

/// Evaluates `f(0..n)` on up to `threads` scoped workers; output is in
/// index order and the first error wins.
pub fn parallel_indexed<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= n {
                    break;
                }
                let r = f(k);
                let failed = r.is_err();
                slots.lock().expect("worker panicked")[k] = Some(r);
                if failed {
                    next.store(n, Ordering::Relaxed);
                }
            });
        }
    });
    let slots = slots.into_inner().expect("worker panicked");
    let mut out = Vec::with_capacity(n);
    for r in slots {
        match r {
            Some(r) => out.push(r?),
            None => break,
        }
    }
    Ok(out)
}

/// Worker count from the machine, at least one.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
