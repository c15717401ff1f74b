//! Soft actor-critic with one actor shared by all agents, twin critics,
//! Polyak-averaged targets and an auto-tuned entropy temperature.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use svo_nn::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use svo_sim::mix_reward;

use crate::decision::{Actor, Critic, DecisionConfig, DecisionInput};
use crate::episode::{derive_seed, Episode, EpisodeConfig};
use crate::error::{AgentError, Result};
use crate::policy::{Policy, PolicyOutput, SvoMode};

/// One agent's experience on one tick.
#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Arc<DecisionInput>,
    pub action: [f64; 2],
    pub r_individual: f64,
    pub r_social: f64,
    pub svo: f64,
    pub reward: f64,
    /// `None` once the agent terminated (success or crash).
    pub next: Option<Arc<DecisionInput>>,
}

/// Fixed-capacity ring of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// `n` distinct transitions (all of them when fewer are stored).
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<&Transition> {
        let n = n.min(self.items.len());
        sample_indices(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub episodes: u64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub initial_alpha: f64,
    /// Entropy target; defaults to minus the action dimension.
    pub target_entropy: f64,
    /// Environment ticks with uniform random actions before learning.
    pub warmup_ticks: u64,
    /// Gradient updates per environment tick.
    pub updates_per_tick: usize,
    pub grad_clip: f64,
    pub mode: SvoMode,
    pub network: DecisionConfig,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            episodes: 100,
            gamma: 0.99,
            learning_rate: 3e-4,
            batch_size: 256,
            buffer_capacity: 200_000,
            tau: 0.005,
            initial_alpha: 0.2,
            target_entropy: -2.0,
            warmup_ticks: 500,
            updates_per_tick: 1,
            grad_clip: 10.0,
            mode: SvoMode::TrueSvo,
            network: DecisionConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SacReport {
    /// Mean per-agent return of every training episode.
    pub episode_returns: Vec<f64>,
    pub critic_losses: Vec<f64>,
    pub alphas: Vec<f64>,
    pub updates: u64,
}

pub struct SacTrainer {
    pub config: SacConfig,
    pub actor: Actor,
    critics: [Critic; 2],
    targets: [Critic; 2],
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    log_alpha: f64,
    alpha_opt: Adam,
    alpha_store: ParamStore,
    pub buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl SacTrainer {
    pub fn new(config: SacConfig) -> Result<Self> {
        let net = |offset: u64| DecisionConfig {
            seed: derive_seed(config.network.seed, offset),
            ..config.network.clone()
        };
        let actor = Actor::new(config.network.clone())?;
        let critics = [Critic::new(net(1), "critic")?, Critic::new(net(2), "critic")?];
        let mut targets = [Critic::new(net(1), "critic")?, Critic::new(net(2), "critic")?];
        for (t, c) in targets.iter_mut().zip(&critics) {
            t.store.copy_from(&c.store);
        }
        let adam = AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        };
        let mut alpha_store = ParamStore::new(0);
        alpha_store.insert("log_alpha", Tensor::scalar(config.initial_alpha.ln()))?;
        Ok(Self {
            actor_opt: Adam::new(adam, &actor.store),
            critic_opts: [Adam::new(adam, &critics[0].store), Adam::new(adam, &critics[1].store)],
            alpha_opt: Adam::new(adam, &alpha_store),
            log_alpha: config.initial_alpha.ln(),
            alpha_store,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX)),
            actor,
            critics,
            targets,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn critic(&self, k: usize) -> &Critic {
        &self.critics[k]
    }

    /// Samples `a = tanh(μ + σ·ε)` and records `log π(a|s)` on the graph.
    fn sample_actions(&mut self, g: &mut Graph, batch: &[&DecisionInput]) -> Result<(Var, Var)> {
        let out = self.actor.forward(g, batch)?;
        let eps: Vec<f64> = (0..2 * batch.len()).map(|_| self.rng.sample(StandardNormal)).collect();
        let eps_t = Tensor::matrix(batch.len(), 2, eps.clone());
        let eps_v = g.constant(eps_t);
        let std = g.exp(out.log_std);
        let noise = g.mul(std, eps_v)?;
        let u = g.add(out.mean, noise)?;
        let a = g.tanh(u);
        // log N(u; μ, σ) − log(1 − tanh²u)
        let gauss: Vec<f64> = eps
            .chunks(2)
            .map(|e| {
                e.iter()
                    .map(|x| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln())
                    .sum()
            })
            .collect();
        let gauss = g.constant(Tensor::column(&gauss));
        let log_std_sum = g.sum_cols(out.log_std);
        let a2 = g.square(a);
        let one_minus = g.affine(a2, -1.0, 1.0 + 1e-6);
        let log_jac = g.ln(one_minus);
        let log_jac_sum = g.sum_cols(log_jac);
        let t = g.sub(gauss, log_std_sum)?;
        let logp = g.sub(t, log_jac_sum)?;
        Ok((a, logp))
    }

    /// Stochastic action for collection.
    pub fn explore(&mut self, batch: &[&DecisionInput]) -> Result<Vec<[f64; 2]>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let (a, _) = self.sample_actions(&mut g, batch)?;
        Ok(g.value(a).data().chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// One gradient step on both critics, the actor and the temperature.
    /// Returns the mean critic loss.
    pub fn update(&mut self) -> Result<f64> {
        let n = self.config.batch_size.min(self.buffer.len());
        if n == 0 {
            return Err(AgentError::Input("empty replay buffer".into()));
        }
        let picked: Vec<Transition> = {
            let mut rng = ChaCha8Rng::seed_from_u64(self.rng.gen());
            self.buffer.sample(&mut rng, n).into_iter().cloned().collect()
        };
        let states: Vec<&DecisionInput> = picked.iter().map(|t| t.state.as_ref()).collect();
        let targets = self.td_targets(&picked)?;
        let actions: Vec<f64> = picked.iter().flat_map(|t| t.action).collect();

        let mut critic_loss = 0.0;
        for k in 0..2 {
            let mut g = Graph::new();
            let a = g.constant(Tensor::matrix(n, 2, actions.clone()));
            let q = self.critics[k].forward(&mut g, &states, a)?;
            let y = g.constant(Tensor::column(&targets));
            let d = g.sub(q, y)?;
            let sq = g.square(d);
            let loss = g.mean(sq);
            let value = g.value(loss).item();
            check_finite("critic update", value)?;
            critic_loss += value / 2.0;
            let mut grads = g.backward(loss)?.params(&self.critics[k].store);
            grads.clip_global_norm(self.config.grad_clip);
            self.critic_opts[k].update(&mut self.critics[k].store, &grads);
        }

        // actor: minimize E[α log π(a|s) − min_k Q_k(s, a)]
        let mut g = Graph::new();
        let (a, logp) = self.sample_actions(&mut g, &states)?;
        let a_val = g.value(a).clone();
        let logp_val = g.value(logp).data().to_vec();
        let (q_min, dq_da) = self.min_q_and_grad(&states, a_val)?;
        let alpha = self.alpha();
        let inv_n = 1.0 / n as f64;
        let mean_logp = g.mean(logp);
        let entropy_term = g.scale(mean_logp, alpha);
        let lin = g.constant(Tensor::matrix(n, 2, dq_da.iter().map(|v| v * inv_n).collect()));
        let weighted = g.mul(a, lin)?;
        let q_term = g.sum(weighted);
        let loss = g.sub(entropy_term, q_term)?;
        let actor_value = alpha * logp_val.iter().sum::<f64>() * inv_n - q_min.iter().sum::<f64>() * inv_n;
        check_finite("actor update", actor_value)?;
        let mut grads = g.backward(loss)?.params(&self.actor.store);
        grads.clip_global_norm(self.config.grad_clip);
        self.actor_opt.update(&mut self.actor.store, &grads);

        // temperature: minimize E[−log α · (log π + H_target)]
        let mean_lp = logp_val.iter().sum::<f64>() * inv_n;
        let grad = -(mean_lp + self.config.target_entropy);
        let id = self.alpha_store.id("log_alpha")?;
        self.alpha_opt
            .update(&mut self.alpha_store, &svo_nn::ParamGrads(vec![Tensor::scalar(grad)]));
        self.log_alpha = self.alpha_store.get(id).item().clamp(-20.0, 5.0);

        for (t, c) in self.targets.iter_mut().zip(&self.critics) {
            t.store.soft_update(&c.store, self.config.tau);
        }
        Ok(critic_loss)
    }

    /// `y = r + γ (min_k Q'_k(s', a') − α log π(a'|s'))` with `a' ~ π(s')`,
    /// and `y = r` for terminal transitions.
    fn td_targets(&mut self, batch: &[Transition]) -> Result<Vec<f64>> {
        let mut y: Vec<f64> = batch.iter().map(|t| t.reward).collect();
        let live: Vec<usize> = (0..batch.len()).filter(|&i| batch[i].next.is_some()).collect();
        if live.is_empty() {
            return Ok(y);
        }
        let next: Vec<&DecisionInput> = live.iter().map(|&i| batch[i].next.as_deref().expect("live")).collect();
        let mut g = Graph::new();
        let (a, logp) = self.sample_actions(&mut g, &next)?;
        let a_val = g.value(a).clone();
        let logp = g.value(logp).data().to_vec();
        let mut q = [Vec::new(), Vec::new()];
        for k in 0..2 {
            let mut g = Graph::new();
            let av = g.constant(a_val.clone());
            let out = self.targets[k].forward(&mut g, &next, av)?;
            q[k] = g.value(out).data().to_vec();
        }
        let alpha = self.alpha();
        for (j, &i) in live.iter().enumerate() {
            y[i] += self.config.gamma * (q[0][j].min(q[1][j]) - alpha * logp[j]);
        }
        Ok(y)
    }

    /// `min_k Q_k(s, a)` per row and its gradient with respect to `a`.
    fn min_q_and_grad(&self, states: &[&DecisionInput], a: Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut qs = Vec::with_capacity(2);
        let mut gs = Vec::with_capacity(2);
        for critic in &self.critics {
            let mut g = Graph::new();
            let av = g.input(a.clone());
            let q = critic.forward(&mut g, states, av)?;
            let total = g.sum(q);
            qs.push(g.value(q).data().to_vec());
            gs.push(g.backward(total)?.wrt(av).into_data());
        }
        let mut q_min = Vec::with_capacity(states.len());
        let mut grad = Vec::with_capacity(2 * states.len());
        for i in 0..states.len() {
            let k = usize::from(qs[1][i] < qs[0][i]);
            q_min.push(qs[k][i]);
            grad.extend_from_slice(&gs[k][2 * i..2 * i + 2]);
        }
        Ok((q_min, grad))
    }
}

fn check_finite(stage: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(AgentError::Diverged {
            stage: stage.into(),
            detail: format!("loss {value}"),
        })
    }
}

fn encode_inputs(ep: &Episode, indices: &[usize], mode: SvoMode) -> Result<Vec<Arc<DecisionInput>>> {
    let ctx = ep.context(mode, None);
    indices
        .iter()
        .map(|&i| {
            let input = ctx.policy_input(i)?;
            Ok(Arc::new(DecisionInput::from_policy_input(
                &input,
                ep.config().observation.horizon,
            )?))
        })
        .collect()
}

/// Trains one shared policy from the experience of every agent.
pub fn sac_train(episode: &EpisodeConfig, config: &SacConfig) -> Result<(SacTrainer, SacReport)> {
    episode.validate()?;
    let mut trainer = SacTrainer::new(config.clone())?;
    let mut report = SacReport::default();
    let mut ticks = 0u64;
    let mut explore_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX - 1));
    for e in 0..config.episodes {
        let mut ep = Episode::new(episode, derive_seed(config.seed, e))?;
        let mut returns: BTreeMap<usize, f64> = BTreeMap::new();
        let mut active: Vec<usize> = ep.world.active_indices().collect();
        let mut states = encode_inputs(&ep, &active, config.mode)?;
        while !ep.done() {
            let refs: Vec<&DecisionInput> = states.iter().map(|s| s.as_ref()).collect();
            let chosen = if ticks < config.warmup_ticks {
                (0..refs.len())
                    .map(|_| [explore_rng.gen_range(-1.0..=1.0), explore_rng.gen_range(-1.0..=1.0)])
                    .collect()
            } else {
                trainer.explore(&refs)?
            };
            let mut actions = vec![None; ep.world.len()];
            for (&i, a) in active.iter().zip(&chosen) {
                actions[i] = Some(PolicyOutput::deterministic(*a));
            }
            let outcome = ep.apply(actions)?;
            let still: Vec<usize> = active.iter().copied().filter(|&i| ep.world.is_active(i)).collect();
            let next_states = encode_inputs(&ep, &still, config.mode)?;
            let next_of: BTreeMap<usize, Arc<DecisionInput>> = still.iter().copied().zip(next_states.clone()).collect();
            for ((&i, state), action) in active.iter().zip(&states).zip(&chosen) {
                let id = ep.world.vehicle(i).agent_id;
                let r = outcome
                    .rewards
                    .get(&id)
                    .ok_or_else(|| AgentError::Input(format!("no reward for {id}")))?;
                *returns.entry(id).or_default() += r.r_total;
                trainer.buffer.push(Transition {
                    state: state.clone(),
                    action: *action,
                    r_individual: r.r_individual,
                    r_social: r.r_social,
                    svo: ep.world.vehicle(i).svo,
                    reward: r.r_total,
                    next: next_of.get(&i).cloned(),
                });
            }
            active = still;
            states = next_states;
            ticks += 1;
            if ticks >= config.warmup_ticks && trainer.buffer.len() >= config.batch_size.min(64).max(1) {
                for _ in 0..config.updates_per_tick {
                    let loss = trainer.update()?;
                    report.critic_losses.push(loss);
                    report.updates += 1;
                }
            }
        }
        let n = ep.world.len().max(1) as f64;
        report.episode_returns.push(returns.values().sum::<f64>() / n);
        report.alphas.push(trainer.alpha());
    }
    Ok((trainer, report))
}

/// Mean per-agent return of one episode under `policy`.
pub fn episode_return(policy: &mut dyn Policy, episode: &EpisodeConfig, mode: SvoMode, seed: u64) -> Result<f64> {
    let mut ep = Episode::new(episode, seed)?;
    let mut total = 0.0;
    while !ep.done() {
        let out = ep.step(policy, mode, None)?;
        total += out.rewards.values().map(|r| r.r_total).sum::<f64>();
    }
    Ok(total / ep.world.len().max(1) as f64)
}

/// Recomputes the mixed reward of a stored transition.
pub fn recompute_reward(t: &Transition) -> f64 {
    mix_reward(t.r_individual, t.r_social, t.svo)
}
