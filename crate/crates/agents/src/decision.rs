//! Learned decision policy: vehicle and map set encoders, SVO projection,
//! a single ego query over all elements, and actor / critic heads.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use svo_nn::{
    Activation, AttentionConfig, AttnGroup, DeepSetConfig, DeepSetEncoder, Graph, Linear, Mlp, MultiHeadAttention,
    ParamStore, Tensor, Var,
};

use crate::error::{io_err, AgentError, Result};
use crate::features::{EncodedObs, STATIC_FEATURES, VEHICLE_FEATURES};
use crate::policy::{Policy, PolicyContext, PolicyInput, PolicyOutput};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const TYPE_EGO: usize = 0;
const TYPE_OTHER: usize = 1;
const TYPE_STATIC: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    /// Width of vehicle trajectory features before the SVO part is appended.
    pub vehicle_dim: usize,
    pub svo_dim: usize,
    pub n_heads: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub seed: u64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            vehicle_dim: 128,
            svo_dim: 32,
            n_heads: 4,
            encoder_hidden: 64,
            decoder_hidden: 128,
            seed: 0,
        }
    }
}

impl DecisionConfig {
    pub fn d_model(&self) -> usize {
        self.vehicle_dim + self.svo_dim
    }
}

/// Encoded policy input: observation rows plus one SVO per vehicle element
/// (ego first).
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionInput {
    pub obs: EncodedObs,
    pub svos: Vec<f64>,
}

impl DecisionInput {
    pub fn from_policy_input(input: &PolicyInput, horizon: usize) -> Result<Self> {
        input.validate()?;
        let obs = EncodedObs::from_observation(&input.observation.clone().without_svos(), horizon);
        let svos = std::iter::once(input.self_svo)
            .chain(input.neighbor_svos.iter().copied())
            .collect();
        Ok(Self { obs, svos })
    }

    fn check(&self) -> Result<()> {
        if self.obs.vehicles.is_empty() || self.svos.len() != self.obs.vehicles.len() {
            return Err(AgentError::Input(format!(
                "{} svos for {} vehicle elements",
                self.svos.len(),
                self.obs.vehicles.len()
            )));
        }
        Ok(())
    }
}

/// Shared trunk: embeds every element and pools them with the ego query.
#[derive(Clone, Debug)]
struct Trunk {
    vehicle: DeepSetEncoder,
    svo: Linear,
    map: DeepSetEncoder,
    attention: MultiHeadAttention,
}

impl Trunk {
    fn new(store: &mut ParamStore, name: &str, c: &DecisionConfig) -> Result<Self> {
        let d = c.d_model();
        Ok(Self {
            vehicle: DeepSetEncoder::new(
                store,
                &format!("{name}.vehicle"),
                DeepSetConfig {
                    input: VEHICLE_FEATURES,
                    hidden: c.encoder_hidden,
                    output: c.vehicle_dim,
                },
            )?,
            svo: Linear::new(store, &format!("{name}.svo"), 1, c.svo_dim)?,
            map: DeepSetEncoder::new(
                store,
                &format!("{name}.static"),
                DeepSetConfig {
                    input: STATIC_FEATURES,
                    hidden: c.encoder_hidden,
                    output: d,
                },
            )?,
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.mha"),
                AttentionConfig {
                    d_model: d,
                    n_heads: c.n_heads,
                },
                3,
            )?,
        })
    }

    /// One pooled row per input.
    fn forward(&self, g: &mut Graph, store: &ParamStore, batch: &[&DecisionInput]) -> Result<Var> {
        let mut vdata = Vec::new();
        let mut vseg: Vec<Range<usize>> = Vec::new();
        let mut sdata = Vec::new();
        let mut sseg: Vec<Range<usize>> = Vec::new();
        let mut svos = Vec::new();
        let mut layout = Vec::with_capacity(batch.len());
        for input in batch {
            input.check()?;
            let (v0, s0) = (vseg.len(), sseg.len());
            for e in &input.obs.vehicles {
                let start = vdata.len() / VEHICLE_FEATURES;
                vdata.extend_from_slice(e);
                vseg.push(start..vdata.len() / VEHICLE_FEATURES);
            }
            for e in &input.obs.statics {
                let start = sdata.len() / STATIC_FEATURES;
                sdata.extend_from_slice(e);
                sseg.push(start..sdata.len() / STATIC_FEATURES);
            }
            svos.extend_from_slice(&input.svos);
            layout.push((v0, input.obs.vehicles.len(), s0, input.obs.statics.len()));
        }
        let n_veh = vseg.len();
        let vpts = g.constant(Tensor::matrix(vdata.len() / VEHICLE_FEATURES, VEHICLE_FEATURES, vdata));
        let vemb = self.vehicle.forward(g, store, vpts, &vseg)?;
        let svo_in = g.constant(Tensor::column(&svos));
        let svo_emb = self.svo.forward(g, store, svo_in)?;
        let vfeat = g.concat_cols(&[vemb, svo_emb])?;
        let mut types: Vec<usize> = layout
            .iter()
            .flat_map(|&(_, n, _, _)| std::iter::once(TYPE_EGO).chain(std::iter::repeat(TYPE_OTHER).take(n - 1)))
            .collect();
        let keys = if sseg.is_empty() {
            vfeat
        } else {
            let spts = g.constant(Tensor::matrix(sdata.len() / STATIC_FEATURES, STATIC_FEATURES, sdata));
            let semb = self.map.forward(g, store, spts, &sseg)?;
            types.extend(std::iter::repeat(TYPE_STATIC).take(sseg.len()));
            g.concat_rows(&[vfeat, semb])?
        };
        let ego_rows: Vec<usize> = layout.iter().map(|l| l.0).collect();
        let queries = g.gather_rows(vfeat, ego_rows)?;
        let groups = layout
            .iter()
            .enumerate()
            .map(|(i, &(v0, vn, s0, sn))| AttnGroup {
                queries: i..i + 1,
                keys: (v0..v0 + vn).chain(n_veh + s0..n_veh + s0 + sn).collect(),
            })
            .collect();
        Ok(self
            .attention
            .forward(g, store, queries, keys, keys, Some(&types), groups)?)
    }
}

/// Stochastic actor: tanh-squashed Gaussian over the normalized action.
pub struct Actor {
    pub config: DecisionConfig,
    pub store: ParamStore,
    trunk: Trunk,
    head: Mlp,
}

/// Recorded actor output for a batch.
pub struct ActorOut {
    /// `B × 2` pre-squash mean.
    pub mean: Var,
    /// `B × 2` log standard deviation in `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub log_std: Var,
}

impl Actor {
    pub fn new(config: DecisionConfig) -> Result<Self> {
        let mut store = ParamStore::new(config.seed);
        let trunk = Trunk::new(&mut store, "actor", &config)?;
        let h = config.decoder_hidden;
        let head = Mlp::new(
            &mut store,
            "actor.decoder",
            &[config.d_model(), h, h, 4],
            Activation::Identity,
        )?;
        Ok(Self {
            config,
            store,
            trunk,
            head,
        })
    }

    pub fn forward(&self, g: &mut Graph, batch: &[&DecisionInput]) -> Result<ActorOut> {
        let pooled = self.trunk.forward(g, &self.store, batch)?;
        let out = self.head.forward(g, &self.store, pooled)?;
        let mean = g.slice_cols(out, 0, 2)?;
        let raw = g.slice_cols(out, 2, 2)?;
        let squashed = g.tanh(raw);
        let half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN);
        let log_std = g.affine(squashed, half, LOG_STD_MIN + half);
        Ok(ActorOut { mean, log_std })
    }

    /// Deterministic decision: `tanh(mean)`, plus the distribution statistics.
    pub fn decide_batch(&self, batch: &[&DecisionInput]) -> Result<Vec<PolicyOutput>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch)?;
        let mean = g.value(out.mean).data().to_vec();
        let log_std = g.value(out.log_std).data().to_vec();
        Ok((0..batch.len())
            .map(|i| {
                let m = [mean[2 * i], mean[2 * i + 1]];
                PolicyOutput {
                    action: [m[0].tanh(), m[1].tanh()],
                    mean: Some(m),
                    log_std: Some([log_std[2 * i], log_std[2 * i + 1]]),
                }
            })
            .collect())
    }

    pub fn decide(&self, input: &PolicyInput, horizon: usize) -> Result<PolicyOutput> {
        let enc = DecisionInput::from_policy_input(input, horizon)?;
        Ok(self.decide_batch(&[&enc])?.remove(0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_with_config(&self.store, &self.config, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config = load_config(path)?;
        let mut actor = Self::new(config)?;
        copy_all(&mut actor.store, &ParamStore::load(path)?)?;
        Ok(actor)
    }
}

/// State-action value network.
pub struct Critic {
    pub config: DecisionConfig,
    pub store: ParamStore,
    trunk: Trunk,
    head: Mlp,
}

impl Critic {
    pub fn new(config: DecisionConfig, name: &str) -> Result<Self> {
        let mut store = ParamStore::new(config.seed);
        let trunk = Trunk::new(&mut store, name, &config)?;
        let h = config.decoder_hidden;
        let head = Mlp::new(
            &mut store,
            &format!("{name}.decoder"),
            &[config.d_model() + 2, h, h, 1],
            Activation::Identity,
        )?;
        Ok(Self {
            config,
            store,
            trunk,
            head,
        })
    }

    /// `Q(s, a)` as a `B × 1` column; `actions` is `B × 2`.
    pub fn forward(&self, g: &mut Graph, batch: &[&DecisionInput], actions: Var) -> Result<Var> {
        let pooled = self.trunk.forward(g, &self.store, batch)?;
        let x = g.concat_cols(&[pooled, actions])?;
        Ok(self.head.forward(g, &self.store, x)?)
    }
}

fn config_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn save_with_config(store: &ParamStore, config: &DecisionConfig, path: &Path) -> Result<()> {
    store.save(path)?;
    let cfg = config_path(path);
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&cfg, text).map_err(io_err(&cfg))
}

fn load_config(path: &Path) -> Result<DecisionConfig> {
    let cfg = config_path(path);
    let text = std::fs::read_to_string(&cfg).map_err(io_err(&cfg))?;
    serde_json::from_str(&text).map_err(|e| AgentError::Input(format!("{}: {e}", cfg.display())))
}

fn copy_all(to: &mut ParamStore, from: &ParamStore) -> Result<()> {
    if to.copy_from(from) != to.len() || from.len() != to.len() {
        return Err(AgentError::Input(format!(
            "checkpoint has {} tensors, network expects {}",
            from.len(),
            to.len()
        )));
    }
    Ok(())
}

/// Deterministic learned policy for closed-loop evaluation.
#[derive(Clone)]
pub struct LearnedPolicy {
    pub actor: Arc<Actor>,
}

impl Policy for LearnedPolicy {
    fn act(&mut self, ctx: &PolicyContext<'_>, idx: usize) -> Result<PolicyOutput> {
        let input = ctx.policy_input(idx)?;
        self.actor.decide(&input, ctx.observation.horizon)
    }

    fn act_all(&mut self, ctx: &PolicyContext<'_>, indices: &[usize]) -> Result<Vec<PolicyOutput>> {
        let inputs = indices
            .iter()
            .map(|&i| DecisionInput::from_policy_input(&ctx.policy_input(i)?, ctx.observation.horizon))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&DecisionInput> = inputs.iter().collect();
        self.actor.decide_batch(&refs)
    }
}
