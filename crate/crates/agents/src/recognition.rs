//! SVO recognition network: set encoders, multi-head attention with one
//! query per neighbor, and a per-query decoder mapped into [0, 1].

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use svo_nn::{
    Activation, Adam, AdamConfig, AttentionConfig, AttnGroup, DeepSetConfig, DeepSetEncoder, Graph, Mlp,
    MultiHeadAttention, ParamStore, Tensor, Var,
};
use svo_sim::Observation;

use crate::dataset::{MapContext, RecognitionDataset, RecognitionSample};
use crate::error::{io_err, AgentError, Result};
use crate::features::{EncodedObs, STATIC_FEATURES, VEHICLE_FEATURES};

const TYPE_EGO: usize = 0;
const TYPE_OTHER: usize = 1;
const TYPE_STATIC: usize = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionVariant {
    #[default]
    Full,
    /// Keys and values come from vehicles only.
    WithoutMap,
    /// Each neighbor is decoded from its own trajectory embedding.
    WithoutAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognitionConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Hidden width inside the set encoders.
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub variant: RecognitionVariant,
    pub seed: u64,
}

impl Default for RecognitionConfig {
    fn default() -> Self {
        Self {
            d_model: 160,
            n_heads: 4,
            encoder_hidden: 64,
            decoder_hidden: 128,
            variant: RecognitionVariant::Full,
            seed: 0,
        }
    }
}

pub struct RecognitionNet {
    pub config: RecognitionConfig,
    pub store: ParamStore,
    vehicle_encoder: DeepSetEncoder,
    static_encoder: Option<DeepSetEncoder>,
    attention: Option<MultiHeadAttention>,
    decoder: Mlp,
}

/// Row layout of a batch of encoded observations.
struct Packed {
    vehicle_points: Tensor,
    vehicle_segments: Vec<Range<usize>>,
    static_points: Tensor,
    static_segments: Vec<Range<usize>>,
    /// Per observation: first vehicle row and vehicle count.
    vehicle_rows: Vec<(usize, usize)>,
    static_rows: Vec<(usize, usize)>,
}

fn pack(batch: &[&EncodedObs]) -> Packed {
    let mut vdata = Vec::new();
    let mut vseg = Vec::new();
    let mut sdata = Vec::new();
    let mut sseg = Vec::new();
    let mut vehicle_rows = Vec::with_capacity(batch.len());
    let mut static_rows = Vec::with_capacity(batch.len());
    for obs in batch {
        vehicle_rows.push((vseg.len(), obs.vehicles.len()));
        for e in &obs.vehicles {
            let start = vdata.len() / VEHICLE_FEATURES;
            vdata.extend_from_slice(e);
            vseg.push(start..vdata.len() / VEHICLE_FEATURES);
        }
        static_rows.push((sseg.len(), obs.statics.len()));
        for e in &obs.statics {
            let start = sdata.len() / STATIC_FEATURES;
            sdata.extend_from_slice(e);
            sseg.push(start..sdata.len() / STATIC_FEATURES);
        }
    }
    let vn = vdata.len() / VEHICLE_FEATURES;
    let sn = sdata.len() / STATIC_FEATURES;
    Packed {
        vehicle_points: Tensor::matrix(vn, VEHICLE_FEATURES, vdata),
        vehicle_segments: vseg,
        static_points: Tensor::matrix(sn, STATIC_FEATURES, sdata),
        static_segments: sseg,
        vehicle_rows,
        static_rows,
    }
}

impl RecognitionNet {
    pub fn new(config: RecognitionConfig) -> Result<Self> {
        let mut store = ParamStore::new(config.seed);
        let d = config.d_model;
        let enc = |input| DeepSetConfig {
            input,
            hidden: config.encoder_hidden,
            output: d,
        };
        let vehicle_encoder = DeepSetEncoder::new(&mut store, "recog.vehicle", enc(VEHICLE_FEATURES))?;
        let static_encoder = match config.variant {
            RecognitionVariant::Full => Some(DeepSetEncoder::new(&mut store, "recog.static", enc(STATIC_FEATURES))?),
            _ => None,
        };
        let attention = match config.variant {
            RecognitionVariant::WithoutAttention => None,
            _ => Some(MultiHeadAttention::new(
                &mut store,
                "recog.mha",
                AttentionConfig {
                    d_model: d,
                    n_heads: config.n_heads,
                },
                3,
            )?),
        };
        let h = config.decoder_hidden;
        let decoder = Mlp::new(&mut store, "recog.decoder", &[d, h, h, 1], Activation::Tanh)?;
        Ok(Self {
            config,
            store,
            vehicle_encoder,
            static_encoder,
            attention,
            decoder,
        })
    }

    /// Records the estimates for every neighbor of every observation, in
    /// batch order, as a column in [0, 1]. `None` when the batch has no
    /// neighbors at all.
    pub fn forward(&self, g: &mut Graph, batch: &[&EncodedObs]) -> Result<Option<Var>> {
        let total: usize = batch.iter().map(|o| o.neighbors()).sum();
        if total == 0 {
            return Ok(None);
        }
        if batch.iter().any(|o| o.vehicles.is_empty()) {
            return Err(AgentError::Input("observation without an ego element".into()));
        }
        let p = pack(batch);
        let store = &self.store;
        let vpts = g.constant(p.vehicle_points);
        let vemb = self.vehicle_encoder.forward(g, store, vpts, &p.vehicle_segments)?;
        let neighbor_rows: Vec<usize> = p.vehicle_rows.iter().flat_map(|&(s, n)| s + 1..s + n).collect();
        let queries = g.gather_rows(vemb, neighbor_rows)?;
        let decoded_input = match &self.attention {
            None => queries,
            Some(mha) => {
                let n_veh = p.vehicle_segments.len();
                let mut types: Vec<usize> = p
                    .vehicle_rows
                    .iter()
                    .flat_map(|&(_, n)| std::iter::once(TYPE_EGO).chain(std::iter::repeat(TYPE_OTHER).take(n - 1)))
                    .collect();
                let use_map = self.static_encoder.is_some() && !p.static_segments.is_empty();
                let keys = if use_map {
                    let enc = self.static_encoder.as_ref().expect("checked");
                    let spts = g.constant(p.static_points);
                    let semb = enc.forward(g, store, spts, &p.static_segments)?;
                    types.extend(std::iter::repeat(TYPE_STATIC).take(p.static_segments.len()));
                    g.concat_rows(&[vemb, semb])?
                } else {
                    vemb
                };
                let mut groups = Vec::new();
                let mut q = 0;
                for (i, &(vs, vn)) in p.vehicle_rows.iter().enumerate() {
                    if vn <= 1 {
                        continue;
                    }
                    let mut keys_of: Vec<usize> = (vs..vs + vn).collect();
                    if use_map {
                        let (ss, sn) = p.static_rows[i];
                        keys_of.extend(n_veh + ss..n_veh + ss + sn);
                    }
                    groups.push(AttnGroup {
                        queries: q..q + vn - 1,
                        keys: keys_of,
                    });
                    q += vn - 1;
                }
                mha.forward(g, store, queries, keys, keys, Some(&types), groups)?
            }
        };
        let out = self.decoder.forward(g, store, decoded_input)?;
        Ok(Some(g.affine(out, 0.5, 0.5)))
    }

    /// Estimates for a batch, one vector per observation.
    pub fn estimate(&self, batch: &[&EncodedObs]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let Some(out) = self.forward(&mut g, batch)? else {
            return Ok(batch.iter().map(|_| Vec::new()).collect());
        };
        let values = g.value(out).data();
        let mut at = 0;
        Ok(batch
            .iter()
            .map(|o| {
                let n = o.neighbors();
                at += n;
                values[at - n..at].to_vec()
            })
            .collect())
    }

    /// SVO estimates for the neighbors of a recognition-mode observation,
    /// aligned with `observation.others`.
    pub fn recognize(&self, observation: &Observation, horizon: usize) -> Result<Vec<f64>> {
        Ok(self.recognize_batch(&[observation], horizon)?.pop().unwrap_or_default())
    }

    pub fn recognize_batch(&self, observations: &[&Observation], horizon: usize) -> Result<Vec<Vec<f64>>> {
        if observations.iter().any(|o| !o.is_svo_free()) {
            return Err(AgentError::Input(
                "recognition requires an observation without SVOs".into(),
            ));
        }
        let enc: Vec<EncodedObs> = observations
            .iter()
            .map(|o| {
                let e = EncodedObs::from_observation(o, horizon);
                if self.static_encoder.is_some() {
                    e
                } else {
                    e.without_map()
                }
            })
            .collect();
        let refs: Vec<&EncodedObs> = enc.iter().collect();
        self.estimate(&refs)
    }

    /// Encodes a stored sample the way this variant consumes it.
    pub fn encode(&self, sample: &RecognitionSample, ctx: &MapContext) -> EncodedObs {
        if self.static_encoder.is_some() {
            sample.encode(ctx)
        } else {
            EncodedObs::from_tracks(&sample.vehicles, &[], ctx.horizon)
        }
    }

    /// Writes the parameter checkpoint to `path` and the network config to
    /// `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)?;
        let cfg = config_path(path);
        let text = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&cfg, text).map_err(io_err(&cfg))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = config_path(path);
        let text = std::fs::read_to_string(&cfg).map_err(io_err(&cfg))?;
        let config: RecognitionConfig =
            serde_json::from_str(&text).map_err(|e| AgentError::Input(format!("{}: {e}", cfg.display())))?;
        let mut net = Self::new(config)?;
        let loaded = ParamStore::load(path)?;
        net.load_params(&loaded)?;
        Ok(net)
    }

    /// Copies parameters by name; every parameter must be present.
    pub fn load_params(&mut self, from: &ParamStore) -> Result<()> {
        let copied = self.store.copy_from(from);
        if copied != self.store.len() || from.len() != self.store.len() {
            return Err(AgentError::Input(format!(
                "checkpoint has {} tensors, network expects {}",
                from.len(),
                self.store.len()
            )));
        }
        Ok(())
    }
}

fn config_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Mean of squared errors over all (observer, neighbor) pairs, recorded on
/// the graph.
pub fn recognition_loss(g: &mut Graph, predictions: Var, targets: &[f64]) -> Result<Var> {
    if targets.is_empty() {
        return Err(AgentError::Input("empty batch".into()));
    }
    let t = g.constant(Tensor::column(targets));
    let diff = g.sub(predictions, t)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// `Σ (φ − φ̂)² / n` over aligned sequences.
pub fn squared_error(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_aligned(estimates, truths)?;
    if estimates.is_empty() {
        return Err(AgentError::Input("empty batch".into()));
    }
    Ok(estimates
        .iter()
        .zip(truths)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / estimates.len() as f64)
}

/// Mean of `|φ̂ − φ|` over aligned sequences; 0 for empty input.
pub fn mean_deviation_error(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    check_aligned(estimates, truths)?;
    if estimates.is_empty() {
        return Ok(0.0);
    }
    Ok(estimates.iter().zip(truths).map(|(a, b)| (a - b).abs()).sum::<f64>() / estimates.len() as f64)
}

fn check_aligned(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(AgentError::Input(format!(
            "{} estimates for {} truths",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    /// Upper bound on optimizer steps per epoch; 0 means a full pass.
    pub steps_per_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            learning_rate: 3e-4,
            max_epochs: 50,
            patience: 5,
            grad_clip: 1.0,
            steps_per_epoch: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub heldout_mde: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// `(epoch, held-out loss)` each time a new best checkpoint was kept.
    pub checkpoints: Vec<(usize, f64)>,
    pub best_epoch: usize,
    pub best_heldout_loss: f64,
}

/// Minibatch Adam on the recognition loss with early stopping on the
/// held-out split; the returned network carries the best checkpoint.
pub fn train_recognition(
    net: &mut RecognitionNet,
    dataset: &RecognitionDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let ctx = dataset.map_context()?;
    let (train, heldout) = dataset.split();
    if train.is_empty() || heldout.is_empty() {
        return Err(AgentError::Input(format!(
            "need samples on both sides of the split (train {}, held-out {})",
            train.len(),
            heldout.len()
        )));
    }
    let heldout_enc: Vec<EncodedObs> = heldout.iter().map(|s| net.encode(s, &ctx)).collect();
    let heldout_truth: Vec<f64> = heldout.iter().flat_map(|s| s.truths()).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        &net.store,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch = config.batch_size.max(1);
    let mut best = net.store.clone();
    let mut report = TrainReport {
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        best_epoch: 0,
        best_heldout_loss: f64::INFINITY,
    };
    let (h_loss, h_mde) = evaluate_encoded(net, &heldout_enc, &heldout_truth)?;
    report.epochs.push(EpochStats {
        epoch: 0,
        train_loss: f64::NAN,
        heldout_loss: h_loss,
        heldout_mde: h_mde,
    });
    report.checkpoints.push((0, h_loss));
    report.best_heldout_loss = h_loss;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut chunks: Vec<&[usize]> = order.chunks(batch).collect();
        if config.steps_per_epoch > 0 {
            chunks.truncate(config.steps_per_epoch);
        }
        let (mut loss_sum, mut pairs) = (0.0, 0usize);
        for chunk in chunks {
            let enc: Vec<EncodedObs> = chunk.iter().map(|&i| net.encode(train[i], &ctx)).collect();
            let refs: Vec<&EncodedObs> = enc.iter().collect();
            let targets: Vec<f64> = chunk.iter().flat_map(|&i| train[i].truths()).collect();
            let mut g = Graph::new();
            let Some(pred) = net.forward(&mut g, &refs)? else {
                continue;
            };
            let loss = recognition_loss(&mut g, pred, &targets)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(AgentError::Diverged {
                    stage: format!("recognition epoch {epoch}"),
                    detail: format!("loss {value}"),
                });
            }
            let mut grads = g.backward(loss)?.params(&net.store);
            if !grads.is_finite() {
                return Err(AgentError::Diverged {
                    stage: format!("recognition epoch {epoch}"),
                    detail: "non-finite gradient".into(),
                });
            }
            if config.grad_clip > 0.0 {
                grads.clip_global_norm(config.grad_clip);
            }
            adam.update(&mut net.store, &grads);
            loss_sum += value * targets.len() as f64;
            pairs += targets.len();
        }
        let (h_loss, h_mde) = evaluate_encoded(net, &heldout_enc, &heldout_truth)?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / pairs.max(1) as f64,
            heldout_loss: h_loss,
            heldout_mde: h_mde,
        });
        if h_loss < report.best_heldout_loss {
            report.best_heldout_loss = h_loss;
            report.best_epoch = epoch;
            report.checkpoints.push((epoch, h_loss));
            best.copy_from(&net.store);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    net.store.copy_from(&best);
    Ok(report)
}

/// `(mean squared error, mean deviation error)` over all pairs.
fn evaluate_encoded(net: &RecognitionNet, enc: &[EncodedObs], truths: &[f64]) -> Result<(f64, f64)> {
    let mut est = Vec::with_capacity(truths.len());
    for chunk in enc.chunks(512) {
        let refs: Vec<&EncodedObs> = chunk.iter().collect();
        est.extend(net.estimate(&refs)?.into_iter().flatten());
    }
    if !est.iter().all(|v| v.is_finite()) {
        return Err(AgentError::Diverged {
            stage: "recognition evaluation".into(),
            detail: "non-finite estimate".into(),
        });
    }
    Ok((squared_error(&est, truths)?, mean_deviation_error(&est, truths)?))
}

/// Per-sample estimates for stored samples, in sample order.
pub fn estimate_samples(
    net: &RecognitionNet,
    samples: &[&RecognitionSample],
    ctx: &MapContext,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(512) {
        let enc: Vec<EncodedObs> = chunk.iter().map(|s| net.encode(s, ctx)).collect();
        let refs: Vec<&EncodedObs> = enc.iter().collect();
        out.extend(net.estimate(&refs)?);
    }
    Ok(out)
}

/// Mean deviation error of every episode in the dataset, ordered by
/// episode id; episodes without any pair are skipped.
pub fn episode_errors(net: &RecognitionNet, dataset: &RecognitionDataset) -> Result<Vec<(u64, f64)>> {
    let ctx = dataset.map_context()?;
    let samples: Vec<&RecognitionSample> = dataset.samples.iter().collect();
    let est = estimate_samples(net, &samples, &ctx)?;
    let mut per: std::collections::BTreeMap<u64, (f64, usize)> = Default::default();
    for (s, e) in samples.iter().zip(&est) {
        let entry = per.entry(s.episode).or_default();
        for (a, b) in e.iter().zip(s.truths()) {
            entry.0 += (a - b).abs();
            entry.1 += 1;
        }
    }
    Ok(per
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(ep, (sum, n))| (ep, sum / n as f64))
        .collect())
}

/// Mean deviation error per tick over the whole dataset.
pub fn tick_errors(net: &RecognitionNet, dataset: &RecognitionDataset) -> Result<Vec<(u64, f64)>> {
    let ctx = dataset.map_context()?;
    let samples: Vec<&RecognitionSample> = dataset.samples.iter().collect();
    let est = estimate_samples(net, &samples, &ctx)?;
    let mut per: std::collections::BTreeMap<u64, (f64, usize)> = Default::default();
    for (s, e) in samples.iter().zip(&est) {
        let entry = per.entry(s.tick).or_default();
        for (a, b) in e.iter().zip(s.truths()) {
            entry.0 += (a - b).abs();
            entry.1 += 1;
        }
    }
    Ok(per
        .into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(t, (sum, n))| (t, sum / n as f64))
        .collect())
}
