//! Offline recognition datasets: closed-loop rollouts with ground-truth
//! SVOs, stored as one JSON record per line with a byte-offset sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svo_sim::{
    vectorize_static, AgentId, ElementKind, GlobalPath, Observation, PointFeature, PolylineElement, Pose, RoadNetwork,
    StaticMap,
};

use crate::episode::{derive_seed, Episode, EpisodeConfig};
use crate::error::{io_err, AgentError, Result};
use crate::features::{EncodedObs, Track};
use crate::policy::{Policy, SvoMode};

pub const DATASET_FORMAT: &str = "svo-recognition-dataset";
pub const DATASET_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub episode: EpisodeConfig,
    pub seed: u64,
    pub episodes: u64,
    pub tick_stride: u64,
}

/// One agent-tick: the recognition-mode view of an observer and the true
/// SVOs of its neighbors.
///
/// Vehicle tracks are stored in the observer frame (observer first); the map
/// part of the observation is rebuilt from the scenario and the observer pose
/// by [`RecognitionSample::observation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognitionSample {
    pub episode: u64,
    pub tick: u64,
    pub agent_id: AgentId,
    pub pose: Pose,
    pub route: usize,
    pub path_start: f64,
    pub vehicles: Vec<Track>,
    /// `(neighbor id, true SVO)` in the order of `vehicles[1..]`.
    pub targets: Vec<(AgentId, f64)>,
}

impl RecognitionSample {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(AgentError::Input(detail));
        if self.vehicles.is_empty() || self.vehicles[0].agent_id != self.agent_id {
            return bad("sample must start with the observer track".into());
        }
        if self.vehicles.len() != self.targets.len() + 1 {
            return bad(format!(
                "{} targets for {} neighbors",
                self.targets.len(),
                self.vehicles.len() - 1
            ));
        }
        for (t, &(id, svo)) in self.vehicles[1..].iter().zip(&self.targets) {
            if t.agent_id != id {
                return bad(format!("target {id} does not match track {}", t.agent_id));
            }
            if !(0.0..=1.0).contains(&svo) {
                return bad(format!("target svo {svo} outside [0, 1]"));
            }
        }
        if self.vehicles.iter().any(|t| t.points.is_empty()) {
            return bad("empty vehicle track".into());
        }
        Ok(())
    }

    pub fn truths(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.1).collect()
    }

    fn static_elements(&self, ctx: &MapContext) -> Vec<PolylineElement> {
        let route = ctx.network.routes.get(self.route);
        let path = GlobalPath::from_route(&ctx.network, self.route, self.path_start, ctx.trip_length);
        let route_line = route.zip(path.as_ref()).map(|(r, p)| (&p.line, r.lane_width));
        vectorize_static(&ctx.map, route_line, self.pose, ctx.crop)
    }

    /// The full recognition-mode observation.
    pub fn observation(&self, ctx: &MapContext) -> Observation {
        let mut vehicles = self.vehicles.iter().enumerate().map(|(i, t)| PolylineElement {
            kind: ElementKind::Vehicle,
            agent_id: Some(t.agent_id),
            points: t
                .points
                .iter()
                .enumerate()
                .map(|(j, p)| PointFeature {
                    x: p[0],
                    y: p[1],
                    heading: p[2],
                    speed: Some(p[3]),
                    aux: None,
                    element: i,
                    index: j,
                })
                .collect(),
        });
        Observation {
            ego: vehicles.next().expect("validated sample"),
            others: vehicles.collect(),
            static_elements: self.static_elements(ctx),
            with_svo: false,
        }
    }

    pub fn encode(&self, ctx: &MapContext) -> EncodedObs {
        EncodedObs::from_tracks(&self.vehicles, &self.static_elements(ctx), ctx.horizon)
    }
}

/// Scenario pieces needed to rebuild the map part of stored observations.
pub struct MapContext {
    pub network: RoadNetwork,
    pub map: StaticMap,
    pub trip_length: f64,
    pub crop: f64,
    pub horizon: usize,
}

impl MapContext {
    pub fn new(config: &EpisodeConfig) -> Result<Self> {
        let network = config.scenario.build_network()?;
        let map = StaticMap::new(&network, config.observation.static_spacing);
        Ok(Self {
            network,
            map,
            trip_length: config.scenario.spawn.trip_length,
            crop: config.observation.static_crop,
            horizon: config.observation.horizon,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognitionDataset {
    pub header: DatasetHeader,
    pub samples: Vec<RecognitionSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub episode: EpisodeConfig,
    pub episodes: u64,
    pub seed: u64,
    /// Record every `tick_stride`-th tick, starting at tick `tick_stride`.
    pub tick_stride: u64,
}

impl DatasetConfig {
    pub fn new(episode: EpisodeConfig, episodes: u64, seed: u64) -> Self {
        Self {
            episode,
            episodes,
            seed,
            tick_stride: 5,
        }
    }
}

/// Records every active agent with at least one neighbor at the sampled
/// ticks; the policy acts with ground-truth SVOs.
pub fn generate_dataset(policy: &mut dyn Policy, config: &DatasetConfig) -> Result<RecognitionDataset> {
    if config.tick_stride == 0 {
        return Err(AgentError::Input("tick_stride must be at least 1".into()));
    }
    config.episode.validate()?;
    let mut samples = Vec::new();
    for e in 0..config.episodes {
        let mut ep = Episode::new(&config.episode, derive_seed(config.seed, e))?;
        while !ep.done() {
            let tick = ep.world.tick();
            if tick > 0 && tick % config.tick_stride == 0 {
                record_tick(&ep, e, &mut samples)?;
            }
            ep.step(policy, SvoMode::TrueSvo, None)?;
        }
    }
    Ok(RecognitionDataset {
        header: DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            episode: config.episode.clone(),
            seed: config.seed,
            episodes: config.episodes,
            tick_stride: config.tick_stride,
        },
        samples,
    })
}

fn record_tick(ep: &Episode, episode: u64, out: &mut Vec<RecognitionSample>) -> Result<()> {
    let world = &ep.world;
    for idx in world.active_indices() {
        let obs = svo_sim::observe(world, &ep.map, idx, &ep.config().observation, false)?;
        if obs.others.is_empty() {
            continue;
        }
        let targets = obs
            .others
            .iter()
            .map(|o| {
                let id = o.agent_id.expect("vehicle element has an id");
                let j = world.index_of(id).expect("observed agent exists");
                (id, world.vehicle(j).svo)
            })
            .collect();
        let path = world.path(idx);
        out.push(RecognitionSample {
            episode,
            tick: world.tick(),
            agent_id: world.vehicle(idx).agent_id,
            pose: world.vehicle(idx).pose(),
            route: path.route,
            path_start: path.start_s,
            vehicles: std::iter::once(&obs.ego)
                .chain(&obs.others)
                .map(Track::from_element)
                .collect(),
            targets,
        });
    }
    Ok(())
}

impl RecognitionDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn map_context(&self) -> Result<MapContext> {
        MapContext::new(&self.header.episode)
    }

    /// Episodes with `episode % 10 == 9` are held out (a 90/10 split by
    /// whole episodes).
    pub fn split(&self) -> (Vec<&RecognitionSample>, Vec<&RecognitionSample>) {
        self.samples.iter().partition(|s| !is_held_out(s.episode))
    }

    pub fn pair_count(&self) -> usize {
        self.samples.iter().map(|s| s.targets.len()).sum()
    }

    /// Writes `path` and the offset sidecar `path.idx`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        let mut offsets = Vec::with_capacity(self.samples.len());
        let mut pos = 0u64;
        let mut put = |w: &mut BufWriter<File>, line: String| -> Result<u64> {
            let at = pos;
            w.write_all(line.as_bytes()).map_err(io_err(path))?;
            w.write_all(b"\n").map_err(io_err(path))?;
            pos += line.len() as u64 + 1;
            Ok(at)
        };
        put(&mut w, to_json(&self.header))?;
        for s in &self.samples {
            offsets.push(put(&mut w, to_json(s))?);
        }
        w.flush().map_err(io_err(path))?;
        let idx = index_path(path);
        let text: String = offsets.iter().map(|o| format!("{o}\n")).collect();
        std::fs::write(&idx, text).map_err(io_err(&idx))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let mut lines = reader.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => parse_header(&line.map_err(io_err(path))?)?,
            None => return Err(dataset_err(1, "missing header")),
        };
        let mut samples = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(io_err(path))?;
            if line.is_empty() {
                continue;
            }
            samples.push(parse_record(&line).map_err(|e| relabel(e, i + 1))?);
        }
        Ok(Self { header, samples })
    }
}

/// Reads the sample starting at byte `offset` (taken from the sidecar).
pub fn read_sample_at(path: &Path, offset: u64) -> Result<RecognitionSample> {
    use std::io::{Seek, SeekFrom};
    let mut f = File::open(path).map_err(io_err(path))?;
    f.seek(SeekFrom::Start(offset)).map_err(io_err(path))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(io_err(path))?;
    parse_record(line.trim_end())
}

pub fn read_index(path: &Path) -> Result<Vec<u64>> {
    let idx = index_path(path);
    let text = std::fs::read_to_string(&idx).map_err(io_err(&idx))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|e| dataset_err(i + 1, format!("bad offset: {e}")))
        })
        .collect()
}

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

pub fn parse_header(line: &str) -> Result<DatasetHeader> {
    let h: DatasetHeader = serde_json::from_str(line).map_err(|e| dataset_err(1, e.to_string()))?;
    if h.format != DATASET_FORMAT {
        return Err(dataset_err(1, format!("unknown format {:?}", h.format)));
    }
    if h.version != DATASET_VERSION {
        return Err(dataset_err(1, format!("unsupported version {}", h.version)));
    }
    Ok(h)
}

/// Parses and validates one sample line.
pub fn parse_record(line: &str) -> Result<RecognitionSample> {
    let s: RecognitionSample = serde_json::from_str(line).map_err(|e| dataset_err(0, e.to_string()))?;
    s.validate().map_err(|e| dataset_err(0, e.to_string()))?;
    Ok(s)
}

pub fn is_held_out(episode: u64) -> bool {
    episode % 10 == 9
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

fn dataset_err(line: usize, detail: impl Into<String>) -> AgentError {
    AgentError::Dataset {
        line,
        detail: detail.into(),
    }
}

fn relabel(e: AgentError, line: usize) -> AgentError {
    match e {
        AgentError::Dataset { detail, .. } => AgentError::Dataset { line, detail },
        other => other,
    }
}
