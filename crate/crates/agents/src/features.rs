//! Fixed-width numeric rows for the network encoders.

use serde::{Deserialize, Serialize};
use svo_sim::{ElementKind, Observation, PolylineElement};

/// Per-point width of vehicle rows: `x, y, cos h, sin h, speed, age`.
pub const VEHICLE_FEATURES: usize = 6;
/// Per-point width of map rows: `x, y, cos h, sin h, lane width, kind one-hot × 3`.
pub const STATIC_FEATURES: usize = 8;

const POSITION_SCALE: f64 = 30.0;
const SPEED_SCALE: f64 = 6.0;
const LANE_SCALE: f64 = 3.5;

/// A vehicle track in the ego frame: `[x, y, heading, speed]` per tick,
/// oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub agent_id: usize,
    pub points: Vec<[f64; 4]>,
}

impl Track {
    pub fn from_element(e: &PolylineElement) -> Self {
        Self {
            agent_id: e.agent_id.unwrap_or(usize::MAX),
            points: e
                .points
                .iter()
                .map(|p| [p.x, p.y, p.heading, p.speed.unwrap_or(0.0)])
                .collect(),
        }
    }
}

/// Encoder input for one observation: vehicle elements (ego first) and map
/// elements, each a row-major block of features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedObs {
    pub vehicles: Vec<Vec<f64>>,
    pub statics: Vec<Vec<f64>>,
}

impl EncodedObs {
    pub fn from_observation(obs: &Observation, horizon: usize) -> Self {
        let vehicles = std::iter::once(&obs.ego)
            .chain(&obs.others)
            .map(|e| vehicle_rows(&Track::from_element(e), horizon))
            .collect();
        let statics = obs.static_elements.iter().map(static_rows).collect();
        Self { vehicles, statics }
    }

    pub fn from_tracks(tracks: &[Track], statics: &[PolylineElement], horizon: usize) -> Self {
        Self {
            vehicles: tracks.iter().map(|t| vehicle_rows(t, horizon)).collect(),
            statics: statics.iter().map(static_rows).collect(),
        }
    }

    /// Number of neighbor elements (vehicles other than the ego).
    pub fn neighbors(&self) -> usize {
        self.vehicles.len().saturating_sub(1)
    }

    pub fn without_map(mut self) -> Self {
        self.statics.clear();
        self
    }
}

pub fn vehicle_rows(t: &Track, horizon: usize) -> Vec<f64> {
    let n = t.points.len();
    let mut out = Vec::with_capacity(n * VEHICLE_FEATURES);
    for (j, p) in t.points.iter().enumerate() {
        let age = (n - 1 - j) as f64 / horizon.max(1) as f64;
        out.extend_from_slice(&[
            p[0] / POSITION_SCALE,
            p[1] / POSITION_SCALE,
            p[2].cos(),
            p[2].sin(),
            p[3] / SPEED_SCALE,
            age,
        ]);
    }
    out
}

pub fn static_rows(e: &PolylineElement) -> Vec<f64> {
    let onehot = match e.kind {
        ElementKind::Centerline => [1.0, 0.0, 0.0],
        ElementKind::Sideline => [0.0, 1.0, 0.0],
        ElementKind::Route | ElementKind::Vehicle => [0.0, 0.0, 1.0],
    };
    let mut out = Vec::with_capacity(e.points.len() * STATIC_FEATURES);
    for p in &e.points {
        out.extend_from_slice(&[
            p.x / POSITION_SCALE,
            p.y / POSITION_SCALE,
            p.heading.cos(),
            p.heading.sin(),
            p.aux.unwrap_or(LANE_SCALE) / LANE_SCALE,
        ]);
        out.extend_from_slice(&onehot);
    }
    out
}
