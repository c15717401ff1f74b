//! Vectorized, ego-centred observations of the map and of nearby vehicles.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{Polyline, Pose};
use crate::road::RoadNetwork;
use crate::vehicle::AgentId;
use crate::world::{TrackPoint, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Neighbor radius in metres (closed ball).
    pub radius: f64,
    pub max_neighbors: usize,
    /// Number of most recent ticks per vehicle element.
    pub horizon: usize,
    pub static_spacing: f64,
    pub static_crop: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            radius: 30.0,
            max_neighbors: 8,
            horizon: 10,
            static_spacing: 2.0,
            static_crop: 60.0,
        }
    }
}

impl ObservationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius > 0.0 && self.horizon >= 1 && self.static_spacing > 0.0 && self.static_crop > 0.0 {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid observation settings {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Centerline,
    Sideline,
    Route,
    Vehicle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFeature {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    /// Lane width on static elements; SVO on vehicle elements when exposed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<f64>,
    pub element: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolylineElement {
    pub kind: ElementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<AgentId>,
    pub points: Vec<PointFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: PolylineElement,
    pub others: Vec<PolylineElement>,
    #[serde(rename = "static")]
    pub static_elements: Vec<PolylineElement>,
    pub with_svo: bool,
}

impl Observation {
    pub fn neighbor_ids(&self) -> Vec<AgentId> {
        self.others.iter().filter_map(|e| e.agent_id).collect()
    }

    /// True when no vehicle point carries an SVO value.
    pub fn is_svo_free(&self) -> bool {
        std::iter::once(&self.ego)
            .chain(&self.others)
            .all(|e| e.points.iter().all(|p| p.aux.is_none()))
    }

    /// Writes SVO values into the vehicle points' aux slot.
    pub fn with_svos(mut self, ego_svo: f64, neighbor_svos: &[f64]) -> Result<Self> {
        if neighbor_svos.len() != self.others.len() {
            return Err(SimError::InputDomain(format!(
                "{} svo values for {} neighbors",
                neighbor_svos.len(),
                self.others.len()
            )));
        }
        for (e, &s) in std::iter::once(&mut self.ego)
            .chain(self.others.iter_mut())
            .zip(std::iter::once(&ego_svo).chain(neighbor_svos))
        {
            for p in &mut e.points {
                p.aux = Some(s);
            }
        }
        self.with_svo = true;
        Ok(self)
    }

    /// Removes every SVO value.
    pub fn without_svos(mut self) -> Self {
        for e in std::iter::once(&mut self.ego).chain(self.others.iter_mut()) {
            for p in &mut e.points {
                p.aux = None;
            }
        }
        self.with_svo = false;
        self
    }
}

/// World-frame static polylines resampled at a fixed spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticMap {
    elements: Vec<(ElementKind, f64, Vec<Pose>)>,
    spacing: f64,
}

impl StaticMap {
    pub fn new(network: &RoadNetwork, spacing: f64) -> Self {
        let elements = network
            .centerlines
            .iter()
            .map(|l| (ElementKind::Centerline, l))
            .chain(network.sidelines.iter().map(|l| (ElementKind::Sideline, l)))
            .map(|(k, l)| (k, l.lane_width, l.line.resample(spacing)))
            .collect();
        Self { elements, spacing }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

fn to_static_element(
    kind: ElementKind,
    element: usize,
    lane_width: f64,
    poses: &[Pose],
    ego: Pose,
    crop: f64,
) -> Option<PolylineElement> {
    let points: Vec<PointFeature> = poses
        .iter()
        .enumerate()
        .filter_map(|(j, &p)| {
            let l = ego.to_local(p);
            (l.x.hypot(l.y) <= crop).then_some(PointFeature {
                x: l.x,
                y: l.y,
                heading: l.heading,
                speed: None,
                aux: Some(lane_width),
                element,
                index: j,
            })
        })
        .collect();
    (!points.is_empty()).then_some(PolylineElement {
        kind,
        agent_id: None,
        points,
    })
}

/// Map lines followed by the ego's own route, in the ego frame, cropped to
/// `crop` metres. Element and point indices refer to the uncropped lists.
pub fn vectorize_static(
    map: &StaticMap,
    route: Option<(&Polyline, f64)>,
    ego: Pose,
    crop: f64,
) -> Vec<PolylineElement> {
    let mut out: Vec<PolylineElement> = map
        .elements
        .iter()
        .enumerate()
        .filter_map(|(i, (kind, w, poses))| to_static_element(*kind, i, *w, poses, ego, crop))
        .collect();
    if let Some((line, lane_width)) = route {
        let poses = line.resample(map.spacing);
        out.extend(to_static_element(
            ElementKind::Route,
            map.len(),
            lane_width,
            &poses,
            ego,
            crop,
        ));
    }
    out
}

/// One vehicle's recent track as input to [`vectorize_vehicles`].
#[derive(Clone, Debug, PartialEq)]
pub struct VehicleTrack<'a> {
    pub agent_id: AgentId,
    pub points: &'a [TrackPoint],
    pub svo: f64,
}

/// Vehicle elements in the ego frame, element index by input order, points
/// oldest first and limited to the latest `horizon` ticks.
pub fn vectorize_vehicles(
    tracks: &[VehicleTrack<'_>],
    ego: Pose,
    horizon: usize,
    expose_svo: bool,
) -> Vec<PolylineElement> {
    tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let skip = t.points.len().saturating_sub(horizon);
            let points = t.points[skip..]
                .iter()
                .enumerate()
                .map(|(j, tp)| {
                    let l = ego.to_local(tp.pose);
                    PointFeature {
                        x: l.x,
                        y: l.y,
                        heading: l.heading,
                        speed: Some(tp.speed),
                        aux: expose_svo.then_some(t.svo),
                        element: i,
                        index: j,
                    }
                })
                .collect();
            PolylineElement {
                kind: ElementKind::Vehicle,
                agent_id: Some(t.agent_id),
                points,
            }
        })
        .collect()
}

/// Present vehicles within `radius` of agent `idx`, nearest first, ties by
/// agent id, at most `max` of them. Returns storage indices.
pub fn nearest_neighbors(world: &World, idx: usize, radius: f64, max: usize) -> Vec<usize> {
    let me = world.vehicle(idx).position();
    let mut cand: Vec<(f64, AgentId, usize)> = (0..world.len())
        .filter(|&j| j != idx && world.is_present(j))
        .filter_map(|j| {
            let v = world.vehicle(j);
            let d = v.position().dist(me);
            (d <= radius).then_some((d, v.agent_id, j))
        })
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(max);
    cand.into_iter().map(|c| c.2).collect()
}

/// Partial view of agent `idx`.
pub fn observe(
    world: &World,
    map: &StaticMap,
    idx: usize,
    cfg: &ObservationConfig,
    expose_svo: bool,
) -> Result<Observation> {
    if idx >= world.len() || !world.is_active(idx) {
        return Err(SimError::NotActive(idx));
    }
    let ego_state = world.vehicle(idx);
    let ego = ego_state.pose();
    let neighbors = nearest_neighbors(world, idx, cfg.radius, cfg.max_neighbors);
    let buffers: Vec<Vec<TrackPoint>> = std::iter::once(idx)
        .chain(neighbors.iter().copied())
        .map(|j| world.history(j).iter().copied().collect())
        .collect();
    let tracks: Vec<VehicleTrack<'_>> = std::iter::once(idx)
        .chain(neighbors.iter().copied())
        .zip(&buffers)
        .map(|(j, b)| VehicleTrack {
            agent_id: world.vehicle(j).agent_id,
            points: b,
            svo: world.vehicle(j).svo,
        })
        .collect();
    let mut vehicles = vectorize_vehicles(&tracks, ego, cfg.horizon, expose_svo).into_iter();
    let ego_el = vehicles.next().expect("ego element");
    let route_width = world.network().routes[world.path(idx).route].lane_width;
    let static_elements = vectorize_static(map, Some((&world.path(idx).line, route_width)), ego, cfg.static_crop);
    Ok(Observation {
        ego: ego_el,
        others: vehicles.collect(),
        static_elements,
        with_svo: expose_svo,
    })
}
