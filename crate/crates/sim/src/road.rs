//! Road networks, per-agent global paths, collisions and failure checks.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{Polygon, Polyline, Vec2};
use crate::vehicle::{AgentId, VehicleState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Bottleneck,
    Merge,
    Straight,
}

/// A polyline annotated with the width of the lane it belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneLine {
    pub line: Polyline,
    pub lane_width: f64,
}

/// Stretch of a route, in arc length, where it shares space with other
/// routes that also carry a zone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictZone {
    pub start: f64,
    pub end: f64,
}

impl ConflictZone {
    fn shifted(self, ds: f64) -> Self {
        Self {
            start: self.start - ds,
            end: self.end - ds,
        }
    }
}

/// A drivable lane sequence from an entry to an exit of the map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub line: Polyline,
    pub lane_width: f64,
    pub conflict: Option<ConflictZone>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub kind: ScenarioKind,
    pub centerlines: Vec<LaneLine>,
    pub sidelines: Vec<LaneLine>,
    pub routes: Vec<Route>,
    /// Drivable area as a union of simple polygons.
    pub zones: Vec<Polygon>,
}

impl RoadNetwork {
    pub fn in_zone(&self, p: Vec2) -> bool {
        self.zones.iter().any(|z| z.contains(p))
    }

    /// Structural checks: polylines have at least two points, widths are
    /// positive and every route stays inside the drivable zone.
    pub fn validate(&self) -> Result<()> {
        if self.routes.is_empty() || self.zones.is_empty() {
            return Err(SimError::Config("network has no routes or no drivable zone".into()));
        }
        for l in self.centerlines.iter().chain(&self.sidelines) {
            if l.line.points().len() < 2 || !(l.lane_width > 0.0) {
                return Err(SimError::Config("degenerate lane line".into()));
            }
        }
        for (k, r) in self.routes.iter().enumerate() {
            if !(r.lane_width > 0.0) {
                return Err(SimError::Config(format!("route {k} has non-positive lane width")));
            }
            for p in r.line.resample(0.5) {
                if !self.in_zone(p.position()) {
                    return Err(SimError::Config(format!(
                        "route {k} leaves the drivable zone at ({:.2}, {:.2})",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The part of a route one agent is asked to drive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalPath {
    pub route: usize,
    /// Arc length along the route where the path starts.
    pub start_s: f64,
    pub line: Polyline,
    /// Conflict zone in path coordinates; may start behind the path start.
    pub conflict: Option<ConflictZone>,
}

impl GlobalPath {
    pub fn from_route(network: &RoadNetwork, route: usize, start_s: f64, length: f64) -> Option<Self> {
        let r = network.routes.get(route)?;
        let line = r.line.slice(start_s, start_s + length)?;
        Some(Self {
            route,
            start_s,
            line,
            conflict: r.conflict.map(|c| c.shifted(start_s)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    Collision,
    OffZone,
    OffPath,
}

impl FailureCause {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureCause::Collision => "collision",
            FailureCause::OffZone => "off_zone",
            FailureCause::OffPath => "off_path",
        }
    }
}

/// Overlapping footprint pairs `(a, b)` with `a < b`, by agent id.
pub fn detect_collisions(vehicles: &[VehicleState]) -> BTreeSet<(AgentId, AgentId)> {
    let rects: Vec<_> = vehicles.iter().map(VehicleState::footprint).collect();
    let mut out = BTreeSet::new();
    for i in 0..vehicles.len() {
        for j in i + 1..vehicles.len() {
            // bounding-circle prefilter
            let reach =
                (vehicles[i].length.hypot(vehicles[i].width) + vehicles[j].length.hypot(vehicles[j].width)) / 2.0;
            if vehicles[i].position().dist(vehicles[j].position()) > reach {
                continue;
            }
            if rects[i].overlaps(&rects[j]) {
                let (a, b) = (vehicles[i].agent_id, vehicles[j].agent_id);
                out.insert((a.min(b), a.max(b)));
            }
        }
    }
    out
}

/// Zone departure first, then path deviation beyond `max_deviation`.
pub fn check_failures(
    vehicle: &VehicleState,
    network: &RoadNetwork,
    path: &GlobalPath,
    max_deviation: f64,
) -> Option<FailureCause> {
    if !network.in_zone(vehicle.position()) {
        return Some(FailureCause::OffZone);
    }
    if path.line.project(vehicle.position()).distance > max_deviation {
        return Some(FailureCause::OffPath);
    }
    None
}
