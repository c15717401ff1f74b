//! Parametric road layouts and randomized agent spawning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{segment_intersection, OrientedRect, Polygon, Polyline, Vec2};
use crate::road::{ConflictZone, GlobalPath, LaneLine, RoadNetwork, Route, ScenarioKind};
use crate::vehicle::{VehicleState, MAX_SPEED};

pub const MAX_AGENTS: usize = 64;

/// Drivable run-off beyond the open ends of every road.
const END_MARGIN: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleneckGeometry {
    pub lane_width: f64,
    pub lanes_in: usize,
    pub lanes_throat: usize,
    pub lanes_out: usize,
    pub approach_length: f64,
    pub taper_length: f64,
    pub throat_length: f64,
    pub exit_length: f64,
}

impl Default for BottleneckGeometry {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            lanes_in: 3,
            lanes_throat: 1,
            lanes_out: 3,
            approach_length: 60.0,
            taper_length: 10.0,
            throat_length: 20.0,
            exit_length: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeGeometry {
    pub lane_width: f64,
    pub main_lanes: usize,
    pub main_length: f64,
    /// Distance along the main road where the ramp joins the rightmost lane.
    pub junction_offset: f64,
    pub ramp_length: f64,
    pub merge_angle_deg: f64,
}

impl Default for MergeGeometry {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            main_lanes: 2,
            main_length: 160.0,
            junction_offset: 90.0,
            ramp_length: 70.0,
            merge_angle_deg: 15.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StraightGeometry {
    pub lane_width: f64,
    pub lanes: usize,
    pub length: f64,
}

impl Default for StraightGeometry {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            lanes: 2,
            length: 120.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Bottleneck(BottleneckGeometry),
    Merge(MergeGeometry),
    Straight(StraightGeometry),
}

impl Geometry {
    pub fn kind(&self) -> ScenarioKind {
        match self {
            Geometry::Bottleneck(_) => ScenarioKind::Bottleneck,
            Geometry::Merge(_) => ScenarioKind::Merge,
            Geometry::Straight(_) => ScenarioKind::Straight,
        }
    }

    fn lane_width(&self) -> f64 {
        match self {
            Geometry::Bottleneck(g) => g.lane_width,
            Geometry::Merge(g) => g.lane_width,
            Geometry::Straight(g) => g.lane_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SvoDistribution {
    Uniform,
    Fixed { value: f64 },
    List { values: Vec<f64> },
}

impl Default for SvoDistribution {
    fn default() -> Self {
        SvoDistribution::Uniform
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRange {
    pub min: usize,
    pub max: usize,
}

impl Default for AgentRange {
    fn default() -> Self {
        Self { min: 8, max: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnParams {
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    /// Minimum bumper-to-bumper gap between spawned vehicles.
    pub min_gap: f64,
    /// Length of each agent's global path.
    pub trip_length: f64,
    /// Spawn points leave at least this much route ahead.
    pub min_trip: f64,
    pub max_attempts: usize,
    pub initial_speed: [f64; 2],
}

impl Default for SpawnParams {
    fn default() -> Self {
        Self {
            vehicle_length: 4.6,
            vehicle_width: 2.0,
            min_gap: 6.0,
            trip_length: 100.0,
            min_trip: 30.0,
            max_attempts: 1000,
            initial_speed: [2.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub geometry: Geometry,
    #[serde(default)]
    pub agents: AgentRange,
    #[serde(default)]
    pub svo: SvoDistribution,
    #[serde(default)]
    pub spawn: SpawnParams,
}

impl ScenarioSpec {
    pub fn new(geometry: Geometry) -> Self {
        Self {
            geometry,
            agents: AgentRange::default(),
            svo: SvoDistribution::default(),
            spawn: SpawnParams::default(),
        }
    }

    pub fn bottleneck() -> Self {
        Self::new(Geometry::Bottleneck(BottleneckGeometry::default()))
    }

    pub fn merge() -> Self {
        Self::new(Geometry::Merge(MergeGeometry::default()))
    }

    pub fn straight() -> Self {
        Self::new(Geometry::Straight(StraightGeometry::default()))
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.agents;
        if a.min < 1 || a.max > MAX_AGENTS || a.min > a.max {
            return Err(SimError::Config(format!(
                "agent range [{}, {}] must lie within [1, {MAX_AGENTS}]",
                a.min, a.max
            )));
        }
        let sp = &self.spawn;
        if !(sp.vehicle_length > 0.0 && sp.vehicle_width > 0.0) {
            return Err(SimError::Config("vehicle dimensions must be positive".into()));
        }
        if !(self.geometry.lane_width() > sp.vehicle_width) {
            return Err(SimError::Config("lane width must exceed vehicle width".into()));
        }
        if !(sp.min_gap >= 0.0 && sp.trip_length > 0.0 && sp.min_trip > 0.0 && sp.max_attempts > 0) {
            return Err(SimError::Config("spawn parameters must be positive".into()));
        }
        let [lo, hi] = sp.initial_speed;
        if !(0.0 <= lo && lo <= hi && hi <= MAX_SPEED) {
            return Err(SimError::Config(format!("initial speed range [{lo}, {hi}] invalid")));
        }
        let bad = |v: f64| !(0.0..=1.0).contains(&v);
        match &self.svo {
            SvoDistribution::Uniform => {}
            SvoDistribution::Fixed { value } if bad(*value) => {
                return Err(SimError::Config(format!("fixed svo {value} outside [0, 1]")));
            }
            SvoDistribution::List { values } if values.iter().any(|&v| bad(v)) || values.len() < a.max => {
                return Err(SimError::Config(format!(
                    "svo list needs at least {} values in [0, 1]",
                    a.max
                )));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build_network(&self) -> Result<RoadNetwork> {
        self.validate()?;
        let net = match &self.geometry {
            Geometry::Bottleneck(g) => build_bottleneck(g)?,
            Geometry::Merge(g) => build_merge(g)?,
            Geometry::Straight(g) => build_straight(g)?,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn draw_agent_count<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(self.agents.min..=self.agents.max)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(SimError::Config(format!("{name} must be positive, got {v}")))
    }
}

fn line(points: Vec<Vec2>, lane_width: f64) -> Result<LaneLine> {
    Ok(LaneLine {
        line: Polyline::new(points).ok_or_else(|| SimError::Config("degenerate polyline".into()))?,
        lane_width,
    })
}

fn lane_offset(k: usize, n: usize, w: f64) -> f64 {
    (k as f64 - (n as f64 - 1.0) / 2.0) * w
}

/// Multi-lane approach tapering into a narrow throat and re-expanding.
pub fn build_bottleneck(g: &BottleneckGeometry) -> Result<RoadNetwork> {
    positive("lane_width", g.lane_width)?;
    positive("approach_length", g.approach_length)?;
    positive("taper_length", g.taper_length)?;
    positive("throat_length", g.throat_length)?;
    positive("exit_length", g.exit_length)?;
    if g.lanes_throat == 0 || g.lanes_throat >= g.lanes_in || g.lanes_throat >= g.lanes_out {
        return Err(SimError::Config(format!(
            "throat must have fewer lanes than approach and exit ({} / {} / {})",
            g.lanes_in, g.lanes_throat, g.lanes_out
        )));
    }
    let w = g.lane_width;
    let x1 = g.approach_length;
    let x2 = x1 + g.taper_length;
    let x3 = x2 + g.throat_length;
    let x4 = x3 + g.taper_length;
    let x5 = x4 + g.exit_length;
    let (hi, ht, ho) = (
        g.lanes_in as f64 * w / 2.0,
        g.lanes_throat as f64 * w / 2.0,
        g.lanes_out as f64 * w / 2.0,
    );
    let v = Vec2::new;
    let zone = Polygon {
        vertices: vec![
            v(-END_MARGIN, -hi),
            v(x1, -hi),
            v(x2, -ht),
            v(x3, -ht),
            v(x4, -ho),
            v(x5 + END_MARGIN, -ho),
            v(x5 + END_MARGIN, ho),
            v(x4, ho),
            v(x3, ht),
            v(x2, ht),
            v(x1, hi),
            v(-END_MARGIN, hi),
        ],
    };
    let map_lane = |k: usize, from: usize, to: usize| -> usize {
        ((k as f64) * (to as f64 - 1.0) / (from as f64 - 1.0)).round() as usize
    };
    let mut routes = Vec::new();
    for k in 0..g.lanes_in {
        let t = map_lane(k, g.lanes_in, g.lanes_throat);
        let o = if g.lanes_out == g.lanes_in {
            k
        } else {
            map_lane(k, g.lanes_in, g.lanes_out)
        };
        let (yi, yt, yo) = (
            lane_offset(k, g.lanes_in, w),
            lane_offset(t, g.lanes_throat, w),
            lane_offset(o, g.lanes_out, w),
        );
        let ll = line(
            vec![v(0.0, yi), v(x1, yi), v(x2, yt), v(x3, yt), v(x4, yo), v(x5, yo)],
            w,
        )?;
        routes.push(Route {
            line: ll.line,
            lane_width: w,
            conflict: Some(ConflictZone { start: x1, end: x2 }),
        });
    }
    let mut centerlines = Vec::new();
    for k in 0..g.lanes_in {
        let y = lane_offset(k, g.lanes_in, w);
        centerlines.push(line(vec![v(0.0, y), v(x1, y)], w)?);
    }
    for k in 0..g.lanes_throat {
        let y = lane_offset(k, g.lanes_throat, w);
        centerlines.push(line(vec![v(x2, y), v(x3, y)], w)?);
    }
    for k in 0..g.lanes_out {
        let y = lane_offset(k, g.lanes_out, w);
        centerlines.push(line(vec![v(x4, y), v(x5, y)], w)?);
    }
    let mut sidelines = vec![
        line(
            vec![v(0.0, -hi), v(x1, -hi), v(x2, -ht), v(x3, -ht), v(x4, -ho), v(x5, -ho)],
            w,
        )?,
        line(
            vec![v(0.0, hi), v(x1, hi), v(x2, ht), v(x3, ht), v(x4, ho), v(x5, ho)],
            w,
        )?,
    ];
    for k in 1..g.lanes_in {
        let y = -hi + k as f64 * w;
        sidelines.push(line(vec![v(0.0, y), v(x1, y)], w)?);
    }
    for k in 1..g.lanes_out {
        let y = -ho + k as f64 * w;
        sidelines.push(line(vec![v(x4, y), v(x5, y)], w)?);
    }
    Ok(RoadNetwork {
        kind: ScenarioKind::Bottleneck,
        centerlines,
        sidelines,
        routes,
        zones: vec![zone],
    })
}

/// Straight main road with an on-ramp joining its rightmost lane.
pub fn build_merge(g: &MergeGeometry) -> Result<RoadNetwork> {
    positive("lane_width", g.lane_width)?;
    positive("main_length", g.main_length)?;
    positive("ramp_length", g.ramp_length)?;
    if g.main_lanes == 0 {
        return Err(SimError::Config("main road needs at least one lane".into()));
    }
    if !(g.merge_angle_deg > 0.0 && g.merge_angle_deg < 90.0) {
        return Err(SimError::Config(format!(
            "merge angle must lie in (0, 90) degrees, got {}",
            g.merge_angle_deg
        )));
    }
    if !(g.junction_offset > 0.0 && g.junction_offset < g.main_length) {
        return Err(SimError::Config("junction must lie on the main road".into()));
    }
    let w = g.lane_width;
    let n = g.main_lanes;
    let half = n as f64 * w / 2.0;
    let alpha = g.merge_angle_deg.to_radians();
    let dir = Vec2::from_angle(alpha);
    let normal = Vec2::new(-alpha.sin(), alpha.cos());
    let y0 = lane_offset(0, n, w);
    let junction = Vec2::new(g.junction_offset, y0);
    let ramp_start = junction.sub(dir.scale(g.ramp_length));
    // the ramp is within one lane width of the right lane this far before
    // the junction
    let lead = (w / alpha.sin()).min(g.ramp_length).min(g.junction_offset);
    let v = Vec2::new;

    let main = Polygon {
        vertices: vec![
            v(-END_MARGIN, -half),
            v(g.main_length + END_MARGIN, -half),
            v(g.main_length + END_MARGIN, half),
            v(-END_MARGIN, half),
        ],
    };
    // ramp strip, extended past the junction so the union stays connected
    let ramp_end = junction.add(dir.scale(w));
    let ramp_back = ramp_start.sub(dir.scale(END_MARGIN));
    let hw = normal.scale(w / 2.0);
    let ramp = Polygon {
        vertices: vec![ramp_back.sub(hw), ramp_end.sub(hw), ramp_end.add(hw), ramp_back.add(hw)],
    };

    let mut routes = Vec::new();
    for k in 0..n {
        let y = lane_offset(k, n, w);
        let ll = line(vec![v(0.0, y), v(g.main_length, y)], w)?;
        routes.push(Route {
            line: ll.line,
            lane_width: w,
            conflict: (k == 0).then_some(ConflictZone {
                start: g.junction_offset - lead,
                end: g.junction_offset,
            }),
        });
    }
    let ramp_route = line(vec![ramp_start, junction, v(g.main_length, y0)], w)?;
    routes.push(Route {
        line: ramp_route.line,
        lane_width: w,
        conflict: Some(ConflictZone {
            start: g.ramp_length - lead,
            end: g.ramp_length,
        }),
    });

    let mut centerlines: Vec<LaneLine> = (0..n)
        .map(|k| {
            let y = lane_offset(k, n, w);
            line(vec![v(0.0, y), v(g.main_length, y)], w)
        })
        .collect::<Result<_>>()?;
    centerlines.push(line(vec![ramp_start, junction], w)?);

    // ramp edges up to where they cross the main road's outer edge
    let far = v(g.main_length, -half);
    let edge_hit =
        |from: Vec2| segment_intersection(from, from.add(dir.scale(g.ramp_length + 2.0 * w)), v(-1e3, -half), far);
    let upper_from = ramp_start.add(hw);
    let lower_from = ramp_start.sub(hw);
    let upper_hit = edge_hit(upper_from).ok_or_else(|| SimError::Config("ramp does not reach main road".into()))?;
    let lower_hit = edge_hit(lower_from).ok_or_else(|| SimError::Config("ramp does not reach main road".into()))?;
    let mut sidelines = vec![line(vec![v(0.0, half), v(g.main_length, half)], w)?];
    if upper_hit.x > 1e-6 {
        sidelines.push(line(vec![v(0.0, -half), v(upper_hit.x, -half)], w)?);
    }
    if lower_hit.x < g.main_length - 1e-6 {
        sidelines.push(line(vec![v(lower_hit.x, -half), far], w)?);
    }
    sidelines.push(line(vec![upper_from, upper_hit], w)?);
    sidelines.push(line(vec![lower_from, lower_hit], w)?);
    for k in 1..n {
        let y = -half + k as f64 * w;
        sidelines.push(line(vec![v(0.0, y), v(g.main_length, y)], w)?);
    }

    Ok(RoadNetwork {
        kind: ScenarioKind::Merge,
        centerlines,
        sidelines,
        routes,
        zones: vec![main, ramp],
    })
}

/// Plain multi-lane straight road without conflicts.
pub fn build_straight(g: &StraightGeometry) -> Result<RoadNetwork> {
    positive("lane_width", g.lane_width)?;
    positive("length", g.length)?;
    if g.lanes == 0 {
        return Err(SimError::Config("straight road needs at least one lane".into()));
    }
    let w = g.lane_width;
    let half = g.lanes as f64 * w / 2.0;
    let v = Vec2::new;
    let mut centerlines = Vec::new();
    let mut routes = Vec::new();
    for k in 0..g.lanes {
        let y = lane_offset(k, g.lanes, w);
        let ll = line(vec![v(0.0, y), v(g.length, y)], w)?;
        routes.push(Route {
            line: ll.line.clone(),
            lane_width: w,
            conflict: None,
        });
        centerlines.push(ll);
    }
    let mut sidelines = Vec::new();
    for k in 0..=g.lanes {
        let y = -half + k as f64 * w;
        sidelines.push(line(vec![v(0.0, y), v(g.length, y)], w)?);
    }
    Ok(RoadNetwork {
        kind: ScenarioKind::Straight,
        centerlines,
        sidelines,
        routes,
        zones: vec![Polygon {
            vertices: vec![
                v(-END_MARGIN, -half),
                v(g.length + END_MARGIN, -half),
                v(g.length + END_MARGIN, half),
                v(-END_MARGIN, half),
            ],
        }],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpawnedAgent {
    pub state: VehicleState,
    pub path: GlobalPath,
}

/// Places `n` agents by rejection sampling in agent-id order.
pub fn spawn_agents<R: Rng>(
    network: &RoadNetwork,
    scenario: &ScenarioSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SpawnedAgent>> {
    if n == 0 || n > MAX_AGENTS {
        return Err(SimError::Config(format!("agent count {n} outside [1, {MAX_AGENTS}]")));
    }
    let sp = &scenario.spawn;
    let mut placed: Vec<SpawnedAgent> = Vec::with_capacity(n);
    let mut guards: Vec<OrientedRect> = Vec::with_capacity(n);
    for id in 0..n {
        let mut ok = None;
        for _ in 0..sp.max_attempts {
            let route = rng.gen_range(0..network.routes.len());
            let r = &network.routes[route];
            let s_max = r.line.length() - sp.min_trip;
            if s_max <= 0.0 {
                continue;
            }
            let s = rng.gen_range(0.0..s_max);
            let pose = r.line.pose_at(s);
            // inflate longitudinally by half the gap so two guards touching
            // means exactly the minimum bumper gap
            let guard = OrientedRect {
                center: pose.position(),
                heading: pose.heading,
                length: sp.vehicle_length + sp.min_gap,
                width: sp.vehicle_width,
            };
            if !network.in_zone(pose.position()) || guards.iter().any(|g| g.overlaps(&guard)) {
                continue;
            }
            ok = Some((route, s, pose, guard));
            break;
        }
        let Some((route, s, pose, guard)) = ok else {
            return Err(SimError::Spawn {
                placed: placed.len(),
                requested: n,
                detail: format!("no free slot for agent {id} after {} attempts", sp.max_attempts),
            });
        };
        let path = GlobalPath::from_route(network, route, s, sp.trip_length)
            .ok_or_else(|| SimError::Config(format!("empty path for agent {id}")))?;
        let [lo, hi] = sp.initial_speed;
        let speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let svo = match &scenario.svo {
            SvoDistribution::Uniform => rng.gen_range(0.0..=1.0),
            SvoDistribution::Fixed { value } => *value,
            SvoDistribution::List { values } => *values
                .get(id)
                .ok_or_else(|| SimError::Config(format!("svo list has no entry for agent {id}")))?,
        };
        guards.push(guard);
        placed.push(SpawnedAgent {
            state: VehicleState {
                agent_id: id,
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                speed,
                length: sp.vehicle_length,
                width: sp.vehicle_width,
                svo,
            },
            path,
        });
    }
    Ok(placed)
}
