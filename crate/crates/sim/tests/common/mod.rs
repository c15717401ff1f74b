#![allow(dead_code)]

use std::sync::Arc;

use svo_sim::{
    GlobalPath, Polygon, Polyline, RoadNetwork, Route, ScenarioKind, SimConfig, SpawnedAgent, Vec2, VehicleState, World,
};

/// Large open square with a single eastbound route through the origin.
pub fn open_network() -> RoadNetwork {
    let v = Vec2::new;
    RoadNetwork {
        kind: ScenarioKind::Straight,
        centerlines: vec![],
        sidelines: vec![],
        routes: vec![Route {
            line: Polyline::new(vec![v(-200.0, 0.0), v(200.0, 0.0)]).unwrap(),
            lane_width: 3.5,
            conflict: None,
        }],
        zones: vec![Polygon {
            vertices: vec![v(-200.0, -200.0), v(200.0, -200.0), v(200.0, 200.0), v(-200.0, 200.0)],
        }],
    }
}

pub fn agent(id: usize, x: f64, y: f64, heading: f64, svo: f64) -> SpawnedAgent {
    let line = Polyline::new(vec![
        Vec2::new(x, y),
        Vec2::new(x + 100.0 * heading.cos(), y + 100.0 * heading.sin()),
    ])
    .unwrap();
    SpawnedAgent {
        state: VehicleState {
            agent_id: id,
            x,
            y,
            heading,
            speed: 2.0,
            length: 4.6,
            width: 2.0,
            svo,
        },
        path: GlobalPath {
            route: 0,
            start_s: 0.0,
            line,
            conflict: None,
        },
    }
}

pub fn world(agents: Vec<SpawnedAgent>) -> World {
    World::new(Arc::new(open_network()), agents, SimConfig::default(), 0).unwrap()
}
