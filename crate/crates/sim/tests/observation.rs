mod common;

use std::sync::Arc;

use common::{agent, open_network, world};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svo_sim::{
    nearest_neighbors, observe, vectorize_static, vectorize_vehicles, ElementKind, GlobalPath, LaneLine, Observation,
    ObservationConfig, Polygon, Polyline, Pose, RoadNetwork, Route, SimConfig, SpawnedAgent, StaticMap, TrackPoint,
    Vec2, VehicleTrack, World,
};

fn sample_map() -> RoadNetwork {
    let mut net = open_network();
    let v = Vec2::new;
    net.centerlines.push(LaneLine {
        line: Polyline::new(vec![v(-20.0, 1.0), v(0.0, 1.0), v(20.0, 8.0)]).unwrap(),
        lane_width: 3.5,
    });
    net.sidelines.push(LaneLine {
        line: Polyline::new(vec![v(-20.0, -3.0), v(25.0, -3.0)]).unwrap(),
        lane_width: 3.2,
    });
    net
}

#[test]
fn static_identity_and_half_turn() {
    let net = sample_map();
    let map = StaticMap::new(&net, 2.0);
    let id = vectorize_static(&map, None, Pose::new(0.0, 0.0, 0.0), 1e3);
    let flipped = vectorize_static(&map, None, Pose::new(0.0, 0.0, std::f64::consts::PI), 1e3);
    let world_pts: Vec<Pose> = net
        .centerlines
        .iter()
        .chain(&net.sidelines)
        .flat_map(|l| l.line.resample(2.0))
        .collect();
    let pts: Vec<_> = id.iter().flat_map(|e| e.points.iter()).collect();
    let fl: Vec<_> = flipped.iter().flat_map(|e| e.points.iter()).collect();
    assert_eq!(pts.len(), world_pts.len());
    for ((p, q), w) in pts.iter().zip(&fl).zip(&world_pts) {
        assert_eq!((p.x, p.y), (w.x, w.y));
        assert!((q.x + w.x).abs() < 1e-9 && (q.y + w.y).abs() < 1e-9);
    }
    assert_eq!(id[1].points[0].aux, Some(3.2));
    assert!(id
        .iter()
        .all(|e| e.points.windows(2).all(|w| w[1].index == w[0].index + 1)));
}

#[test]
fn static_crop_keeps_indices_stable() {
    let net = sample_map();
    let map = StaticMap::new(&net, 2.0);
    let els = vectorize_static(&map, None, Pose::new(20.0, -3.0, 0.0), 6.0);
    let side = els.iter().find(|e| e.kind == ElementKind::Sideline).unwrap();
    assert_eq!(side.points[0].element, 1);
    assert!(side.points[0].index > 0);
    assert!(side.points.iter().all(|p| p.x.hypot(p.y) <= 6.0));
}

#[test]
fn frame_round_trip_is_exact_to_1e9() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let ego = Pose::new(
            rng.gen_range(-1e3..1e3),
            rng.gen_range(-1e3..1e3),
            rng.gen_range(-3.0..3.0),
        );
        let p = Pose::new(
            rng.gen_range(-1e3..1e3),
            rng.gen_range(-1e3..1e3),
            rng.gen_range(-3.0..3.0),
        );
        let back = ego.to_local(ego.to_world(p));
        assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
        assert!((svo_sim::normalize_angle(back.heading - p.heading)).abs() < 1e-9);
    }
}

fn track(n: usize) -> Vec<TrackPoint> {
    (0..n)
        .map(|k| TrackPoint {
            pose: Pose::new(k as f64, 0.0, 0.0),
            speed: 1.0,
        })
        .collect()
}

#[test]
fn vehicle_elements_respect_horizon_and_svo_flag() {
    let short = track(3);
    let long = track(50);
    let tracks = [
        VehicleTrack {
            agent_id: 4,
            points: &short,
            svo: 0.3,
        },
        VehicleTrack {
            agent_id: 9,
            points: &long,
            svo: 0.8,
        },
    ];
    let els = vectorize_vehicles(&tracks, Pose::default(), 10, false);
    assert_eq!(els[0].points.len(), 3);
    assert_eq!(els[1].points.len(), 10);
    assert_eq!(els[1].points[0].x, 40.0);
    assert_eq!(els[1].points[9].x, 49.0);
    assert!(els.iter().all(|e| e.points.iter().all(|p| p.aux.is_none())));
    let exposed = vectorize_vehicles(&tracks, Pose::default(), 10, true);
    assert!(exposed[1].points.iter().all(|p| p.aux == Some(0.8)));
}

#[test]
fn lone_agent_sees_nobody_and_boundary_neighbor_is_included() {
    let w = world(vec![agent(0, 0.0, 0.0, 0.0, 0.5)]);
    let map = StaticMap::new(w.network(), 2.0);
    let cfg = ObservationConfig::default();
    assert!(observe(&w, &map, 0, &cfg, false).unwrap().others.is_empty());
    let w = world(vec![
        agent(0, 0.0, 0.0, 0.0, 0.5),
        agent(1, 30.0, 0.0, 0.0, 0.5),
        agent(2, 0.0, -30.000001, 0.0, 0.5),
    ]);
    let obs = observe(&w, &map, 0, &cfg, false).unwrap();
    assert_eq!(obs.neighbor_ids(), vec![1]);
}

fn crowd(seed: u64, n: usize) -> Vec<SpawnedAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            agent(
                i * 3 + 1,
                rng.gen_range(-25.0..25.0),
                rng.gen_range(-25.0..25.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect()
}

#[test]
fn keeps_the_m_nearest_as_an_exhaustive_sort_would() {
    for seed in 0..20 {
        let agents = crowd(seed, 31);
        let w = world(agents.clone());
        let ego = agents[0].state.position();
        let mut all: Vec<(f64, usize)> = agents[1..]
            .iter()
            .map(|a| (a.state.position().dist(ego), a.state.agent_id))
            .filter(|&(d, _)| d <= 30.0)
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<usize> = all.iter().take(8).map(|x| x.1).collect();
        let got: Vec<usize> = nearest_neighbors(&w, 0, 30.0, 8)
            .iter()
            .map(|&j| w.vehicle(j).agent_id)
            .collect();
        assert_eq!(got, expected);
        let obs = observe(
            &w,
            &StaticMap::new(w.network(), 2.0),
            0,
            &ObservationConfig::default(),
            false,
        )
        .unwrap();
        assert_eq!(obs.neighbor_ids(), expected);
    }
}

#[test]
fn storage_order_does_not_matter() {
    let agents = crowd(7, 15);
    let mut shuffled = agents.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let a = world(agents);
    let b = world(shuffled);
    let cfg = ObservationConfig::default();
    let map = StaticMap::new(a.network(), 2.0);
    for i in 0..a.len() {
        let id = a.vehicle(i).agent_id;
        let j = b.index_of(id).unwrap();
        assert_eq!(
            observe(&a, &map, i, &cfg, true).unwrap(),
            observe(&b, &map, j, &cfg, true).unwrap()
        );
    }
}

fn moved(p: Vec2, t: Pose) -> Vec2 {
    t.to_world(Pose::new(p.x, p.y, 0.0)).position()
}

fn transform_world(net: &RoadNetwork, agents: &[SpawnedAgent], t: Pose) -> World {
    let line = |l: &Polyline| Polyline::new(l.points().iter().map(|&p| moved(p, t)).collect()).unwrap();
    let net2 = RoadNetwork {
        kind: net.kind,
        centerlines: net
            .centerlines
            .iter()
            .map(|l| LaneLine {
                line: line(&l.line),
                lane_width: l.lane_width,
            })
            .collect(),
        sidelines: net
            .sidelines
            .iter()
            .map(|l| LaneLine {
                line: line(&l.line),
                lane_width: l.lane_width,
            })
            .collect(),
        routes: net
            .routes
            .iter()
            .map(|r| Route {
                line: line(&r.line),
                lane_width: r.lane_width,
                conflict: r.conflict,
            })
            .collect(),
        zones: net
            .zones
            .iter()
            .map(|z| Polygon {
                vertices: z.vertices.iter().map(|&p| moved(p, t)).collect(),
            })
            .collect(),
    };
    let agents2 = agents
        .iter()
        .map(|a| {
            let p = t.to_world(a.state.pose());
            let mut s = a.clone();
            s.state.x = p.x;
            s.state.y = p.y;
            s.state.heading = p.heading;
            s.path = GlobalPath {
                line: line(&a.path.line),
                ..a.path.clone()
            };
            s
        })
        .collect();
    World::new(Arc::new(net2), agents2, SimConfig::default(), 0).unwrap()
}

fn assert_close(a: &Observation, b: &Observation) {
    let flat = |o: &Observation| -> Vec<f64> {
        std::iter::once(&o.ego)
            .chain(&o.others)
            .chain(&o.static_elements)
            .flat_map(|e| e.points.iter())
            .flat_map(|p| [p.x, p.y, p.heading.sin(), p.heading.cos(), p.speed.unwrap_or(-1.0)])
            .collect()
    };
    let (fa, fb) = (flat(a), flat(b));
    assert_eq!(fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
    assert_eq!(a.neighbor_ids(), b.neighbor_ids());
}

#[test]
fn rigid_world_motion_leaves_observations_unchanged() {
    let net = sample_map();
    let agents = crowd(3, 12);
    let base = World::new(Arc::new(net.clone()), agents.clone(), SimConfig::default(), 0).unwrap();
    let cfg = ObservationConfig {
        static_crop: 1e4,
        ..ObservationConfig::default()
    };
    for t in [Pose::new(13.0, -7.0, 0.9), Pose::new(-250.0, 40.0, -2.7)] {
        let other = transform_world(&net, &agents, t);
        let (m1, m2) = (
            StaticMap::new(base.network(), 2.0),
            StaticMap::new(other.network(), 2.0),
        );
        for i in 0..base.len() {
            assert_close(
                &observe(&base, &m1, i, &cfg, false).unwrap(),
                &observe(&other, &m2, i, &cfg, false).unwrap(),
            );
        }
    }
}

#[test]
fn recognition_mode_carries_no_svo() {
    let w = world(crowd(1, 10));
    let map = StaticMap::new(w.network(), 2.0);
    for i in 0..w.len() {
        let o = observe(&w, &map, i, &ObservationConfig::default(), false).unwrap();
        assert!(o.is_svo_free() && !o.with_svo);
        let exposed = observe(&w, &map, i, &ObservationConfig::default(), true).unwrap();
        assert_eq!(exposed.without_svos(), o);
    }
}
