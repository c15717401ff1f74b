mod common;

use std::sync::Arc;

use common::{agent, world};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svo_sim::{check_failures, spawn_agents, AgentStatus, FailureCause, ScenarioSpec, SimConfig, VehicleState, World};

#[test]
fn failure_checks() {
    let w = world(vec![agent(0, 0.0, 0.0, 0.0, 0.5)]);
    let path = w.path(0);
    let mut v: VehicleState = *w.vehicle(0);
    v.x = 10.0;
    assert_eq!(check_failures(&v, w.network(), path, 4.0), None);
    v.x = 1000.0;
    assert_eq!(check_failures(&v, w.network(), path, 4.0), Some(FailureCause::OffZone));
    v.x = 10.0;
    v.y = 4.0 + 1e-3;
    assert_eq!(check_failures(&v, w.network(), path, 4.0), Some(FailureCause::OffPath));
    v.y = 4.0 - 1e-3;
    assert_eq!(check_failures(&v, w.network(), path, 4.0), None);
}

#[test]
fn crashed_agents_freeze_and_block() {
    let mut w = world(vec![
        agent(0, 0.0, 0.0, 0.0, 0.5),
        agent(1, 3.0, 0.0, 0.0, 0.5),
        agent(2, 30.0, 0.0, 0.0, 0.5),
    ]);
    let ev = w.step(&[Some([1.0, 0.0]), Some([1.0, 0.0]), Some([1.0, 0.0])]).unwrap();
    assert_eq!(ev.collisions.len(), 1);
    assert!(matches!(
        w.status(0),
        AgentStatus::Crashed {
            cause: FailureCause::Collision,
            tick: 1
        }
    ));
    assert!(w.status(2).is_active());
    let frozen = *w.vehicle(0);
    assert_eq!(frozen.speed, 0.0);
    w.step(&[None, None, Some([1.0, 0.0])]).unwrap();
    assert_eq!(*w.vehicle(0), frozen);
    assert_eq!(w.tick(), 2);
}

#[test]
fn missing_action_for_active_agent_is_an_error() {
    let mut w = world(vec![agent(0, 0.0, 0.0, 0.0, 0.5)]);
    assert!(w.step(&[None]).is_err());
    assert!(w.step(&[]).is_err());
    assert!(w.step(&[Some([2.0, 0.0])]).is_err());
}

#[test]
fn straight_driver_arrives() {
    let mut w = world(vec![agent(0, 0.0, 0.0, 0.0, 0.5)]);
    let mut ticks = 0;
    while w.status(0).is_active() && ticks < 200 {
        w.step(&[Some([1.0, 0.0])]).unwrap();
        ticks += 1;
    }
    assert!(matches!(w.status(0), AgentStatus::Succeeded { .. }));
    assert!(w.history(0).len() <= 10);
}

fn rollout(seed: u64) -> Vec<VehicleState> {
    let scenario = ScenarioSpec::merge();
    let net = Arc::new(scenario.build_network().unwrap());
    let agents = spawn_agents(&net, &scenario, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut w = World::new(net, agents, SimConfig::default(), seed).unwrap();
    let mut out = Vec::new();
    for t in 0..130 {
        let acts: Vec<_> = (0..w.len())
            .map(|i| w.is_active(i).then_some([((t + i) % 7) as f64 / 7.0, 0.0]))
            .collect();
        w.step(&acts).unwrap();
        out.extend_from_slice(w.vehicles());
    }
    out
}

#[test]
fn stepping_is_deterministic() {
    let a = rollout(4);
    let b = rollout(4);
    assert!(a
        .iter()
        .zip(&b)
        .all(|(x, y)| x.x.to_bits() == y.x.to_bits() && x.heading.to_bits() == y.heading.to_bits()));
}
