mod common;

use common::random_obs;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svo_agents::{Actor, Critic, DecisionConfig, DecisionInput, Episode, EpisodeConfig, PolicyContext, SvoMode};
use svo_nn::fd_check;
use svo_nn::{Graph, Tensor};
use svo_sim::ScenarioSpec;

fn small(seed: u64) -> DecisionConfig {
    DecisionConfig {
        vehicle_dim: 12,
        svo_dim: 4,
        n_heads: 2,
        encoder_hidden: 10,
        decoder_hidden: 10,
        seed,
    }
}

fn random_input(rng: &mut ChaCha8Rng, vehicles: usize, statics: usize) -> DecisionInput {
    DecisionInput {
        obs: random_obs(rng, vehicles, statics),
        svos: (0..vehicles).map(|_| rng.gen_range(0.0..=1.0)).collect(),
    }
}

#[test]
fn decisions_are_deterministic_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut actor = Actor::new(small(2)).unwrap();
    for id in actor.store.ids().collect::<Vec<_>>() {
        for v in actor.store.get_mut(id).data_mut() {
            *v *= 10.0;
        }
    }
    for _ in 0..200 {
        let (nv, ns) = (rng.gen_range(1..6), rng.gen_range(0..4));
        let input = random_input(&mut rng, nv, ns);
        let a = actor.decide_batch(&[&input]).unwrap();
        let b = actor.decide_batch(&[&input]).unwrap();
        assert_eq!(a, b);
        assert!(a[0].action.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn joint_neighbor_permutation_leaves_action_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let actor = Actor::new(DecisionConfig::default()).unwrap();
    for _ in 0..20 {
        let input = random_input(&mut rng, 7, 3);
        let mut perm: Vec<usize> = (1..7).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = input.clone();
        for (slot, &src) in perm.iter().enumerate() {
            shuffled.obs.vehicles[slot + 1] = input.obs.vehicles[src].clone();
            shuffled.svos[slot + 1] = input.svos[src];
        }
        shuffled.obs.statics.reverse();
        let a = actor.decide_batch(&[&input]).unwrap()[0].action;
        let b = actor.decide_batch(&[&shuffled]).unwrap()[0].action;
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
    }
}

#[test]
fn svo_inputs_reach_the_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let actor = Actor::new(small(5)).unwrap();
    let input = random_input(&mut rng, 3, 2);
    let mut other = input.clone();
    other.svos[1] = 1.0 - other.svos[1];
    assert_ne!(
        actor.decide_batch(&[&input]).unwrap()[0].action,
        actor.decide_batch(&[&other]).unwrap()[0].action
    );
}

#[test]
fn mismatched_svos_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let actor = Actor::new(small(7)).unwrap();
    let mut input = random_input(&mut rng, 3, 1);
    input.svos.pop();
    assert!(actor.decide_batch(&[&input]).is_err());
}

#[test]
fn decide_from_live_observation() {
    let ep = Episode::new(&EpisodeConfig::new(ScenarioSpec::merge()), 8).unwrap();
    let ctx: PolicyContext<'_> = ep.context(SvoMode::TrueSvo, None);
    let input = ctx.policy_input(0).unwrap();
    let actor = Actor::new(small(9)).unwrap();
    let out = actor.decide(&input, 10).unwrap();
    assert!(out.mean.is_some() && out.log_std.is_some());
    let mut bad = input.clone();
    bad.neighbor_svos.push(0.5);
    assert!(actor.decide(&bad, 10).is_err());
}

#[test]
fn actor_output_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut actor = Actor::new(DecisionConfig::default()).unwrap();
    let inputs: Vec<DecisionInput> = (0..3).map(|_| random_input(&mut rng, 4, 3)).collect();
    let refs: Vec<&DecisionInput> = inputs.iter().collect();
    let weights: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // weighted sum of the mean and log-std outputs
    let objective = |actor: &Actor, g: &mut Graph| {
        let out = actor.forward(g, &refs).unwrap();
        let both = g.concat_cols(&[out.mean, out.log_std]).unwrap();
        let w = g.constant(Tensor::matrix(3, 4, weights.clone()));
        let prod = g.mul(both, w).unwrap();
        g.sum(prod)
    };
    let mut g = Graph::new();
    let root = objective(&actor, &mut g);
    let grads = g.backward(root).unwrap().params(&actor.store);
    let mut store = actor.store.clone();
    let report = fd_check(
        &mut store,
        &grads,
        |s| {
            actor.store.copy_from(s);
            let mut g = Graph::new();
            let root = objective(&actor, &mut g);
            (g.value(root).item(), g.kink_signature())
        },
        100,
        1e-4,
        11,
    )
    .unwrap();
    assert!(report.max_rel < 1e-4, "{report:?}");
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut critic = Critic::new(small(13), "critic").unwrap();
    let inputs: Vec<DecisionInput> = (0..4).map(|_| random_input(&mut rng, 3, 2)).collect();
    let refs: Vec<&DecisionInput> = inputs.iter().collect();
    let actions: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let objective = |critic: &Critic, g: &mut Graph| {
        let a = g.constant(Tensor::matrix(4, 2, actions.clone()));
        let q = critic.forward(g, &refs, a).unwrap();
        let y = g.constant(Tensor::column(&targets));
        let d = g.sub(q, y).unwrap();
        let sq = g.square(d);
        g.mean(sq)
    };
    let mut g = Graph::new();
    let root = objective(&critic, &mut g);
    let grads = g.backward(root).unwrap().params(&critic.store);
    let mut store = critic.store.clone();
    let report = fd_check(
        &mut store,
        &grads,
        |s| {
            critic.store.copy_from(s);
            let mut g = Graph::new();
            let root = objective(&critic, &mut g);
            (g.value(root).item(), g.kink_signature())
        },
        100,
        1e-4,
        14,
    )
    .unwrap();
    assert!(report.max_rel < 1e-4, "{report:?}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actor.bin");
    let actor = Actor::new(small(15)).unwrap();
    actor.save(&path).unwrap();
    let back = Actor::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let input = random_input(&mut rng, 4, 2);
    assert_eq!(
        actor.decide_batch(&[&input]).unwrap(),
        back.decide_batch(&[&input]).unwrap()
    );
}
