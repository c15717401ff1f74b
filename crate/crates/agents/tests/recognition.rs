mod common;

use common::random_obs;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svo_agents::recognition::{squared_error, RecognitionNet};
use svo_agents::{
    generate_dataset, mean_deviation_error, recognition_loss, train_recognition, DatasetConfig, EncodedObs,
    EpisodeConfig, RecognitionConfig, RecognitionVariant, ScriptedPolicy, TrainConfig,
};
use svo_nn::fd_check;
use svo_nn::Graph;
use svo_sim::{ScenarioSpec, SvoDistribution};

fn small(variant: RecognitionVariant, seed: u64) -> RecognitionNet {
    RecognitionNet::new(RecognitionConfig {
        d_model: 16,
        n_heads: 2,
        encoder_hidden: 12,
        decoder_hidden: 12,
        variant,
        seed,
    })
    .unwrap()
}

#[test]
fn zero_neighbors_give_empty_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = small(RecognitionVariant::Full, 0);
    let obs = random_obs(&mut rng, 1, 3);
    assert_eq!(net.estimate(&[&obs]).unwrap(), vec![Vec::<f64>::new()]);
}

#[test]
fn permuting_neighbors_permutes_estimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for variant in [
        RecognitionVariant::Full,
        RecognitionVariant::WithoutMap,
        RecognitionVariant::WithoutAttention,
    ] {
        let net = small(variant, 3);
        for _ in 0..20 {
            let obs = random_obs(&mut rng, 6, 4);
            let mut perm: Vec<usize> = (1..6).collect();
            perm.shuffle(&mut rng);
            let mut shuffled = obs.clone();
            for (slot, &src) in perm.iter().enumerate() {
                shuffled.vehicles[slot + 1] = obs.vehicles[src].clone();
            }
            let a = net.estimate(&[&obs]).unwrap().remove(0);
            let b = net.estimate(&[&shuffled]).unwrap().remove(0);
            for (slot, &src) in perm.iter().enumerate() {
                assert!((b[slot] - a[src - 1]).abs() < 1e-12, "{variant:?}");
            }
        }
    }
}

#[test]
fn batching_does_not_mix_observations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = small(RecognitionVariant::Full, 5);
    let obs: Vec<EncodedObs> = (0..8).map(|i| random_obs(&mut rng, 1 + i % 4, i % 3)).collect();
    let refs: Vec<&EncodedObs> = obs.iter().collect();
    let batched = net.estimate(&refs).unwrap();
    for (o, b) in obs.iter().zip(&batched) {
        let single = net.estimate(&[o]).unwrap().remove(0);
        assert_eq!(single.len(), o.neighbors());
        for (x, y) in single.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn estimates_stay_in_unit_interval() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut net = small(RecognitionVariant::Full, 7);
    // large weights push the tanh into saturation
    for id in net.store.ids().collect::<Vec<_>>() {
        for v in net.store.get_mut(id).data_mut() {
            *v *= 20.0;
        }
    }
    let mut count = 0;
    while count < 10_000 {
        let obs: Vec<EncodedObs> = (0..50).map(|_| random_obs(&mut rng, 9, 2)).collect();
        let refs: Vec<&EncodedObs> = obs.iter().collect();
        for e in net.estimate(&refs).unwrap().into_iter().flatten() {
            assert!((0.0..=1.0).contains(&e), "{e}");
            count += 1;
        }
    }
}

#[test]
fn map_free_variants_ignore_map_elements() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for variant in [RecognitionVariant::WithoutMap, RecognitionVariant::WithoutAttention] {
        let net = small(variant, 9);
        let obs = random_obs(&mut rng, 4, 5);
        let a = net.estimate(&[&obs.clone()]).unwrap();
        let b = net.estimate(&[&obs.without_map()]).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn loss_and_error_examples() {
    let mut g = Graph::new();
    let p = g.constant(svo_nn::Tensor::column(&[0.5, 0.5]));
    let l = recognition_loss(&mut g, p, &[0.5, 0.5]).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let errors = [0.1, 0.2, 0.3];
    let loss = squared_error(&errors, &[0.0; 3]).unwrap();
    assert!((loss - 0.14 / 3.0).abs() < 1e-15);
    assert_eq!(mean_deviation_error(&[0.4, 0.7], &[0.4, 0.7]).unwrap(), 0.0);
    assert!((mean_deviation_error(&[0.3, 0.6], &[0.2, 0.8]).unwrap() - 0.15).abs() < 1e-15);
    assert!(mean_deviation_error(&[0.3], &[0.2, 0.8]).is_err());
}

#[test]
fn loss_is_positive_unless_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let t: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut p = t.clone();
        assert_eq!(squared_error(&p, &t).unwrap(), 0.0);
        let k = rng.gen_range(0..5);
        p[k] += rng.gen_range(1e-6..0.5);
        assert!(squared_error(&p, &t).unwrap() > 0.0);
    }
}

/// Loss of `net` on a fixed batch, with its branch pattern.
fn loss_of(net: &RecognitionNet, batch: &[&EncodedObs], targets: &[f64]) -> (f64, Vec<bool>) {
    let mut g = Graph::new();
    let pred = net.forward(&mut g, batch).unwrap().unwrap();
    let loss = recognition_loss(&mut g, pred, targets).unwrap();
    (g.value(loss).item(), g.kink_signature())
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = RecognitionNet::new(RecognitionConfig::default()).unwrap();
    let obs: Vec<EncodedObs> = (0..3).map(|_| random_obs(&mut rng, 4, 3)).collect();
    let refs: Vec<&EncodedObs> = obs.iter().collect();
    let targets: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut g = Graph::new();
    let pred = net.forward(&mut g, &refs).unwrap().unwrap();
    let loss = recognition_loss(&mut g, pred, &targets).unwrap();
    let grads = g.backward(loss).unwrap().params(&net.store);
    let mut store = net.store.clone();
    let report = fd_check(
        &mut store,
        &grads,
        |s| {
            net.store.copy_from(s);
            loss_of(&net, &refs, &targets)
        },
        100,
        1e-4,
        12,
    )
    .unwrap();
    assert!(report.max_rel < 1e-4, "{report:?}");
}

fn tiny_dataset(svo: SvoDistribution, episodes: u64, seed: u64) -> svo_agents::RecognitionDataset {
    let mut scenario = ScenarioSpec::merge();
    scenario.svo = svo;
    let mut cfg = EpisodeConfig::new(scenario);
    cfg.horizon = 60;
    cfg.agents = Some(8);
    let mut dc = DatasetConfig::new(cfg, episodes, seed);
    dc.tick_stride = 10;
    generate_dataset(&mut ScriptedPolicy::default(), &dc).unwrap()
}

#[test]
fn learns_a_constant_target() {
    let ds = tiny_dataset(SvoDistribution::Fixed { value: 0.5 }, 20, 13);
    let mut net = small(RecognitionVariant::Full, 14);
    let report = train_recognition(
        &mut net,
        &ds,
        &TrainConfig {
            batch_size: 64,
            learning_rate: 3e-3,
            max_epochs: 30,
            patience: 30,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(report.best_heldout_loss < 1e-3, "{report:?}");
    let losses: Vec<f64> = report.checkpoints.iter().map(|c| c.1).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn shuffled_labels_are_not_learnable() {
    let mut ds = tiny_dataset(SvoDistribution::Uniform, 30, 15);
    let mut labels: Vec<f64> = ds.samples.iter().flat_map(|s| s.truths()).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(16));
    let mut it = labels.into_iter();
    for s in &mut ds.samples {
        for t in &mut s.targets {
            t.1 = it.next().unwrap();
        }
    }
    let (_, heldout) = ds.split();
    let truths: Vec<f64> = heldout.iter().flat_map(|s| s.truths()).collect();
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    let variance = truths.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / truths.len() as f64;
    let mut net = small(RecognitionVariant::Full, 17);
    let report = train_recognition(
        &mut net,
        &ds,
        &TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            max_epochs: 10,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    // no better than predicting the mean, up to sampling noise
    assert!(
        report.best_heldout_loss > 0.85 * variance,
        "{} vs {variance}",
        report.best_heldout_loss
    );
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("recog.bin");
    let net = small(RecognitionVariant::WithoutMap, 18);
    net.save(&path).unwrap();
    let back = RecognitionNet::load(&path).unwrap();
    assert_eq!(back.config, net.config);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let obs = random_obs(&mut rng, 5, 2);
    assert_eq!(net.estimate(&[&obs]).unwrap(), back.estimate(&[&obs]).unwrap());
}
