#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use svo_agents::{EncodedObs, STATIC_FEATURES, VEHICLE_FEATURES};

pub fn random_track(rng: &mut ChaCha8Rng, points: usize) -> Vec<f64> {
    (0..points)
        .flat_map(|j| {
            let (x, y): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let h: f64 = rng.gen_range(-3.0..3.0);
            [
                x,
                y,
                h.cos(),
                h.sin(),
                rng.gen_range(0.0..1.0),
                (points - 1 - j) as f64 / 10.0,
            ]
        })
        .collect()
}

pub fn random_static(rng: &mut ChaCha8Rng, points: usize) -> Vec<f64> {
    let kind = rng.gen_range(0..3);
    (0..points)
        .flat_map(|_| {
            let h: f64 = rng.gen_range(-3.0..3.0);
            let mut row = vec![
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                h.cos(),
                h.sin(),
                1.0,
                0.0,
                0.0,
                0.0,
            ];
            row[5 + kind] = 1.0;
            row
        })
        .collect()
}

/// Random encoder input with `vehicles` vehicle elements (ego first) and
/// `statics` map elements.
pub fn random_obs(rng: &mut ChaCha8Rng, vehicles: usize, statics: usize) -> EncodedObs {
    let obs = EncodedObs {
        vehicles: (0..vehicles)
            .map(|_| {
                let n = rng.gen_range(1..=10);
                random_track(rng, n)
            })
            .collect(),
        statics: (0..statics)
            .map(|_| {
                let n = rng.gen_range(1..=15);
                random_static(rng, n)
            })
            .collect(),
    };
    debug_assert!(obs.vehicles.iter().all(|v| v.len() % VEHICLE_FEATURES == 0));
    debug_assert!(obs.statics.iter().all(|v| v.len() % STATIC_FEATURES == 0));
    obs
}
