use proptest::prelude::*;
use svo_sim::{
    bicycle_step, map_action, pid_step, unmap_action, ControlSetpoint, PidGains, PidState, VehicleState, MAX_SPEED,
    MAX_STEER,
};

fn car(speed: f64, heading: f64) -> VehicleState {
    VehicleState {
        agent_id: 0,
        x: 0.0,
        y: 0.0,
        heading,
        speed,
        length: 4.6,
        width: 2.0,
        svo: 0.0,
    }
}

#[test]
fn closed_loop_reaches_target_speed_within_three_seconds() {
    let gains = PidGains::default();
    let sp = ControlSetpoint {
        target_speed: 4.0,
        steering_angle: 0.0,
    };
    for dt in [0.1, 0.2] {
        let mut v = car(0.0, 0.0);
        let mut st = PidState::default();
        let steps = (3.0 / dt as f64).round() as usize;
        for _ in 0..steps {
            let (a, d, next) = pid_step(&v, &sp, st, &gains, dt);
            st = next;
            v = bicycle_step(&v, a, d, dt, 0.8 * v.length);
        }
        assert!((v.speed - 4.0).abs() <= 0.2, "dt {dt}: speed {}", v.speed);
        assert!(v.y.abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn bicycle_keeps_speed_in_range(
        speed in 0.0..=MAX_SPEED,
        heading in -3.2f64..3.2,
        acc in -50.0f64..50.0,
        steer in -MAX_STEER..=MAX_STEER,
        dt in 0.01f64..1.0,
    ) {
        let next = bicycle_step(&car(speed, heading), acc, steer, dt, 3.68);
        prop_assert!((0.0..=MAX_SPEED).contains(&next.speed));
        prop_assert!(next.heading > -std::f64::consts::PI && next.heading <= std::f64::consts::PI);
    }

    #[test]
    fn action_mapping_round_trips(a0 in -1.0f64..=1.0, a1 in -1.0f64..=1.0) {
        let back = unmap_action(map_action([a0, a1]).unwrap()).unwrap();
        prop_assert!((back[0] - a0).abs() < 1e-12 && (back[1] - a1).abs() < 1e-12);
    }

    #[test]
    fn zero_gains_give_zero_acceleration(speed in 0.0..=MAX_SPEED, target in 0.0..=MAX_SPEED, integral in -5.0f64..5.0) {
        let gains = PidGains { kp: 0.0, ki: 0.0, kd: 0.0, ..PidGains::default() };
        let sp = ControlSetpoint { target_speed: target, steering_angle: 0.0 };
        let st = PidState { integral, prev_error: Some(1.0) };
        prop_assert_eq!(pid_step(&car(speed, 0.0), &sp, st, &gains, 0.1).0, 0.0);
    }
}
