use std::time::Instant;

use proptest::prelude::*;
use puckmeta_core::physics::*;
use puckmeta_core::trajectory::{swing_trajectory, Pose, SwingParams, Trajectory, NUM_WAYPOINTS};
use puckmeta_core::vec2::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const G: f64 = 9.81;

fn sliding_only(mu_x: f64, mu_y: f64) -> Task {
    Task {
        mu_x,
        mu_y,
        mu_torsional: 0.01,
        mu_rot_x: 0.0,
        mu_rot_y: 0.0,
        mass: 0.11,
        start_offset: Vec2::ZERO,
    }
}

fn launched(v: Vec2, spin: f64) -> PuckState {
    PuckState {
        position: Vec2::ZERO,
        velocity: v,
        angular_velocity: spin,
    }
}

#[test]
fn stopping_distance_matches_constant_deceleration() {
    let start = Instant::now();
    // v0^2 / (2 mu g) = 4 / 9.81
    let end = slide(&sliding_only(0.5, 0.5), launched(Vec2::new(2.0, 0.0), 0.0));
    assert!((end.position.x - 0.40775).abs() / 0.40775 < 0.01, "{}", end.position.x);

    for v0 in [1.5, 2.0, 2.5, 3.0, 3.5] {
        for mu in [0.15, 0.35, 0.55, 0.75, 0.95] {
            let expected = v0 * v0 / (2.0 * mu * G);
            for dir in [Vec2::new(1.0, 0.0), Vec2::new(0.6, -0.8)] {
                let end = slide(&sliding_only(mu, mu), launched(dir * v0, 0.0));
                let got = end.position.norm();
                assert!(
                    (got - expected).abs() / expected < 0.01,
                    "v0 {v0} mu {mu}: {got} vs {expected}"
                );
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn rolling_terms_add_to_sliding_friction() {
    let mut task = sliding_only(0.3, 0.3);
    task.mu_rot_x = 0.1;
    let end = slide(&task, launched(Vec2::new(2.0, 0.0), 0.0));
    let expected = 4.0 / (2.0 * 0.4 * G);
    assert!((end.position.x - expected).abs() / expected < 0.01);
}

#[test]
fn energy_never_increases_while_sliding() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let task = Task::sample(&mut rng);
        let s = launched(
            Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)),
            rng.random_range(-60.0..60.0),
        );
        let (_, rows) = slide_trace(&task, s);
        let mut prev = f64::INFINITY;
        for r in &rows {
            let e = task.kinetic_energy(&r.state);
            assert!(e <= prev + 1e-12, "energy rose from {prev} to {e}");
            prev = e;
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn low_friction_axis_travels_farther() {
    let task = Task::fixed("anisotropic_low_x").unwrap();
    let along_x = slide(&task, launched(Vec2::new(2.0, 0.0), 0.0)).position.norm();
    let along_y = slide(&task, launched(Vec2::new(0.0, 2.0), 0.0)).position.norm();
    // distances scale inversely with the total deceleration on each axis
    let ratio = (0.8 + 0.1) / (0.2 + 0.1);
    assert!((along_x / along_y - ratio).abs() / ratio < 0.02, "{along_x} {along_y}");
}

#[test]
fn diagonal_launch_bends_toward_the_slippery_axis() {
    let task = Task::fixed("anisotropic_low_x").unwrap();
    let end = slide(&task, launched(Vec2::new(1.5, 1.5), 0.0));
    assert!(end.position.x > end.position.y);
}

#[test]
fn spin_curves_the_path_without_adding_distance() {
    let mut task = sliding_only(0.4, 0.4);
    task.mu_torsional = 0.05;
    let straight = slide(&task, launched(Vec2::new(2.0, 0.0), 0.0));
    let spun = slide(&task, launched(Vec2::new(2.0, 0.0), 40.0));
    assert!(straight.position.y.abs() < 1e-12);
    assert!(spun.position.y > 1e-3, "counter-clockwise spin turns left");
    assert!(spun.position.norm() <= straight.position.norm() + 1e-9);
    let mirrored = slide(&task, launched(Vec2::new(2.0, 0.0), -40.0));
    assert!((mirrored.position.y + spun.position.y).abs() < 1e-9);
}

fn swing(speed: f64, yaw: f64) -> Trajectory {
    swing_trajectory(SwingParams { speed, yaw })
}

#[test]
fn contact_velocity_follows_impulse_gain() {
    let task = Task::fixed("isotropic_medium").unwrap();
    let out = simulate_strike(&task, &swing(2.0, 0.0)).unwrap();
    let c = out.contact.expect("nominal swing hits the puck");
    let gain = 1.5 * 1.0 / (1.0 + task.mass);
    let expected = c.normal * (gain * c.blade_velocity.dot(c.normal));
    assert!((c.puck_velocity - expected).norm() < 1e-12);
    assert!(c.puck_velocity.x > 0.0);
}

#[test]
fn heavier_pucks_travel_less() {
    let mut prev = f64::INFINITY;
    for mass in [0.05, 0.1, 0.2, 0.35, 0.5] {
        let mut task = Task::fixed("isotropic_medium").unwrap();
        task.mass = mass;
        let d = execute_strike(&task, &swing(2.0, 0.0)).unwrap().position.norm();
        assert!(d < prev, "mass {mass}: {d} >= {prev}");
        prev = d;
    }
}

#[test]
fn faster_swings_travel_farther() {
    let task = Task::fixed("isotropic_low").unwrap();
    let mut prev = 0.0;
    for speed in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0] {
        let d = execute_strike(&task, &swing(speed, 0.0)).unwrap().position.norm();
        assert!(d > prev, "speed {speed}");
        prev = d;
    }
}

#[test]
fn higher_friction_stops_sooner() {
    let s = swing(2.0, 0.2);
    let low = execute_strike(&Task::fixed("isotropic_low").unwrap(), &s).unwrap();
    let med = execute_strike(&Task::fixed("isotropic_medium").unwrap(), &s).unwrap();
    assert!(med.position.norm() < low.position.norm());
}

#[test]
fn missing_the_puck_leaves_it_in_place() {
    let far: Vec<Pose> = (0..NUM_WAYPOINTS)
        .map(|i| Pose {
            position: Vec2::new(-1.5 + 0.01 * i as f64, 1.5),
            yaw: 0.0,
        })
        .collect();
    let task = Task::fixed("isotropic_low").unwrap();
    let out = simulate_strike(&task, &Trajectory::new(far).unwrap()).unwrap();
    assert!(out.contact.is_none());
    assert_eq!(out.final_state, out.initial);
}

#[test]
fn start_offset_shifts_the_rest_position() {
    let mut task = Task::fixed("isotropic_medium").unwrap();
    let base = execute_strike(&task, &swing(1.0, 0.0)).unwrap();
    task.start_offset = Vec2::new(0.0, 0.01);
    let moved = execute_strike(&task, &swing(1.0, 0.0)).unwrap();
    assert!(moved.position != base.position);
}

#[test]
fn non_finite_trajectories_are_rejected() {
    let mut flat = swing(1.0, 0.0).to_flat();
    flat[4] = f64::NAN;
    let t = Trajectory::from_flat(&flat);
    if let Ok(t) = t {
        let task = Task::fixed("isotropic_low").unwrap();
        assert!(simulate_strike(&task, &t).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rest_state_is_finite_and_at_rest(
        vx in -4.0f64..4.0, vy in -4.0f64..4.0, w in -50.0f64..50.0, seed in any::<u64>()
    ) {
        let task = Task::sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let end = slide(&task, launched(Vec2::new(vx, vy), w));
        prop_assert!(end.is_finite());
        prop_assert!(end.velocity.norm() < REST_SPEED || end.angular_velocity.abs() < REST_SPIN);
    }
}
