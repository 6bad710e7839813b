mod common;

use proptest::prelude::*;
use puckmeta_core::adaptation::*;
use puckmeta_core::physics::{Goal, Task};
use puckmeta_core::policy::{log_density_value, PolicyModel};
use puckmeta_core::trajectory::LatentAction;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn normalization_examples() {
    let out = normalize_rewards(&[1.0, 2.0, 3.0]).unwrap();
    let e = 1.5f64.sqrt();
    assert!((out[0] + e).abs() < 1e-12 && out[1].abs() < 1e-12 && (out[2] - e).abs() < 1e-12);
    assert_eq!(normalize_rewards(&[-2.0, -2.0, -2.0, -2.0]).unwrap(), vec![0.0; 4]);
    assert!(normalize_rewards(&[1.0]).is_err());
}

proptest! {
    #[test]
    fn normalized_rewards_have_zero_mean_and_unit_std(
        rewards in proptest::collection::vec(-10.0f64..10.0, 2..40)
    ) {
        let out = normalize_rewards(&rewards).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9 || var == 0.0);
    }

    #[test]
    fn normalization_is_invariant_to_affine_shifts(
        rewards in proptest::collection::vec(-10.0f64..10.0, 2..20),
        shift in -5.0f64..5.0, scale in 0.1f64..10.0
    ) {
        let a = normalize_rewards(&rewards).unwrap();
        let moved: Vec<f64> = rewards.iter().map(|r| r * scale + shift).collect();
        let b = normalize_rewards(&moved).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}

fn setup(seed: u64) -> (PolicyModel, Task, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = PolicyModel::init(&mut rng, 16);
    (policy, Task::fixed("isotropic_low").unwrap(), rng)
}

#[test]
fn zero_step_size_leaves_the_policy_unchanged() {
    let vae = common::small_vae();
    let (policy, task, mut rng) = setup(1);
    let trace = adapt(&policy, &task, vae, 0.0, 8, 3, &mut rng).unwrap();
    assert_eq!(trace.snapshots.len(), 4);
    assert_eq!(trace.steps.len(), 3);
    for s in &trace.snapshots {
        assert_eq!(s, &policy);
    }
}

#[test]
fn no_steps_gives_only_the_initial_snapshot() {
    let vae = common::small_vae();
    let (policy, task, mut rng) = setup(2);
    let trace = adapt(&policy, &task, vae, 0.05, 8, 0, &mut rng).unwrap();
    assert_eq!(trace.snapshots, vec![policy]);
    assert!(trace.steps.is_empty());
}

#[test]
fn differentiable_and_destructive_updates_agree() {
    let vae = common::small_vae();
    let (policy, task, mut rng) = setup(3);
    let rollouts = collect_rollouts(&policy, &task, vae, 16, &mut rng).unwrap();
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    let normalized = normalize_rewards(&rewards).unwrap();
    let (a, ra) = update_from_rollouts(&policy, 0.05, rollouts.clone(), normalized.clone(), false).unwrap();
    let (b, rb) = update_from_rollouts(&policy, 0.05, rollouts, normalized, true).unwrap();
    assert!((ra.loss - rb.loss).abs() < 1e-12);
    assert!((ra.grad_norm - rb.grad_norm).abs() < 1e-12);
    for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
        for (u, v) in x.data().iter().zip(y.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn same_seed_reproduces_the_trace() {
    let vae = common::small_vae();
    let (policy, task, _) = setup(4);
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        adapt(&policy, &task, vae, 0.05, 16, 3, &mut rng).unwrap()
    };
    assert_eq!(run(10), run(10));
    assert_ne!(run(10), run(11));
}

#[test]
fn sixteen_rollouts_three_steps_end_to_end() {
    let vae = common::small_vae();
    let (policy, task, mut rng) = setup(5);
    let trace = adapt(&policy, &task, vae, 0.05, 16, 3, &mut rng).unwrap();
    assert_eq!(trace.snapshots.len(), 4);
    for (i, step) in trace.steps.iter().enumerate() {
        assert_eq!(step.rollouts.len(), 16);
        assert!(step.loss.is_finite() && step.grad_norm.is_finite());
        // every rollout was drawn from the policy it updates
        let snapshot = &trace.snapshots[i];
        for r in &step.rollouts {
            assert!(r.sampled);
            assert!(r.goal.in_target_region());
            let mean = snapshot.mean_action(&r.goal).unwrap();
            let again = log_density_value(mean.0, snapshot.log_std(), r.action.0);
            assert!((again - r.log_density).abs() < 1e-9);
        }
    }
    let mut rows = Vec::new();
    write_rollouts_csv(&trace, &mut rows).unwrap();
    assert_eq!(String::from_utf8(rows).unwrap().lines().count(), 1 + 3 * 16);
    let mut rows = Vec::new();
    write_summary_csv(&trace, &mut rows).unwrap();
    assert_eq!(String::from_utf8(rows).unwrap().lines().count(), 1 + 3);
}

#[test]
fn positive_advantage_raises_its_log_density() {
    let (policy, _, _) = setup(6);
    let goal = Goal::new(2.0, 0.1);
    let good = LatentAction([0.4, -0.2]);
    let rollouts = vec![
        Rollout {
            goal,
            action: good,
            log_density: f64::NAN,
            reward: 1.0,
            sampled: true,
        },
        Rollout {
            goal,
            action: LatentAction([-0.8, 0.6]),
            log_density: f64::NAN,
            reward: -1.0,
            sampled: true,
        },
    ];
    let normalized = normalize_rewards(&[1.0, -1.0]).unwrap();
    let (next, _) = update_from_rollouts(&policy, 0.01, rollouts, normalized, false).unwrap();
    let density = |p: &PolicyModel| {
        log_density_value(p.mean_action(&goal).unwrap().0, p.log_std(), good.0)
    };
    assert!(density(&next) > density(&policy));
}

#[test]
fn negative_step_size_is_rejected() {
    let vae = common::small_vae();
    let (policy, task, mut rng) = setup(7);
    assert!(adapt_step(&policy, &task, vae, -0.1, 8, &mut rng, false).is_err());
    assert!(collect_rollouts(&policy, &task, vae, 1, &mut rng).is_err());
}
