mod common;

use std::collections::BTreeMap;

use indexmap::IndexMap;
use puckmeta_core::experiment::*;
use puckmeta_core::physics::{Task, CONDITIONS};
use puckmeta_core::policy::PolicyModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn policies() -> PolicySet {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let oracles: IndexMap<String, PolicyModel> = CONDITIONS
        .iter()
        .map(|c| (c.to_string(), PolicyModel::init(&mut rng, 16)))
        .collect();
    PolicySet {
        meta: PolicyModel::init(&mut rng, 16),
        baseline: PolicyModel::init(&mut rng, 16),
        oracles,
        alpha: 0.03,
    }
}

fn small() -> ExperimentConfig {
    ExperimentConfig {
        conditions: vec!["isotropic_low".into(), "anisotropic_low_y".into()],
        repetitions: 4,
        eval_steps: 3,
        eval_episodes: 6,
        rollouts: 8,
        stability_goals: 50,
        seed: 3,
    }
}

#[test]
fn summary_recomputed_from_raw_points_matches() {
    let vae = common::small_vae();
    let config = small();
    let result = run_adaptation_experiment(&policies(), vae, &config, &Method::ALL).unwrap();
    let meta = Metadata::new("abc", config.seed);
    let mut raw = Vec::new();
    write_points_csv(&result.points, &meta, &mut raw).unwrap();
    let mut summary = Vec::new();
    write_summary_csv(&result.curves, &meta, &mut summary).unwrap();
    assert!(String::from_utf8_lossy(&raw).starts_with("# "));

    // independent recomputation: plain mean and sample standard error
    let points = read_points_csv(raw.as_slice()).unwrap();
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for p in &points {
        groups
            .entry((p.method.name().to_string(), p.condition.clone(), p.step))
            .or_default()
            .push(p.reward);
    }
    let rows = read_summary_csv(summary.as_slice()).unwrap();
    assert_eq!(rows.len(), groups.len());
    for row in rows {
        let xs = &groups[&(row.method.name().to_string(), row.condition.clone(), row.step)];
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((row.mean - mean).abs() < 1e-12);
        assert!((row.std_error - (var / n).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn experiment_has_one_row_per_repetition_and_step() {
    let vae = common::small_vae();
    let config = small();
    let result = run_adaptation_experiment(&policies(), vae, &config, &Method::ALL).unwrap();
    for method in Method::ALL {
        for c in &config.conditions {
            let n = result
                .points
                .iter()
                .filter(|p| p.method == method && &p.condition == c)
                .count();
            assert_eq!(n, config.repetitions * (config.eval_steps + 1));
            let curve = result.curve(method, c).unwrap();
            assert_eq!(curve.steps.len(), config.eval_steps + 1);
            assert!(curve.steps.iter().all(|s| s.values.len() == config.repetitions));
        }
    }
    // oracles never adapt, so they have evaluation episodes only
    for e in &result.episodes {
        match e.phase {
            "adapt" => {
                assert!(e.rollout.sampled);
                assert_ne!(e.method, Method::Oracle);
                // tagged with the evaluation step they lead to
                assert!((1..=config.eval_steps).contains(&e.step));
            }
            "eval" => assert!(!e.rollout.sampled),
            other => panic!("unexpected phase {other}"),
        }
    }
    let evals = result.episodes.iter().filter(|e| e.phase == "eval").count();
    assert_eq!(
        evals,
        3 * config.conditions.len() * config.repetitions * (config.eval_steps + 1) * config.eval_episodes
    );
}

#[test]
fn methods_share_evaluation_goals() {
    // common random numbers: at step 0 every method sees the same goals
    let vae = common::small_vae();
    let config = small();
    let result = run_adaptation_experiment(&policies(), vae, &config, &Method::ALL).unwrap();
    let goals = |m: Method| -> Vec<_> {
        result
            .episodes
            .iter()
            .filter(|e| e.method == m && e.phase == "eval" && e.step == 0)
            .map(|e| (e.condition.clone(), e.repetition, format!("{:?}", e.rollout.goal)))
            .collect()
    };
    assert_eq!(goals(Method::Meta), goals(Method::Baseline));
    assert_eq!(goals(Method::Meta), goals(Method::Oracle));
}

#[test]
fn single_thread_runs_are_bit_identical() {
    let vae = common::small_vae();
    let config = small();
    let set = policies();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = pool.install(|| run_adaptation_experiment(&set, vae, &config, &Method::ALL).unwrap());
    let b = pool.install(|| run_adaptation_experiment(&set, vae, &config, &Method::ALL).unwrap());
    assert_eq!(a.points, b.points);
    // evaluation episodes carry a NaN log-density, so compare their text
    assert_eq!(format!("{:?}", a.episodes), format!("{:?}", b.episodes));
    // and the default pool agrees with the single-thread pool
    let c = run_adaptation_experiment(&set, vae, &config, &Method::ALL).unwrap();
    assert_eq!(a.points, c.points);
}

#[test]
fn missing_oracle_is_a_config_error() {
    let vae = common::small_vae();
    let mut set = policies();
    set.oracles.shift_remove("isotropic_low");
    let err = run_adaptation_experiment(&set, vae, &small(), &[Method::Oracle]).unwrap_err();
    assert!(matches!(err, puckmeta_core::Error::Config(_)), "{err}");
    // meta and baseline alone do not need it
    assert!(run_adaptation_experiment(&set, vae, &small(), &[Method::Meta]).is_ok());
}

#[test]
fn stability_spread_starts_at_zero() {
    let vae = common::small_vae();
    let config = small();
    let set = policies();
    let report = run_latent_stability(
        &[(Method::Meta, &set.meta), (Method::Baseline, &set.baseline)],
        set.alpha,
        vae,
        "isotropic_medium",
        &config,
    )
    .unwrap();
    assert_eq!(report.goals.len(), config.stability_goals);
    for m in [Method::Meta, Method::Baseline] {
        let s = report.spread(m).unwrap();
        assert_eq!(s.len(), config.eval_steps + 1);
        assert_eq!(s[0], 0.0);
        assert!(s[1..].iter().all(|&v| v > 0.0 && v.is_finite()));
    }
    let mut out = Vec::new();
    write_latents_csv(&report, &Metadata::new("h", 0), &mut out).unwrap();
    let lines = String::from_utf8(out).unwrap();
    let data = lines.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(data, 1 + 2 * config.repetitions * (config.eval_steps + 1) * config.stability_goals);
}

#[test]
fn spread_is_the_mean_covariance_trace() {
    use puckmeta_core::trajectory::LatentAction as Z;
    // goal 0: x in {0, 2}, y in {1, 1}  -> trace 2
    // goal 1: x in {1, 1}, y in {0, -4} -> trace 8
    let a = [Z([0.0, 1.0]), Z([1.0, 0.0])];
    let b = [Z([2.0, 1.0]), Z([1.0, -4.0])];
    assert!((spread_metric(&[&a, &b]) - 5.0).abs() < 1e-12);
    assert_eq!(spread_metric(&[&a]), 0.0);
}

#[test]
fn latent_sweep_lands_every_strike() {
    let vae = common::small_vae();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = gaussian_grid(&mut rng, 2000);
    let low = latent_sweep_report(vae, &Task::fixed("isotropic_low").unwrap(), &grid).unwrap();
    let medium = latent_sweep_report(vae, &Task::fixed("isotropic_medium").unwrap(), &grid).unwrap();
    assert_eq!(low.len(), 2000);
    assert!(low.iter().all(|r| r.final_position.is_finite()));
    let mean_dist = |rows: &[SweepRow]| {
        rows.iter().map(|r| r.final_position.norm()).sum::<f64>() / rows.len() as f64
    };
    assert!(mean_dist(&medium) < mean_dist(&low));

    let mut out = Vec::new();
    write_sweep_csv(&low, &Metadata::new("h", 1), &mut out).unwrap();
    let back = read_sweep_csv(out.as_slice()).unwrap();
    assert_eq!(back, low);
}

#[test]
fn derived_seeds_separate_streams() {
    let a = derive_seed(7, &[1, 0, 0]);
    assert_eq!(a, derive_seed(7, &[1, 0, 0]));
    assert_ne!(a, derive_seed(7, &[2, 0, 0]));
    assert_ne!(a, derive_seed(7, &[1, 0, 1]));
    assert_ne!(a, derive_seed(8, &[1, 0, 0]));
}

#[test]
fn invalid_experiment_configs_are_rejected() {
    let vae = common::small_vae();
    let bad = ExperimentConfig {
        conditions: vec!["slippery".into()],
        ..small()
    };
    assert!(run_adaptation_experiment(&policies(), vae, &bad, &Method::ALL).is_err());
    let bad = ExperimentConfig {
        repetitions: 0,
        ..small()
    };
    assert!(bad.validate().is_err());
}
