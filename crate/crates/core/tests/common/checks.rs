//! Finite-difference checks shared by the gradient tests and the
//! acceptance run. Each returns the worst relative error.

use puckmeta_autodiff::gradcheck::{central_difference, compare, relative_error, DEFAULT_FLOOR};
use puckmeta_autodiff::{DiagonalGaussian, ParamSet, ParamVars, Tape, Tensor, Var};
use puckmeta_core::adaptation::{normalize_rewards, vpg_loss, Rollout};
use puckmeta_core::meta::{collect_task_data, meta_gradient, meta_task_loss, LearnedAlpha, MetaConfig};
use puckmeta_core::physics::{Goal, Task};
use puckmeta_core::policy::PolicyModel;
use puckmeta_core::trajectory::{generate_dataset, LatentAction};
use puckmeta_core::vae::{elbo_terms, Standardizer, VaeArchitecture, VaeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-5;

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Gaussian log-density with respect to mean, log-std and the sample.
pub fn gaussian_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = ParamSet::new();
    p.insert("mean", Tensor::matrix(3, 2, normal(&mut rng, 6)).unwrap()).unwrap();
    p.insert("log_std", Tensor::vector(vec![-0.5, 0.3])).unwrap();
    p.insert("x", Tensor::matrix(3, 2, normal(&mut rng, 6)).unwrap()).unwrap();
    fn loss<'t>(v: &ParamVars<'t>) -> Var<'t> {
        let d = DiagonalGaussian::new(v.require("mean").unwrap(), v.require("log_std").unwrap()).unwrap();
        d.log_density(v.require("x").unwrap()).unwrap().mean()
    }
    let tape = Tape::new();
    let v = ParamVars::track(&tape, &p);
    let analytic = tape.gradients(loss(&v), &v).unwrap();
    let numeric = central_difference(&p, H, |q| {
        let t = Tape::new();
        let v = ParamVars::track(&t, q);
        loss(&v).item()
    })
    .unwrap();
    compare(&analytic, &numeric).unwrap().max_rel_error
}

/// Full negative ELBO of a 10-trajectory batch with respect to every VAE
/// parameter.
pub fn elbo_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = generate_dataset(&mut rng, 10).unwrap();
    let rows: Vec<Vec<f64>> = data.iter().map(|t| t.to_flat()).collect();
    let st = Standardizer::fit(&rows).unwrap();
    let x: Vec<f64> = rows.iter().flat_map(|r| st.standardize(r)).collect();
    let x = Tensor::matrix(10, 51, x).unwrap();
    let eps = Tensor::matrix(10, 2, normal(&mut rng, 20)).unwrap();
    let arch = VaeArchitecture::new(6);
    let params = arch.init(&mut rng).unwrap();
    let loss = |p: &ParamSet| {
        let tape = Tape::new();
        let v = ParamVars::track(&tape, p);
        elbo_terms(&arch, &v, tape.constant(x.clone()), tape.constant(eps.clone()), 0.5)
            .unwrap()
            .loss
            .item()
    };
    let tape = Tape::new();
    let v = ParamVars::track(&tape, &params);
    let t = elbo_terms(&arch, &v, tape.constant(x.clone()), tape.constant(eps.clone()), 0.5).unwrap();
    let analytic = tape.gradients(t.loss, &v).unwrap();
    let numeric = central_difference(&params, H, loss).unwrap();
    compare(&analytic, &numeric).unwrap().max_rel_error
}

pub fn synthetic_rollouts(rng: &mut ChaCha8Rng, k: usize) -> (Vec<Rollout>, Vec<f64>) {
    let rollouts: Vec<Rollout> = (0..k)
        .map(|_| Rollout {
            goal: Goal::sample(rng),
            action: LatentAction([rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]),
            log_density: f64::NAN,
            reward: rng.random_range(-3.0..3.0),
            sampled: true,
        })
        .collect();
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    let normalized = normalize_rewards(&rewards).unwrap();
    (rollouts, normalized)
}

/// VPG loss of K = 4 rollouts through the whole policy network.
pub fn vpg_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = PolicyModel::init(&mut rng, 4);
    let (rollouts, normalized) = synthetic_rollouts(&mut rng, 4);
    let spec = policy.spec().clone();
    let tape = Tape::new();
    let v = ParamVars::track(&tape, policy.params());
    let loss = vpg_loss(&spec, &v, &rollouts, &normalized).unwrap();
    let analytic = tape.gradients(loss, &v).unwrap();
    let numeric = central_difference(policy.params(), H, |p| {
        let t = Tape::new();
        let v = ParamVars::track(&t, p);
        vpg_loss(&spec, &v, &rollouts, &normalized).unwrap().item()
    })
    .unwrap();
    compare(&analytic, &numeric).unwrap().max_rel_error
}

/// Meta-gradient of a miniature configuration (2-4-2 policy, two tasks,
/// four rollouts) through `n` inner steps. Returns the worst relative
/// error over the initial parameters and the error of d/d log-alpha.
pub fn meta_errors(vae: &VaeModel, n: usize, first_order: bool) -> (f64, f64) {
    let config = MetaConfig {
        tasks_per_batch: 2,
        rollouts: 4,
        inner_steps: n,
        hidden: 4,
        first_order,
        ..MetaConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31 + n as u64);
    let mut params = PolicyModel::init(&mut rng, 4).into_params();
    // larger weights make the inner steps matter
    for (_, t) in params.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    }
    let policy = PolicyModel::from_params(params).unwrap();
    let alpha = LearnedAlpha::new(0.05);
    let tasks: Vec<_> = (0..2)
        .map(|_| {
            let task = Task::sample(&mut rng);
            collect_task_data(&policy, alpha.alpha(), task, vae, &config, &mut rng).unwrap()
        })
        .collect();
    let grad = meta_gradient(&policy, alpha, &tasks, &config).unwrap();

    let outer = |p: &ParamSet, log_alpha: f64| {
        tasks
            .iter()
            .map(|d| {
                let tape = Tape::new();
                let v = ParamVars::track(&tape, p);
                let la = tape.scalar(log_alpha);
                meta_task_loss(policy.spec(), &v, la, d, &config).unwrap().item()
            })
            .sum::<f64>()
            / tasks.len() as f64
    };
    assert!((outer(policy.params(), alpha.log_alpha) - grad.loss).abs() < 1e-12);
    let numeric = central_difference(policy.params(), H, |p| outer(p, alpha.log_alpha)).unwrap();
    let report = compare(&grad.params, &numeric).unwrap();
    let fd_alpha = (outer(policy.params(), alpha.log_alpha + H)
        - outer(policy.params(), alpha.log_alpha - H))
        / (2.0 * H);
    (
        report.max_rel_error,
        relative_error(grad.log_alpha, fd_alpha, DEFAULT_FLOOR),
    )
}
