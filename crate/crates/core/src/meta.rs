//! Meta-training with a clipped-surrogate outer objective differentiated
//! through the inner adaptation steps, plus the plain PPO trainers used for
//! the domain-randomization baseline and per-condition oracles.

use std::io::Write;

use puckmeta_autodiff::{Adam, MlpSpec, ParamSet, ParamVars, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adaptation::{
    collect_rollouts, inner_update, normalize_rewards, update_from_rollouts, Rollout,
};
use crate::error::{Error, Result};
use crate::physics::{Goal, Task};
use crate::policy::{log_densities, PolicyModel, DEFAULT_HIDDEN};
use crate::trajectory::LatentAction;
use crate::vae::VaeModel;

pub const LOG_ALPHA_NAME: &str = "meta.log_alpha";

#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Tasks per meta-batch (B).
    pub tasks_per_batch: usize,
    /// Rollouts per adaptation step and per post-adaptation batch (K).
    pub rollouts: usize,
    /// Inner adaptation steps (N).
    pub inner_steps: usize,
    pub alpha_init: f64,
    pub learn_alpha: bool,
    pub clip: f64,
    pub ppo_epochs: usize,
    pub learning_rate: f64,
    /// Adam step size for the log of the adaptation step.
    pub alpha_learning_rate: f64,
    pub iterations: usize,
    /// Treat inner gradients as constants in the outer gradient.
    pub first_order: bool,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            tasks_per_batch: 10,
            rollouts: 16,
            inner_steps: 3,
            alpha_init: 0.01,
            learn_alpha: true,
            clip: 0.2,
            ppo_epochs: 4,
            learning_rate: 3e-4,
            alpha_learning_rate: 3e-4,
            iterations: 3000,
            first_order: false,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.tasks_per_batch == 0 {
            return fail("tasks_per_batch must be at least 1");
        }
        if self.rollouts < 2 {
            return fail("rollouts must be at least 2");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail("clip must lie in (0, 1)");
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return fail("alpha_init must be positive");
        }
        if self.alpha_learning_rate.is_nan() || self.alpha_learning_rate <= 0.0 {
            return fail("alpha_learning_rate must be positive");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.ppo_epochs == 0 || self.hidden == 0 {
            return fail("learning_rate, ppo_epochs and hidden must be positive");
        }
        Ok(())
    }
}

/// Adaptation step size, kept positive through its logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnedAlpha {
    pub log_alpha: f64,
}

impl LearnedAlpha {
    pub fn new(alpha: f64) -> Self {
        LearnedAlpha {
            log_alpha: alpha.ln(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// Rollouts scored by a clipped surrogate: advantages and the
/// log-densities under the collecting policy are frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub rollouts: Vec<Rollout>,
    pub advantages: Vec<f64>,
    pub old_log_density: Vec<f64>,
}

impl PpoBatch {
    /// Freezes advantages (normalized rewards) and the log-densities of
    /// `rollouts` under `policy`, evaluated on the tape exactly as the
    /// surrogate later recomputes them.
    pub fn new(policy: &PolicyModel, rollouts: Vec<Rollout>) -> Result<Self> {
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let advantages = normalize_rewards(&rewards)?;
        let (goals, actions): (Vec<Goal>, Vec<LatentAction>) =
            rollouts.iter().map(|r| (r.goal, r.action)).unzip();
        let tape = Tape::new();
        let vars = ParamVars::constant(&tape, policy.params());
        let old = log_densities(policy.spec(), &vars, &goals, &actions)?;
        Ok(PpoBatch {
            rollouts,
            advantages,
            old_log_density: old.value().data().to_vec(),
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rollouts.iter().map(|r| r.reward).sum::<f64>() / self.rollouts.len() as f64
    }
}

/// `-mean(min(ρ A, clip(ρ, 1-ε, 1+ε) A))` with `ρ = π(z|s) / π_old(z|s)`.
pub fn ppo_loss<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    batch: &PpoBatch,
    clip: f64,
) -> Result<Var<'t>> {
    let (goals, actions): (Vec<Goal>, Vec<LatentAction>) =
        batch.rollouts.iter().map(|r| (r.goal, r.action)).unzip();
    let logp = log_densities(spec, params, &goals, &actions)?;
    let tape = logp.tape();
    let old = tape.constant(Tensor::vector(batch.old_log_density.clone()));
    let adv = tape.constant(Tensor::vector(batch.advantages.clone()));
    let ratio = (logp - old).exp();
    let surrogate = (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv);
    Ok(-surrogate.mean())
}

/// Probability ratios of `batch` under `policy`.
pub fn ppo_ratios(policy: &PolicyModel, batch: &PpoBatch) -> Result<Vec<f64>> {
    let (goals, actions): (Vec<Goal>, Vec<LatentAction>) =
        batch.rollouts.iter().map(|r| (r.goal, r.action)).unzip();
    let tape = Tape::new();
    let vars = ParamVars::constant(&tape, policy.params());
    let logp = log_densities(policy.spec(), &vars, &goals, &actions)?;
    Ok(logp
        .value()
        .data()
        .iter()
        .zip(&batch.old_log_density)
        .map(|(n, o)| (n - o).exp())
        .collect())
}

/// Mean surrogate loss over batches and its gradient (plain PPO).
pub fn ppo_gradient(
    policy: &PolicyModel,
    batches: &[PpoBatch],
    clip: f64,
) -> Result<(f64, ParamSet)> {
    let tape = Tape::new();
    let vars = ParamVars::track(&tape, policy.params());
    let mut total: Option<Var> = None;
    for b in batches {
        let l = ppo_loss(policy.spec(), &vars, b, clip)?;
        total = Some(match total {
            Some(t) => t + l,
            None => l,
        });
    }
    let loss = total
        .ok_or_else(|| Error::Input("no batches".into()))?
        .scale(1.0 / batches.len() as f64);
    Ok((loss.item(), tape.gradients(loss, &vars)?))
}

/// Everything collected for one task of a meta-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task: Task,
    /// Rollouts and normalized rewards of each inner step.
    pub inner: Vec<(Vec<Rollout>, Vec<f64>)>,
    /// Post-adaptation rollouts scored by the outer objective.
    pub post: PpoBatch,
}

impl TaskData {
    pub fn pre_adapt_reward(&self) -> f64 {
        match self.inner.first() {
            Some((r, _)) => r.iter().map(|x| x.reward).sum::<f64>() / r.len() as f64,
            None => self.post.mean_reward(),
        }
    }
}

/// Runs the inner adaptation for `task` and collects the post-adaptation
/// batch. The inner updates use the same tape arithmetic as the outer
/// replay, so the replayed adapted policy matches bit for bit.
pub fn collect_task_data<R: Rng + ?Sized>(
    policy: &PolicyModel,
    alpha: f64,
    task: Task,
    vae: &VaeModel,
    config: &MetaConfig,
    rng: &mut R,
) -> Result<TaskData> {
    let mut current = policy.clone();
    let mut inner = Vec::with_capacity(config.inner_steps);
    for _ in 0..config.inner_steps {
        let rollouts = collect_rollouts(&current, &task, vae, config.rollouts, rng)?;
        let normalized =
            normalize_rewards(&rollouts.iter().map(|r| r.reward).collect::<Vec<_>>())?;
        let (next, record) = update_from_rollouts(&current, alpha, rollouts, normalized, true)?;
        inner.push((record.rollouts, record.normalized));
        current = next;
    }
    let post = collect_rollouts(&current, &task, vae, config.rollouts, rng)?;
    Ok(TaskData {
        task,
        inner,
        post: PpoBatch::new(&current, post)?,
    })
}

/// Outer loss of one task as a function of the meta parameters and
/// log-α, both given on `tape`.
pub fn meta_task_loss<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    log_alpha: Var<'t>,
    data: &TaskData,
    config: &MetaConfig,
) -> Result<Var<'t>> {
    let alpha = log_alpha.exp();
    let mut current = params.clone();
    for (rollouts, normalized) in &data.inner {
        current = inner_update(spec, &current, alpha, rollouts, normalized, config.first_order)?.0;
    }
    ppo_loss(spec, &current, &data.post, config.clip)
}

/// Gradient of the mean outer loss over `tasks`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaGradient {
    pub loss: f64,
    pub params: ParamSet,
    /// d loss / d log-α
    pub log_alpha: f64,
}

/// Per-task gradients are computed on separate tapes (in parallel) and
/// summed in task order.
pub fn meta_gradient(
    policy: &PolicyModel,
    alpha: LearnedAlpha,
    tasks: &[TaskData],
    config: &MetaConfig,
) -> Result<MetaGradient> {
    if tasks.is_empty() {
        return Err(Error::Input("meta gradient needs at least one task".into()));
    }
    let per_task: Vec<(f64, ParamSet, f64)> = tasks
        .par_iter()
        .map(|data| {
            let tape = Tape::new();
            let vars = ParamVars::track(&tape, policy.params());
            let log_alpha = tape.param(Tensor::scalar(alpha.log_alpha));
            let loss = meta_task_loss(policy.spec(), &vars, log_alpha, data, config)?;
            let mut wrt = vars.vars().to_vec();
            wrt.push(log_alpha);
            let mut grads = tape.grad(loss, &wrt)?;
            let g_alpha = grads.pop().expect("log-alpha gradient").item();
            let mut set = ParamSet::new();
            for (name, g) in vars.names().iter().zip(grads) {
                set.insert(name.clone(), g)?;
            }
            Ok((loss.item(), set, g_alpha))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / tasks.len() as f64;
    let mut sum = policy.params().zeros_like();
    let (mut loss, mut g_alpha) = (0.0, 0.0);
    for (l, g, ga) in per_task {
        loss += l;
        g_alpha += ga;
        for ((_, acc), (_, x)) in sum.iter_mut().zip(g.iter()) {
            for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
                *a += b;
            }
        }
    }
    for (_, t) in sum.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    Ok(MetaGradient {
        loss: loss * scale,
        params: sum,
        log_alpha: g_alpha * scale,
    })
}

/// Mutable state of a meta-training run.
#[derive(Clone, Debug)]
pub struct MetaState {
    pub policy: PolicyModel,
    pub alpha: LearnedAlpha,
    adam: Adam,
    alpha_adam: Adam,
}

fn alpha_params(alpha: LearnedAlpha) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(LOG_ALPHA_NAME, Tensor::scalar(alpha.log_alpha))
        .expect("fresh name");
    p
}

impl MetaState {
    pub fn new(policy: PolicyModel, alpha: LearnedAlpha, config: &MetaConfig) -> Self {
        MetaState {
            adam: Adam::new(policy.params(), config.learning_rate),
            alpha_adam: Adam::new(&alpha_params(alpha), config.alpha_learning_rate),
            policy,
            alpha,
        }
    }

    fn apply(&mut self, grad: &MetaGradient, learn_alpha: bool) -> Result<()> {
        let mut params = self.policy.params().clone();
        self.adam.step(&mut params, &grad.params)?;
        self.policy = PolicyModel::from_params(params)?;
        if learn_alpha {
            let mut a = alpha_params(self.alpha);
            let g = alpha_params(LearnedAlpha {
                log_alpha: grad.log_alpha,
            });
            self.alpha_adam.step(&mut a, &g)?;
            self.alpha.log_alpha = a.require(LOG_ALPHA_NAME)?.item();
        }
        Ok(())
    }
}

/// One row of a training curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub pre_adapt_reward: f64,
    pub post_adapt_reward: f64,
    pub alpha: f64,
    /// Outer loss at the first epoch (before any update this iteration).
    pub loss: f64,
}

/// Draws `count` (task, seed) pairs sequentially from `rng`.
fn task_seeds<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    fixed: Option<Task>,
) -> Vec<(Task, u64)> {
    (0..count)
        .map(|_| {
            let task = fixed.unwrap_or_else(|| Task::sample(rng));
            (task, rng.random::<u64>())
        })
        .collect()
}

/// Samples B tasks, adapts to each, and applies `ppo_epochs` Adam steps
/// on the meta parameters and log-α.
pub fn meta_iteration<R: Rng + ?Sized>(
    state: &mut MetaState,
    vae: &VaeModel,
    config: &MetaConfig,
    rng: &mut R,
    iteration: usize,
) -> Result<IterationStats> {
    let alpha = state.alpha.alpha();
    let tasks: Vec<TaskData> = task_seeds(rng, config.tasks_per_batch, None)
        .into_par_iter()
        .map(|(task, seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            collect_task_data(&state.policy, alpha, task, vae, config, &mut local)
        })
        .collect::<Result<_>>()?;

    let mut first_loss = f64::NAN;
    for epoch in 0..config.ppo_epochs {
        let grad = meta_gradient(&state.policy, state.alpha, &tasks, config)?;
        if epoch == 0 {
            first_loss = grad.loss;
        }
        state.apply(&grad, config.learn_alpha)?;
    }
    let n = tasks.len() as f64;
    Ok(IterationStats {
        iteration,
        pre_adapt_reward: tasks.iter().map(TaskData::pre_adapt_reward).sum::<f64>() / n,
        post_adapt_reward: tasks.iter().map(|t| t.post.mean_reward()).sum::<f64>() / n,
        alpha,
        loss: first_loss,
    })
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_policy: PolicyModel,
    pub best_policy: PolicyModel,
    pub best_iteration: usize,
    pub alpha: LearnedAlpha,
    pub curve: Vec<IterationStats>,
}

/// Meta-trains a freshly initialized policy for `config.iterations`.
pub fn train_meta(config: &MetaConfig, vae: &VaeModel) -> Result<TrainOutcome> {
    train_meta_with(config, vae, |_| {})
}

pub fn train_meta_with(
    config: &MetaConfig,
    vae: &VaeModel,
    mut progress: impl FnMut(&IterationStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let policy = PolicyModel::init(&mut rng, config.hidden);
    let mut state = MetaState::new(policy, LearnedAlpha::new(config.alpha_init), config);
    let mut curve = Vec::with_capacity(config.iterations);
    let mut best = (f64::NEG_INFINITY, 0, state.policy.clone());
    for it in 0..config.iterations {
        let snapshot = state.policy.clone();
        let stats = meta_iteration(&mut state, vae, config, &mut rng, it)?;
        // the post-adaptation reward was earned by the pre-update policy
        if stats.post_adapt_reward > best.0 {
            best = (stats.post_adapt_reward, it, snapshot);
        }
        progress(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        final_policy: state.policy,
        best_policy: best.2,
        best_iteration: best.1,
        alpha: state.alpha,
        curve,
    })
}

/// Where a PPO trainer draws its tasks from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskSource {
    /// A fresh task from the randomization ranges for every batch.
    Randomized,
    Fixed(Task),
}

/// One PPO iteration with the same sample budget as a meta iteration:
/// `B * (N + 1)` batches of K rollouts, each normalized on its own.
pub fn ppo_iteration<R: Rng + ?Sized>(
    policy: &mut PolicyModel,
    adam: &mut Adam,
    vae: &VaeModel,
    config: &MetaConfig,
    source: TaskSource,
    rng: &mut R,
    iteration: usize,
) -> Result<IterationStats> {
    let count = config.tasks_per_batch * (config.inner_steps + 1);
    let fixed = match source {
        TaskSource::Randomized => None,
        TaskSource::Fixed(t) => Some(t),
    };
    let current = policy.clone();
    let batches: Vec<PpoBatch> = task_seeds(rng, count, fixed)
        .into_par_iter()
        .map(|(task, seed)| {
            let mut local = ChaCha8Rng::seed_from_u64(seed);
            let rollouts = collect_rollouts(&current, &task, vae, config.rollouts, &mut local)?;
            PpoBatch::new(&current, rollouts)
        })
        .collect::<Result<_>>()?;
    let mut first_loss = f64::NAN;
    for epoch in 0..config.ppo_epochs {
        let (loss, grads) = ppo_gradient(policy, &batches, config.clip)?;
        if epoch == 0 {
            first_loss = loss;
        }
        let mut params = policy.params().clone();
        adam.step(&mut params, &grads)?;
        *policy = PolicyModel::from_params(params)?;
    }
    let mean = batches.iter().map(PpoBatch::mean_reward).sum::<f64>() / batches.len() as f64;
    Ok(IterationStats {
        iteration,
        pre_adapt_reward: mean,
        post_adapt_reward: mean,
        alpha: config.alpha_init,
        loss: first_loss,
    })
}

/// Plain PPO without adaptation.
pub fn train_ppo(
    config: &MetaConfig,
    vae: &VaeModel,
    source: TaskSource,
    mut progress: impl FnMut(&IterationStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = PolicyModel::init(&mut rng, config.hidden);
    let mut adam = Adam::new(policy.params(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.iterations);
    let mut best = (f64::NEG_INFINITY, 0, policy.clone());
    for it in 0..config.iterations {
        let snapshot = policy.clone();
        let stats = ppo_iteration(&mut policy, &mut adam, vae, config, source, &mut rng, it)?;
        if stats.post_adapt_reward > best.0 {
            best = (stats.post_adapt_reward, it, snapshot);
        }
        progress(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        final_policy: policy,
        best_policy: best.2,
        best_iteration: best.1,
        alpha: LearnedAlpha::new(config.alpha_init),
        curve,
    })
}

/// Domain-randomization baseline: PPO over tasks from the randomization
/// ranges.
pub fn train_baseline(config: &MetaConfig, vae: &VaeModel) -> Result<TrainOutcome> {
    train_ppo(config, vae, TaskSource::Randomized, |_| {})
}

/// PPO on a single fixed condition.
pub fn train_oracle(task: Task, config: &MetaConfig, vae: &VaeModel) -> Result<TrainOutcome> {
    train_ppo(config, vae, TaskSource::Fixed(task), |_| {})
}

/// Rows `iteration,pre_adapt_reward,post_adapt_reward,alpha,loss`.
pub fn write_curve_csv<W: Write>(curve: &[IterationStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "pre_adapt_reward", "post_adapt_reward", "alpha", "loss"])?;
    for s in curve {
        w.write_record(&[
            s.iteration.to_string(),
            s.pre_adapt_reward.to_string(),
            s.post_adapt_reward.to_string(),
            s.alpha.to_string(),
            s.loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
