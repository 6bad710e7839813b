//! Few-shot policy adaptation: K rollouts, normalized rewards, a vanilla
//! policy-gradient loss and one SGD step, repeated N times.

use std::io::Write;

use puckmeta_autodiff::{functional_update, sgd_step, MlpSpec, ParamSet, ParamVars, Tape, Var};
use rand::Rng;
use rayon::prelude::*;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::physics::{execute_strike, reward, Goal, Task};
use crate::policy::{action_from_noise, log_densities, PolicyModel};
use crate::trajectory::LatentAction;
use crate::vae::VaeModel;

/// Below this population std a reward batch is treated as constant.
pub const DEGENERATE_STD: f64 = 1e-8;

/// One single-step episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    pub goal: Goal,
    pub action: LatentAction,
    /// Log-density under the policy that generated the action; kept as a
    /// cross-check, losses always recompute it.
    pub log_density: f64,
    pub reward: f64,
    /// Whether the action was sampled (exploration) or the policy mean.
    pub sampled: bool,
}

/// Runs one strike per (goal, action) pair in parallel; order is kept.
pub fn strike_rewards(
    task: &Task,
    vae: &VaeModel,
    pairs: &[(Goal, LatentAction)],
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|(goal, z)| {
            let trajectory = vae.decode(*z)?;
            let end = execute_strike(task, &trajectory)?;
            Ok(reward(&end, goal))
        })
        .collect()
}

/// `k` episodes with sampled goals and sampled actions. All randomness is
/// drawn from `rng` up front, so the result does not depend on how the
/// simulations are scheduled.
pub fn collect_rollouts<R: Rng + ?Sized>(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    if k < 2 {
        return Err(Error::Input(format!("need at least 2 rollouts, got {k}")));
    }
    let goals: Vec<Goal> = (0..k).map(|_| Goal::sample(rng)).collect();
    let noise: Vec<[f64; 2]> = (0..k)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    collect_with(policy, task, vae, &goals, &noise)
}

/// Episodes for the given goals with actions `mean + std * noise`.
pub fn collect_with(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    goals: &[Goal],
    noise: &[[f64; 2]],
) -> Result<Vec<Rollout>> {
    let means = policy.mean_actions(goals)?;
    let log_std = policy.log_std();
    let drawn: Vec<(LatentAction, f64)> = means
        .iter()
        .zip(noise)
        .map(|(m, eps)| action_from_noise(m.0, log_std, *eps))
        .collect();
    let pairs: Vec<(Goal, LatentAction)> =
        goals.iter().zip(&drawn).map(|(g, (z, _))| (*g, *z)).collect();
    let rewards = strike_rewards(task, vae, &pairs)?;
    Ok(goals
        .iter()
        .zip(drawn)
        .zip(rewards)
        .map(|((goal, (action, log_density)), reward)| Rollout {
            goal: *goal,
            action,
            log_density,
            reward,
            sampled: true,
        })
        .collect())
}

/// `(r - mean) / std` with the population std; all zeros when the batch
/// is (numerically) constant.
pub fn normalize_rewards(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "reward normalization needs at least 2 values, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std.is_nan() || std < DEGENERATE_STD {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn goals_and_actions(rollouts: &[Rollout]) -> (Vec<Goal>, Vec<LatentAction>) {
    rollouts.iter().map(|r| (r.goal, r.action)).unzip()
}

/// `-(1/K) Σ r̃_k log π(z_k | s_k)` with log-densities recomputed under
/// `params`.
pub fn vpg_loss<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    rollouts: &[Rollout],
    normalized: &[f64],
) -> Result<Var<'t>> {
    if rollouts.len() != normalized.len() || rollouts.is_empty() {
        return Err(Error::Input(format!(
            "{} rollouts but {} rewards",
            rollouts.len(),
            normalized.len()
        )));
    }
    let (goals, actions) = goals_and_actions(rollouts);
    let logp = log_densities(spec, params, &goals, &actions)?;
    let weights = logp.tape().constant(puckmeta_autodiff::Tensor::vector(normalized.to_vec()));
    Ok((logp * weights).sum().scale(-1.0 / rollouts.len() as f64))
}

/// One inner update on the tape: `θ - α ∇L(θ)`.
///
/// With `first_order` the gradient enters as a constant, so outer
/// gradients see only the identity path through `θ` (and `α`).
pub fn inner_update<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    alpha: Var<'t>,
    rollouts: &[Rollout],
    normalized: &[f64],
    first_order: bool,
) -> Result<(ParamVars<'t>, Var<'t>)> {
    let tape = alpha.tape();
    let loss = vpg_loss(spec, params, rollouts, normalized)?;
    let grads = if first_order {
        let values = tape.gradients(loss, params)?;
        ParamVars::constant(tape, &values)
    } else {
        tape.gradients_graph(loss, params)?
    };
    Ok((functional_update(params, &grads, alpha)?, loss))
}

/// Diagnostics of one adaptation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub rollouts: Vec<Rollout>,
    pub normalized: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn mean_reward(&self) -> f64 {
        self.rollouts.iter().map(|r| r.reward).sum::<f64>() / self.rollouts.len() as f64
    }
}

/// Loss value and gradient of the VPG loss at `policy`.
pub fn vpg_gradient(
    policy: &PolicyModel,
    rollouts: &[Rollout],
    normalized: &[f64],
) -> Result<(f64, ParamSet)> {
    let tape = Tape::new();
    let vars = ParamVars::track(&tape, policy.params());
    let loss = vpg_loss(policy.spec(), &vars, rollouts, normalized)?;
    Ok((loss.item(), tape.gradients(loss, &vars)?))
}

/// Collects `k` rollouts and takes one SGD step of size `alpha`.
///
/// `differentiable` routes the update through the tape (as the meta
/// trainer does); the resulting values are identical to the destructive
/// path.
pub fn adapt_step<R: Rng + ?Sized>(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    alpha: f64,
    k: usize,
    rng: &mut R,
    differentiable: bool,
) -> Result<(PolicyModel, StepRecord)> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Input(format!("step size must be non-negative, got {alpha}")));
    }
    let rollouts = collect_rollouts(policy, task, vae, k, rng)?;
    let normalized = normalize_rewards(&rollouts.iter().map(|r| r.reward).collect::<Vec<_>>())?;
    update_from_rollouts(policy, alpha, rollouts, normalized, differentiable)
}

/// The SGD step of [`adapt_step`] for already collected rollouts.
pub fn update_from_rollouts(
    policy: &PolicyModel,
    alpha: f64,
    rollouts: Vec<Rollout>,
    normalized: Vec<f64>,
    differentiable: bool,
) -> Result<(PolicyModel, StepRecord)> {
    let (next, loss, grad_norm) = if differentiable {
        let tape = Tape::new();
        let vars = ParamVars::track(&tape, policy.params());
        let step = tape.scalar(alpha);
        let loss = vpg_loss(policy.spec(), &vars, &rollouts, &normalized)?;
        let grads = tape.gradients_graph(loss, &vars)?;
        let grad_norm = grads.values().norm();
        let updated = functional_update(&vars, &grads, step)?;
        (updated.values(), loss.item(), grad_norm)
    } else {
        let (loss, grads) = vpg_gradient(policy, &rollouts, &normalized)?;
        let mut params = policy.params().clone();
        sgd_step(&mut params, &grads, alpha)?;
        (params, loss, grads.norm())
    };
    Ok((
        PolicyModel::from_params(next)?,
        StepRecord {
            rollouts,
            normalized,
            loss,
            grad_norm,
        },
    ))
}

/// Snapshots θ_0 … θ_N and per-step diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationTrace {
    pub snapshots: Vec<PolicyModel>,
    pub steps: Vec<StepRecord>,
}

impl AdaptationTrace {
    pub fn final_policy(&self) -> &PolicyModel {
        self.snapshots.last().expect("at least the initial policy")
    }
}

/// `n` sequential adaptation steps.
#[allow(clippy::too_many_arguments)]
pub fn adapt<R: Rng + ?Sized>(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    alpha: f64,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<AdaptationTrace> {
    let mut snapshots = vec![policy.clone()];
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let (next, record) = adapt_step(snapshots.last().unwrap(), task, vae, alpha, k, rng, false)?;
        snapshots.push(next);
        steps.push(record);
    }
    Ok(AdaptationTrace { snapshots, steps })
}

/// Rows `step,rollout_index,goal_x,goal_y,z0,z1,reward`.
pub fn write_rollouts_csv<W: Write>(trace: &AdaptationTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "rollout_index", "goal_x", "goal_y", "z0", "z1", "reward"])?;
    for (step, rec) in trace.steps.iter().enumerate() {
        for (i, r) in rec.rollouts.iter().enumerate() {
            w.write_record(&[
                step.to_string(),
                i.to_string(),
                r.goal.target.x.to_string(),
                r.goal.target.y.to_string(),
                r.action.0[0].to_string(),
                r.action.0[1].to_string(),
                r.reward.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `step,mean_reward,loss,grad_norm`.
pub fn write_summary_csv<W: Write>(trace: &AdaptationTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "mean_reward", "loss", "grad_norm"])?;
    for (step, rec) in trace.steps.iter().enumerate() {
        w.write_record(&[
            step.to_string(),
            rec.mean_reward().to_string(),
            rec.loss.to_string(),
            rec.grad_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
