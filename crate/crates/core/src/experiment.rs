//! Adaptation-curve and latent-stability experiments on the fixed
//! conditions.
//!
//! Every (condition, repetition) pair owns two random streams: one drives
//! the adaptation rollouts and one draws the evaluation goals. Both are
//! shared by all methods, so method differences are paired comparisons.

use std::io::{Read, Write};

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adaptation::{adapt, adapt_step, strike_rewards, Rollout};
use crate::error::{Error, Result};
use crate::physics::{execute_strike, Goal, Task};
use crate::policy::PolicyModel;
use crate::stats;
use crate::trajectory::LatentAction;
use crate::vec2::Vec2;
use crate::vae::VaeModel;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Description written into stability outputs.
pub const SPREAD_METRIC: &str =
    "mean over goals of the trace of the covariance across repetitions of the policy-mean latent";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub conditions: Vec<String>,
    pub repetitions: usize,
    /// Adaptation steps after the initial evaluation.
    pub eval_steps: usize,
    /// Mean-action episodes per evaluation.
    pub eval_episodes: usize,
    /// Exploration rollouts per adaptation step.
    pub rollouts: usize,
    pub stability_goals: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            conditions: crate::physics::CONDITIONS.iter().map(|s| s.to_string()).collect(),
            repetitions: 25,
            eval_steps: 10,
            eval_episodes: 16,
            rollouts: 16,
            stability_goals: 1000,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.eval_episodes == 0 || self.stability_goals == 0 {
            return Err(Error::Config(
                "repetitions, eval_episodes and stability_goals must be at least 1".into(),
            ));
        }
        if self.rollouts < 2 {
            return Err(Error::Config("rollouts must be at least 2".into()));
        }
        for c in &self.conditions {
            Task::fixed(c)?;
        }
        Ok(())
    }
}

/// SplitMix64 chain: a well-mixed seed for each tagged sub-stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

const ADAPT_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const STABILITY_GOALS_STREAM: u64 = 3;
const STABILITY_ADAPT_STREAM: u64 = 4;

/// Mean-action episodes on fixed goals.
pub fn evaluate_on_goals(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    goals: &[Goal],
) -> Result<Vec<Rollout>> {
    let actions = policy.mean_actions(goals)?;
    let pairs: Vec<(Goal, LatentAction)> = goals.iter().copied().zip(actions).collect();
    let rewards = strike_rewards(task, vae, &pairs)?;
    Ok(pairs
        .into_iter()
        .zip(rewards)
        .map(|((goal, action), reward)| Rollout {
            goal,
            action,
            log_density: f64::NAN,
            reward,
            sampled: false,
        })
        .collect())
}

/// Mean reward over `episodes` goals drawn from `rng`, and the episodes.
pub fn evaluate_policy<R: Rng + ?Sized>(
    policy: &PolicyModel,
    task: &Task,
    vae: &VaeModel,
    episodes: usize,
    rng: &mut R,
) -> Result<(f64, Vec<Rollout>)> {
    if episodes == 0 {
        return Err(Error::Input("evaluation needs at least one episode".into()));
    }
    let goals: Vec<Goal> = (0..episodes).map(|_| Goal::sample(rng)).collect();
    let eps = evaluate_on_goals(policy, task, vae, &goals)?;
    Ok((mean_reward(&eps), eps))
}

fn mean_reward(eps: &[Rollout]) -> f64 {
    eps.iter().map(|r| r.reward).sum::<f64>() / eps.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Meta,
    Baseline,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Meta, Method::Baseline, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Meta => "meta",
            Method::Baseline => "baseline",
            Method::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown method `{s}`")))
    }
}

/// Trained policies under comparison.
#[derive(Clone, Debug)]
pub struct PolicySet {
    pub meta: PolicyModel,
    pub baseline: PolicyModel,
    /// Per-condition oracles, keyed by condition name.
    pub oracles: IndexMap<String, PolicyModel>,
    /// Adaptation step size used for both meta and baseline.
    pub alpha: f64,
}

/// What happens to a method's policy between evaluations.
fn adapts(method: Method) -> bool {
    method != Method::Oracle
}

/// Evaluation reward of one (method, condition, repetition, step).
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub method: Method,
    pub condition: String,
    pub repetition: usize,
    pub step: usize,
    pub reward: f64,
}

/// An episode with its experimental coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub method: Method,
    pub condition: String,
    pub repetition: usize,
    pub step: usize,
    /// `"adapt"` for exploration rollouts, `"eval"` for evaluation episodes.
    pub phase: &'static str,
    pub rollout: Rollout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepSummary {
    pub step: usize,
    pub mean: f64,
    pub std_error: f64,
    /// Per-repetition values in repetition order.
    pub values: Vec<f64>,
}

impl StepSummary {
    /// Normal-approximation 95% interval of the mean.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationCurve {
    pub method: Method,
    pub condition: String,
    pub steps: Vec<StepSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub points: Vec<CurvePoint>,
    pub curves: Vec<AdaptationCurve>,
    pub episodes: Vec<EpisodeRecord>,
}

impl ExperimentResult {
    pub fn curve(&self, method: Method, condition: &str) -> Option<&AdaptationCurve> {
        self.curves
            .iter()
            .find(|c| c.method == method && c.condition == condition)
    }
}

/// Groups raw points into per-step summaries, ordered by method then by
/// first appearance of each condition.
pub fn summarize(points: &[CurvePoint]) -> Vec<AdaptationCurve> {
    let mut groups: IndexMap<(Method, String), Vec<&CurvePoint>> = IndexMap::new();
    for p in points {
        groups
            .entry((p.method, p.condition.clone()))
            .or_default()
            .push(p);
    }
    groups.sort_by(|a, _, b, _| a.0.cmp(&b.0));
    groups
        .into_iter()
        .map(|((method, condition), mut pts)| {
            pts.sort_by_key(|p| (p.step, p.repetition));
            let max_step = pts.iter().map(|p| p.step).max().unwrap_or(0);
            let steps = (0..=max_step)
                .map(|step| {
                    let values: Vec<f64> = pts
                        .iter()
                        .filter(|p| p.step == step)
                        .map(|p| p.reward)
                        .collect();
                    StepSummary {
                        step,
                        mean: stats::mean(&values),
                        std_error: stats::std_error(&values),
                        values,
                    }
                })
                .collect();
            AdaptationCurve {
                method,
                condition,
                steps,
            }
        })
        .collect()
}

fn policy_for<'a>(policies: &'a PolicySet, method: Method, condition: &str) -> Result<&'a PolicyModel> {
    match method {
        Method::Meta => Ok(&policies.meta),
        Method::Baseline => Ok(&policies.baseline),
        Method::Oracle => policies
            .oracles
            .get(condition)
            .ok_or_else(|| Error::Config(format!("no oracle policy for `{condition}`"))),
    }
}

/// An episode with its step and phase, before the method and condition
/// are attached.
type TaggedEpisode = (usize, &'static str, Rollout);

/// One repetition of one method: evaluate, then alternate adaptation and
/// evaluation for `eval_steps` steps.
#[allow(clippy::too_many_arguments)]
fn run_repetition(
    policy: &PolicyModel,
    method: Method,
    task: &Task,
    vae: &VaeModel,
    alpha: f64,
    config: &ExperimentConfig,
    condition_index: usize,
    repetition: usize,
) -> Result<(Vec<f64>, Vec<TaggedEpisode>)> {
    let tags = [condition_index as u64, repetition as u64];
    let mut adapt_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[ADAPT_STREAM, tags[0], tags[1]]));
    let mut eval_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[EVAL_STREAM, tags[0], tags[1]]));
    let mut current = policy.clone();
    let mut rewards = Vec::with_capacity(config.eval_steps + 1);
    let mut episodes = Vec::new();
    for step in 0..=config.eval_steps {
        if step > 0 && adapts(method) {
            let (next, rec) = adapt_step(
                &current,
                task,
                vae,
                alpha,
                config.rollouts,
                &mut adapt_rng,
                false,
            )?;
            episodes.extend(rec.rollouts.into_iter().map(|r| (step, "adapt", r)));
            current = next;
        }
        let (mean, eps) = evaluate_policy(&current, task, vae, config.eval_episodes, &mut eval_rng)?;
        rewards.push(mean);
        episodes.extend(eps.into_iter().map(|r| (step, "eval", r)));
    }
    Ok((rewards, episodes))
}

/// Adaptation curves of every method on every configured condition.
pub fn run_adaptation_experiment(
    policies: &PolicySet,
    vae: &VaeModel,
    config: &ExperimentConfig,
    methods: &[Method],
) -> Result<ExperimentResult> {
    config.validate()?;
    let mut jobs = Vec::new();
    for (ci, condition) in config.conditions.iter().enumerate() {
        for &method in methods {
            // fail before any simulation if a policy is missing
            policy_for(policies, method, condition)?;
            for rep in 0..config.repetitions {
                jobs.push((ci, condition.clone(), method, rep));
            }
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|(ci, condition, method, rep)| {
            let task = Task::fixed(condition)?;
            let policy = policy_for(policies, *method, condition)?;
            run_repetition(policy, *method, &task, vae, policies.alpha, config, *ci, *rep)
        })
        .collect::<Result<_>>()?;

    let mut points = Vec::new();
    let mut episodes = Vec::new();
    for ((_, condition, method, rep), (rewards, eps)) in jobs.into_iter().zip(results) {
        for (step, reward) in rewards.into_iter().enumerate() {
            points.push(CurvePoint {
                method,
                condition: condition.clone(),
                repetition: rep,
                step,
                reward,
            });
        }
        for (step, phase, rollout) in eps {
            episodes.push(EpisodeRecord {
                method,
                condition: condition.clone(),
                repetition: rep,
                step,
                phase,
                rollout,
            });
        }
    }
    Ok(ExperimentResult {
        curves: summarize(&points),
        points,
        episodes,
    })
}

/// Policy-mean latents of one method for every repetition and step.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodLatents {
    pub method: Method,
    /// `latents[repetition][step][goal]`
    pub latents: Vec<Vec<Vec<LatentAction>>>,
    /// Spread metric per step.
    pub spread: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentStabilityReport {
    pub condition: String,
    pub goals: Vec<Goal>,
    pub methods: Vec<MethodLatents>,
}

impl LatentStabilityReport {
    pub fn spread(&self, method: Method) -> Option<&[f64]> {
        self.methods
            .iter()
            .find(|m| m.method == method)
            .map(|m| m.spread.as_slice())
    }
}

/// Mean over goals of the trace of the covariance across repetitions;
/// `per_rep[r][g]` is repetition r's latent for goal g. Uses the `n - 1`
/// denominator; a single repetition has zero spread.
pub fn spread_metric(per_rep: &[&[LatentAction]]) -> f64 {
    let reps = per_rep.len();
    if reps < 2 {
        return 0.0;
    }
    let goals = per_rep[0].len();
    let mut total = 0.0;
    for g in 0..goals {
        for axis in 0..2 {
            let xs: Vec<f64> = per_rep.iter().map(|r| r[g].0[axis]).collect();
            let v = stats::sample_std(&xs);
            total += v * v;
        }
    }
    total / goals as f64
}

/// Fixed goal set of the stability analysis.
pub fn stability_goals(config: &ExperimentConfig) -> Vec<Goal> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STABILITY_GOALS_STREAM]));
    (0..config.stability_goals)
        .map(|_| Goal::sample(&mut rng))
        .collect()
}

/// Repeats `eval_steps` adaptation steps `repetitions` times for each
/// method and records the policy mean on a fixed goal set after every
/// step.
pub fn run_latent_stability(
    methods: &[(Method, &PolicyModel)],
    alpha: f64,
    vae: &VaeModel,
    condition: &str,
    config: &ExperimentConfig,
) -> Result<LatentStabilityReport> {
    config.validate()?;
    let task = Task::fixed(condition)?;
    let goals = stability_goals(config);
    let mut out = Vec::with_capacity(methods.len());
    for &(method, policy) in methods {
        let latents: Vec<Vec<Vec<LatentAction>>> = (0..config.repetitions)
            .into_par_iter()
            .map(|rep| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    &[STABILITY_ADAPT_STREAM, rep as u64],
                ));
                let trace = adapt(
                    policy,
                    &task,
                    vae,
                    alpha,
                    config.rollouts,
                    config.eval_steps,
                    &mut rng,
                )?;
                trace
                    .snapshots
                    .iter()
                    .map(|p| p.mean_actions(&goals))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let spread = (0..=config.eval_steps)
            .map(|step| {
                let per_rep: Vec<&[LatentAction]> =
                    latents.iter().map(|r| r[step].as_slice()).collect();
                spread_metric(&per_rep)
            })
            .collect();
        out.push(MethodLatents {
            method,
            latents,
            spread,
        });
    }
    Ok(LatentStabilityReport {
        condition: condition.to_string(),
        goals,
        methods: out,
    })
}

/// Rest position of the puck after striking with the decoded `z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub z: LatentAction,
    pub final_position: Vec2,
}

/// Executes the decoded trajectory of every grid point under `task`.
pub fn latent_sweep_report(vae: &VaeModel, task: &Task, grid: &[LatentAction]) -> Result<Vec<SweepRow>> {
    grid.par_iter()
        .map(|&z| {
            let state = execute_strike(task, &vae.decode(z)?)?;
            Ok(SweepRow {
                z,
                final_position: state.position,
            })
        })
        .collect()
}

/// Standard-normal latent samples, the prior the decoder was trained under.
pub fn gaussian_grid<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<LatentAction> {
    (0..count)
        .map(|_| {
            let a: f64 = rng.sample(rand_distr::StandardNormal);
            let b: f64 = rng.sample(rand_distr::StandardNormal);
            LatentAction([a, b])
        })
        .collect()
}

/// `count` evenly spaced points on `[lo, hi]` along `axis`, the other
/// coordinate held at zero.
pub fn axis_grid(axis: usize, lo: f64, hi: f64, count: usize) -> Vec<LatentAction> {
    (0..count)
        .map(|i| {
            let t = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.5 };
            let mut z = [0.0; 2];
            z[axis] = lo + t * (hi - lo);
            LatentAction(z)
        })
        .collect()
}

/// `z0,z1,final_x,final_y`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], meta: &Metadata, mut out: W) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z0", "z1", "final_x", "final_y"])?;
    for r in rows {
        w.write_record(&[
            r.z.0[0].to_string(),
            r.z.0[1].to_string(),
            r.final_position.x.to_string(),
            r.final_position.y.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance written at the top of every CSV as `# key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Metadata {
    pub entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new(config_hash: &str, seed: u64) -> Self {
        Metadata {
            entries: vec![
                ("config_hash".into(), config_hash.into()),
                ("seed".into(), seed.to_string()),
                ("version".into(), ARTIFACT_VERSION.into()),
            ],
        }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k} = {v}")?;
        }
        Ok(())
    }
}

/// Raw per-repetition points: `method,condition,repetition,step,reward`.
pub fn write_points_csv<W: Write>(points: &[CurvePoint], meta: &Metadata, mut out: W) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "condition", "repetition", "step", "reward"])?;
    for p in points {
        w.write_record(&[
            p.method.name().to_string(),
            p.condition.clone(),
            p.repetition.to_string(),
            p.step.to_string(),
            p.reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<CurvePoint>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Input(format!("expected 5 columns, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Input(format!("bad number `{}`", &rec[i])))
        };
        out.push(CurvePoint {
            method: Method::parse(&rec[0])?,
            condition: rec[1].to_string(),
            repetition: num(2)? as usize,
            step: num(3)? as usize,
            reward: num(4)?,
        });
    }
    Ok(out)
}

/// Curve summary: `method,condition,step,mean,std_error,ci_low,ci_high,n`.
pub fn write_summary_csv<W: Write>(
    curves: &[AdaptationCurve],
    meta: &Metadata,
    mut out: W,
) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "condition", "step", "mean", "std_error", "ci_low", "ci_high", "n",
    ])?;
    for c in curves {
        for s in &c.steps {
            let (lo, hi) = s.ci95();
            w.write_record(&[
                c.method.name().to_string(),
                c.condition.clone(),
                s.step.to_string(),
                s.mean.to_string(),
                s.std_error.to_string(),
                lo.to_string(),
                hi.to_string(),
                s.values.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a summary CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub condition: String,
    pub step: usize,
    pub mean: f64,
    pub std_error: f64,
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 8 {
            return Err(Error::Input(format!("expected 8 columns, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::Input(format!("bad number `{}`", &rec[i])))
        };
        out.push(SummaryRow {
            method: Method::parse(&rec[0])?,
            condition: rec[1].to_string(),
            step: num(2)? as usize,
            mean: num(3)?,
            std_error: num(4)?,
        });
    }
    Ok(out)
}

/// Every episode: `method,condition,repetition,step,phase,goal_x,goal_y,z0,z1,reward,sampled`.
pub fn write_episodes_csv<W: Write>(
    episodes: &[EpisodeRecord],
    meta: &Metadata,
    mut out: W,
) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "condition", "repetition", "step", "phase", "goal_x", "goal_y", "z0", "z1",
        "reward", "sampled",
    ])?;
    for e in episodes {
        let r = &e.rollout;
        w.write_record(&[
            e.method.name().to_string(),
            e.condition.clone(),
            e.repetition.to_string(),
            e.step.to_string(),
            e.phase.to_string(),
            r.goal.target.x.to_string(),
            r.goal.target.y.to_string(),
            r.action.0[0].to_string(),
            r.action.0[1].to_string(),
            r.reward.to_string(),
            r.sampled.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Stability latents: `method,repetition,step,goal_index,z0,z1`.
pub fn write_latents_csv<W: Write>(
    report: &LatentStabilityReport,
    meta: &Metadata,
    mut out: W,
) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "repetition", "step", "goal_index", "z0", "z1"])?;
    for m in &report.methods {
        for (rep, steps) in m.latents.iter().enumerate() {
            for (step, zs) in steps.iter().enumerate() {
                for (g, z) in zs.iter().enumerate() {
                    w.write_record(&[
                        m.method.name().to_string(),
                        rep.to_string(),
                        step.to_string(),
                        g.to_string(),
                        z.0[0].to_string(),
                        z.0[1].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Stability summary: `method,step,spread`.
pub fn write_spread_csv<W: Write>(
    report: &LatentStabilityReport,
    meta: &Metadata,
    mut out: W,
) -> Result<()> {
    meta.write(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "step", "spread"])?;
    for m in &report.methods {
        for (step, s) in m.spread.iter().enumerate() {
            w.write_record(&[m.method.name().to_string(), step.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `method,step,spread` rows back.
pub fn read_spread_csv<R: Read>(input: R) -> Result<Vec<(Method, usize, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Input(format!("expected 3 columns, got {}", rec.len())));
        }
        let step = rec[1]
            .parse()
            .map_err(|_| Error::Input(format!("bad step `{}`", &rec[1])))?;
        let spread = rec[2]
            .parse()
            .map_err(|_| Error::Input(format!("bad spread `{}`", &rec[2])))?;
        out.push((Method::parse(&rec[0])?, step, spread));
    }
    Ok(out)
}

/// Reads `z0,z1,final_x,final_y` rows back.
pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: Vec<f64> = rec
            .iter()
            .map(|x| x.parse().map_err(|_| Error::Input(format!("bad number `{x}`"))))
            .collect::<Result<_>>()?;
        if v.len() != 4 {
            return Err(Error::Input(format!("expected 4 columns, got {}", v.len())));
        }
        out.push(SweepRow {
            z: LatentAction([v[0], v[1]]),
            final_position: Vec2::new(v[2], v[3]),
        });
    }
    Ok(out)
}
