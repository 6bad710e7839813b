mod plot;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use puckmeta_core::adaptation::{self, adapt};
use puckmeta_core::checkpoint::Checkpoint;
use puckmeta_core::config::Config;
use puckmeta_core::experiment::{self as exp, derive_seed, Method, Metadata, PolicySet};
use puckmeta_core::meta::{self, train_meta_with, train_ppo, TaskSource, TrainOutcome};
use puckmeta_core::physics::Task;
use puckmeta_core::policy::PolicyModel;
use puckmeta_core::trajectory::{generate_dataset, read_dataset_csv, write_dataset_csv};
use puckmeta_core::vae::{train_vae, write_epochs_csv, VaeModel};
use puckmeta_core::{verify, Error};

#[derive(Parser, Debug)]
#[command(
    name = "puckmeta",
    version,
    about = "Meta-learned puck striking: data, training, adaptation experiments and plots"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the swing-trajectory dataset.
    GenData,
    /// Train the trajectory VAE on the dataset.
    TrainVae,
    /// Strike with decoded latent samples and record where the puck stops.
    SweepLatent {
        #[arg(long, default_value = "isotropic_low")]
        condition: String,
    },
    /// Meta-train the policy.
    TrainMeta,
    /// Train the domain-randomization baseline.
    TrainBaseline,
    /// Train per-condition oracles (all configured conditions by default).
    TrainOracle {
        #[arg(long)]
        condition: Option<String>,
    },
    /// Adapt a trained policy to one condition and write its trace.
    Adapt {
        #[arg(long)]
        condition: String,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value = "meta")]
        method: String,
    },
    /// Adaptation curves of meta, baseline and oracle policies.
    Evaluate,
    /// Latent-action spread across repeated adaptations.
    Stability,
    /// Render experiment CSVs as SVG figures.
    Plot,
    /// Property checks that need no trained artifacts.
    Verify,
}

struct Ctx {
    config: Config,
    seed: u64,
    dir: PathBuf,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Ctx> {
        let mut config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(seed) = cli.seed {
            config.set("seed", &seed.to_string())?;
        }
        // reject bad values before touching any artifact
        config.dataset_size()?;
        config.sweep_points()?;
        config.vae()?;
        config.meta()?.validate()?;
        config.oracle()?.validate()?;
        config.experiment()?.validate()?;
        Ok(Ctx {
            seed: config.seed()?,
            dir: config.artifacts_dir(),
            config,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn metadata(&self) -> Metadata {
        Metadata::new(&self.config.hash(), self.seed)
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[stream]))
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        fs::create_dir_all(&self.dir)
            .with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(file))
    }

    /// Creates `name` in the artifacts directory, starting with the
    /// metadata block.
    fn create(&self, name: &str, meta: &Metadata) -> Result<BufWriter<File>> {
        let mut out = self.file(name)?;
        meta.write(&mut out)?;
        Ok(out)
    }

    fn open(&self, name: &str) -> Result<BufReader<File>> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path).into());
        }
        Ok(BufReader::new(File::open(&path)?))
    }

    fn vae(&self) -> Result<VaeModel> {
        Ok(VaeModel::load(&self.path("vae.ckpt"))?)
    }

    fn policy(&self, name: &str) -> Result<(PolicyModel, Checkpoint)> {
        Ok(PolicyModel::load(&self.path(name))?)
    }

    /// The adaptation step learned by the meta run.
    fn alpha(&self) -> Result<f64> {
        let (_, ck) = self.policy("meta.ckpt")?;
        Ok(ck.get_parsed("alpha")?)
    }

    fn save_outcome(&self, name: &str, outcome: &TrainOutcome, meta: bool) -> Result<()> {
        let mut extra = vec![
            ("config_hash", self.config.hash()),
            ("seed", self.seed.to_string()),
            ("iterations", outcome.curve.len().to_string()),
            ("best_iteration", outcome.best_iteration.to_string()),
        ];
        if meta {
            extra.push(("alpha", outcome.alpha.alpha().to_string()));
        }
        outcome
            .final_policy
            .save(&self.path(&format!("{name}.ckpt")), &extra)?;
        outcome
            .best_policy
            .save(&self.path(&format!("{name}_best.ckpt")), &extra)?;
        let out = self.create(&format!("{name}_curve.csv"), &self.metadata())?;
        meta::write_curve_csv(&outcome.curve, out)?;
        Ok(())
    }
}

fn progress(label: &str) -> impl FnMut(&meta::IterationStats) + '_ {
    move |s| {
        if s.iteration % 25 == 0 {
            eprintln!(
                "{label} {:>5}  pre {:>8.3}  post {:>8.3}  alpha {:.4}",
                s.iteration, s.pre_adapt_reward, s.post_adapt_reward, s.alpha
            );
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::GenData => {
            let data = generate_dataset(&mut ctx.rng(1), ctx.config.dataset_size()?)?;
            let out = ctx.create("dataset.csv", &ctx.metadata())?;
            write_dataset_csv(&data, out)?;
            println!("wrote {} trajectories to {}", data.len(), ctx.path("dataset.csv").display());
        }
        Command::TrainVae => {
            let data = read_dataset_csv(ctx.open("dataset.csv")?)?;
            let (model, stats) = train_vae(&data, &ctx.config.vae()?, &mut ctx.rng(2))?;
            fs::create_dir_all(&ctx.dir)?;
            model.save(&ctx.path("vae.ckpt"))?;
            write_epochs_csv(&stats, ctx.create("vae_curve.csv", &ctx.metadata())?)?;
            println!(
                "trained on {} trajectories; reconstruction rms {:.4} (standardized units)",
                data.len(),
                model.reconstruction_rms(&data)?
            );
        }
        Command::SweepLatent { condition } => {
            let vae = ctx.vae()?;
            let task = Task::fixed(condition)?;
            let grid = exp::gaussian_grid(&mut ctx.rng(3), ctx.config.sweep_points()?);
            let rows = exp::latent_sweep_report(&vae, &task, &grid)?;
            let meta = ctx.metadata().with("condition", condition);
            exp::write_sweep_csv(&rows, &meta, ctx.file("sweep_latent.csv")?)?;
            println!("wrote {} sweep rows; {} decodes clamped", rows.len(), vae.clamp_events());
        }
        Command::TrainMeta => {
            let vae = ctx.vae()?;
            let outcome = train_meta_with(&ctx.config.meta()?, &vae, progress("meta"))?;
            ctx.save_outcome("meta", &outcome, true)?;
            println!("learned alpha {:.5}", outcome.alpha.alpha());
        }
        Command::TrainBaseline => {
            let vae = ctx.vae()?;
            let config = ctx.config.meta()?;
            let outcome = train_ppo(&config, &vae, TaskSource::Randomized, progress("baseline"))?;
            ctx.save_outcome("baseline", &outcome, false)?;
            println!("baseline std {:?}", outcome.final_policy.std());
        }
        Command::TrainOracle { condition } => {
            let vae = ctx.vae()?;
            let config = ctx.config.oracle()?;
            let conditions = match condition {
                Some(c) => vec![c.clone()],
                None => ctx.config.conditions()?,
            };
            for c in conditions {
                let task = Task::fixed(&c)?;
                let label = format!("oracle {c}");
                let outcome = train_ppo(&config, &vae, TaskSource::Fixed(task), progress(&label))?;
                ctx.save_outcome(&format!("oracle_{c}"), &outcome, false)?;
            }
        }
        Command::Adapt {
            condition,
            steps,
            method,
        } => {
            let method = Method::parse(method)?;
            let task = Task::fixed(condition)?;
            let vae = ctx.vae()?;
            let alpha = ctx.alpha()?;
            let (policy, _) = ctx.policy(&checkpoint_name(method, condition))?;
            let rollouts = ctx.config.meta()?.rollouts;
            let trace = adapt(&policy, &task, &vae, alpha, rollouts, *steps, &mut ctx.rng(4))?;
            let meta = ctx
                .metadata()
                .with("condition", condition)
                .with("method", method.name())
                .with("alpha", alpha);
            let stem = format!("adapt_{}_{condition}", method.name());
            adaptation::write_rollouts_csv(&trace, ctx.create(&format!("{stem}_rollouts.csv"), &meta)?)?;
            adaptation::write_summary_csv(&trace, ctx.create(&format!("{stem}_summary.csv"), &meta)?)?;
            for (i, s) in trace.steps.iter().enumerate() {
                println!("step {:>2}  mean reward {:>8.3}  grad norm {:.3}", i + 1, s.mean_reward(), s.grad_norm);
            }
        }
        Command::Evaluate => {
            let config = ctx.config.experiment()?;
            let vae = ctx.vae()?;
            let mut oracles = IndexMap::new();
            for c in &config.conditions {
                oracles.insert(c.clone(), ctx.policy(&format!("oracle_{c}.ckpt"))?.0);
            }
            let policies = PolicySet {
                meta: ctx.policy("meta.ckpt")?.0,
                baseline: ctx.policy("baseline.ckpt")?.0,
                oracles,
                alpha: ctx.alpha()?,
            };
            let result = exp::run_adaptation_experiment(&policies, &vae, &config, &Method::ALL)?;
            let meta = ctx.metadata().with("alpha", policies.alpha);
            exp::write_points_csv(&result.points, &meta, ctx.file("experiment_points.csv")?)?;
            exp::write_summary_csv(&result.curves, &meta, ctx.file("experiment_summary.csv")?)?;
            exp::write_episodes_csv(&result.episodes, &meta, ctx.file("experiment_episodes.csv")?)?;
            for curve in &result.curves {
                let means: Vec<String> = curve.steps.iter().map(|s| format!("{:7.3}", s.mean)).collect();
                println!("{:<9}{:<19}{}", curve.method.name(), curve.condition, means.join(""));
            }
        }
        Command::Stability => {
            let config = ctx.config.experiment()?;
            let condition = ctx.config.get("stability_condition").to_string();
            let vae = ctx.vae()?;
            let meta_policy = ctx.policy("meta.ckpt")?.0;
            let baseline = ctx.policy("baseline.ckpt")?.0;
            let report = exp::run_latent_stability(
                &[(Method::Meta, &meta_policy), (Method::Baseline, &baseline)],
                ctx.alpha()?,
                &vae,
                &condition,
                &config,
            )?;
            let meta = ctx
                .metadata()
                .with("condition", &condition)
                .with("spread_metric", exp::SPREAD_METRIC);
            exp::write_latents_csv(&report, &meta, ctx.file("stability_latents.csv")?)?;
            exp::write_spread_csv(&report, &meta, ctx.file("stability_spread.csv")?)?;
            for m in &report.methods {
                let s: Vec<String> = m.spread.iter().map(|v| format!("{v:.4}")).collect();
                println!("{:<9}{}", m.method.name(), s.join(" "));
            }
        }
        Command::Plot => {
            let written = plot::render_all(&ctx.dir)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::Verify => {
            let mut failed = 0;
            for c in verify::run_checks() {
                println!("{} {:<28}{}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
        }
    }
    Ok(())
}

fn checkpoint_name(method: Method, condition: &str) -> String {
    match method {
        Method::Oracle => format!("oracle_{condition}.ckpt"),
        m => format!("{}.ckpt", m.name()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let missing = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::MissingArtifact(_))));
    if missing {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
