//! β-annealed variational autoencoder over flattened strike trajectories.
//!
//! Encoder: 51 → 64 (tanh) → mean 2 and log-variance 2.
//! Decoder: 2 → 64 (tanh) → 51, read as the trajectory mean in
//! standardized coordinates.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use puckmeta_autodiff::{Adam, MlpSpec, ParamSet, ParamVars, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::trajectory::{LatentAction, Trajectory, TRAJECTORY_DIM, WORKSPACE_BOUND};

pub const LATENT_DIM: usize = 2;
const CHECKPOINT_KIND: &str = "vae";

/// Per-coordinate affine standardization fitted on a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Coordinates whose spread is below this are left unscaled.
const MIN_STD: f64 = 1e-8;

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Input("cannot standardize an empty dataset".into()))?;
        let n = rows.len() as f64;
        let dim = first.len();
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn destandardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: 64,
            beta_start: 1e-7,
            beta_end: 1e-3,
        }
    }
}

impl VaeConfig {
    /// KL weight for `epoch`, log-linear from `beta_start` at the first
    /// epoch to `beta_end` at the last.
    pub fn beta(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.beta_start;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        let (a, b) = (self.beta_start.log10(), self.beta_end.log10());
        10f64.powf(a + (b - a) * frac)
    }
}

/// Layer layout of the encoder and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeArchitecture {
    pub trunk: MlpSpec,
    pub mean_head: MlpSpec,
    pub logvar_head: MlpSpec,
    pub decoder: MlpSpec,
}

impl VaeArchitecture {
    pub fn new(hidden: usize) -> Self {
        VaeArchitecture {
            trunk: MlpSpec::new("vae.encoder", &[TRAJECTORY_DIM, hidden]),
            mean_head: MlpSpec::new("vae.encoder_mean", &[hidden, LATENT_DIM]),
            logvar_head: MlpSpec::new("vae.encoder_logvar", &[hidden, LATENT_DIM]),
            decoder: MlpSpec::new("vae.decoder", &[LATENT_DIM, hidden, TRAJECTORY_DIM]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamSet> {
        let mut p = self.trunk.init(rng, 1.0);
        p.extend(self.mean_head.init(rng, 1.0))?;
        p.extend(self.logvar_head.init(rng, 0.1))?;
        p.extend(self.decoder.init(rng, 1.0))?;
        Ok(p)
    }

    /// Posterior mean and log-variance for standardized rows `x`.
    pub fn encode<'t>(&self, params: &ParamVars<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.trunk.forward(params, x)?.tanh();
        Ok((
            self.mean_head.forward(params, h)?,
            self.logvar_head.forward(params, h)?,
        ))
    }

    pub fn decode<'t>(&self, params: &ParamVars<'t>, z: Var<'t>) -> Result<Var<'t>> {
        Ok(self.decoder.forward(params, z)?)
    }
}

/// Mean over rows of `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence<'t>(mu: Var<'t>, logvar: Var<'t>) -> Var<'t> {
    let rows = mu.shape()[0] as f64;
    (mu.square() + logvar.exp() - logvar)
        .offset(-1.0)
        .sum()
        .scale(0.5 / rows)
}

/// Terms of the negative ELBO for one batch.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms<'t> {
    pub reconstruction: Var<'t>,
    pub kl: Var<'t>,
    /// `reconstruction + beta * kl`
    pub loss: Var<'t>,
}

/// Negative ELBO of standardized rows `x` with reparameterization noise
/// `eps` (same shape as the latent batch).
pub fn elbo_terms<'t>(
    arch: &VaeArchitecture,
    params: &ParamVars<'t>,
    x: Var<'t>,
    eps: Var<'t>,
    beta: f64,
) -> Result<ElboTerms<'t>> {
    let (mu, logvar) = arch.encode(params, x)?;
    if eps.shape() != mu.shape() {
        return Err(Error::Input(format!(
            "noise shape {:?} does not match latent batch {:?}",
            eps.shape(),
            mu.shape()
        )));
    }
    let z = mu + eps * logvar.scale(0.5).exp();
    let recon = arch.decode(params, z)?;
    let reconstruction = (recon - x).square().mean();
    let kl = kl_divergence(mu, logvar);
    Ok(ElboTerms {
        reconstruction,
        kl,
        loss: reconstruction + kl.scale(beta),
    })
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub beta: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

/// Rows `epoch,beta,reconstruction,kl`.
pub fn write_epochs_csv<W: std::io::Write>(stats: &[EpochStats], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "beta", "reconstruction", "kl"])?;
    for s in stats {
        w.write_record(&[
            s.epoch.to_string(),
            s.beta.to_string(),
            s.reconstruction.to_string(),
            s.kl.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trained encoder/decoder with the dataset standardization.
#[derive(Debug)]
pub struct VaeModel {
    arch: VaeArchitecture,
    params: ParamSet,
    standardizer: Standardizer,
    config: VaeConfig,
    clamp_events: AtomicU64,
}

impl Clone for VaeModel {
    fn clone(&self) -> Self {
        VaeModel {
            arch: self.arch.clone(),
            params: self.params.clone(),
            standardizer: self.standardizer.clone(),
            config: self.config.clone(),
            clamp_events: AtomicU64::new(self.clamp_events()),
        }
    }
}

fn batch_tensor(rows: &[&[f64]]) -> Tensor {
    let cols = rows.first().map_or(0, |r| r.len());
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::matrix(rows.len(), cols, data).expect("rows of equal width")
}

fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// Fits the VAE with Adam on shuffled minibatches.
pub fn train_vae<R: Rng + ?Sized>(
    dataset: &[Trajectory],
    config: &VaeConfig,
    rng: &mut R,
) -> Result<(VaeModel, Vec<EpochStats>)> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    let raw: Vec<Vec<f64>> = dataset.iter().map(Trajectory::to_flat).collect();
    let standardizer = Standardizer::fit(&raw)?;
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| standardizer.standardize(r)).collect();

    let arch = VaeArchitecture::new(config.hidden);
    let mut params = arch.init(rng)?;
    let mut adam = Adam::new(&params, config.learning_rate);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let beta = config.beta(epoch);
        order.shuffle(rng);
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f64]> = chunk.iter().map(|&i| rows[i].as_slice()).collect();
            let eps = normal_tensor(rng, batch.len(), LATENT_DIM);
            let tape = Tape::new();
            let vars = ParamVars::track(&tape, &params);
            let x = tape.constant(batch_tensor(&batch));
            let terms = elbo_terms(&arch, &vars, x, tape.constant(eps), beta)?;
            let grads = tape.gradients(terms.loss, &vars)?;
            adam.step(&mut params, &grads)?;
            recon_sum += terms.reconstruction.item() * batch.len() as f64;
            kl_sum += terms.kl.item() * batch.len() as f64;
        }
        let n = rows.len() as f64;
        history.push(EpochStats {
            epoch,
            beta,
            reconstruction: recon_sum / n,
            kl: kl_sum / n,
        });
    }

    Ok((
        VaeModel {
            arch,
            params,
            standardizer,
            config: config.clone(),
            clamp_events: AtomicU64::new(0),
        },
        history,
    ))
}

impl VaeModel {
    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn architecture(&self) -> &VaeArchitecture {
        &self.arch
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    /// Number of decoded trajectories that needed clamping so far.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events.load(Ordering::Relaxed)
    }

    pub fn reset_clamp_events(&self) {
        self.clamp_events.store(0, Ordering::Relaxed);
    }

    /// Decoder mean in physical units, before workspace clamping.
    pub fn decode_raw(&self, z: LatentAction) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = ParamVars::constant(&tape, &self.params);
        let z = tape.constant(Tensor::matrix(1, LATENT_DIM, z.0.to_vec())?);
        let out = self.arch.decode(&vars, z)?;
        Ok(self.standardizer.destandardize(out.value().data()))
    }

    /// Decoded trajectory, clamped into the workspace. Clamping increments
    /// the diagnostic counter.
    pub fn decode(&self, z: LatentAction) -> Result<Trajectory> {
        if !z.is_finite() {
            return Err(Error::Input(format!("non-finite latent action {:?}", z.0)));
        }
        let mut flat = self.decode_raw(z)?;
        let mut clamped = false;
        for (i, v) in flat.iter_mut().enumerate() {
            // yaw is unbounded; x and y live in the workspace
            if i % 3 == 2 {
                continue;
            }
            if v.abs() > WORKSPACE_BOUND {
                *v = v.clamp(-WORKSPACE_BOUND, WORKSPACE_BOUND);
                clamped = true;
            }
        }
        if clamped {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        Trajectory::from_flat(&flat)
    }

    /// Posterior means of `trajectories`.
    pub fn encode_mean(&self, trajectories: &[Trajectory]) -> Result<Vec<LatentAction>> {
        let rows: Vec<Vec<f64>> = trajectories
            .iter()
            .map(|t| self.standardizer.standardize(&t.to_flat()))
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let tape = Tape::new();
        let vars = ParamVars::constant(&tape, &self.params);
        let (mu, _) = self.arch.encode(&vars, tape.constant(batch_tensor(&refs)))?;
        let mu = mu.value();
        Ok((0..rows.len())
            .map(|i| LatentAction([mu.row(i)[0], mu.row(i)[1]]))
            .collect())
    }

    /// RMS error, in units of each coordinate's dataset std, of
    /// reconstructing `trajectories` through the posterior means.
    pub fn reconstruction_rms(&self, trajectories: &[Trajectory]) -> Result<f64> {
        let latents = self.encode_mean(trajectories)?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, z) in trajectories.iter().zip(latents) {
            let recon = self.standardizer.standardize(&self.decode_raw(z)?);
            let orig = self.standardizer.standardize(&t.to_flat());
            for (a, b) in recon.iter().zip(&orig) {
                sum += (a - b).powi(2);
                count += 1;
            }
        }
        Ok((sum / count as f64).sqrt())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut params = self.params.clone();
        params.insert("standardizer.mean", Tensor::vector(self.standardizer.mean.clone()))?;
        params.insert("standardizer.std", Tensor::vector(self.standardizer.std.clone()))?;
        let c = &self.config;
        Ok(Checkpoint::new(CHECKPOINT_KIND, params)
            .with("hidden", c.hidden)
            .with("epochs", c.epochs)
            .with("batch_size", c.batch_size)
            .with("learning_rate", c.learning_rate)
            .with("beta_start", c.beta_start)
            .with("beta_end", c.beta_end)
            .with("beta_final", c.beta(c.epochs.saturating_sub(1))))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = VaeConfig {
            epochs: ck.get_parsed("epochs")?,
            batch_size: ck.get_parsed("batch_size")?,
            learning_rate: ck.get_parsed("learning_rate")?,
            hidden: ck.get_parsed("hidden")?,
            beta_start: ck.get_parsed("beta_start")?,
            beta_end: ck.get_parsed("beta_end")?,
        };
        let arch = VaeArchitecture::new(config.hidden);
        let mut params = ParamSet::new();
        let mut standardizer = Standardizer {
            mean: vec![],
            std: vec![],
        };
        for (name, t) in ck.params.iter() {
            match name {
                "standardizer.mean" => standardizer.mean = t.data().to_vec(),
                "standardizer.std" => standardizer.std = t.data().to_vec(),
                _ => params.insert(name, t.clone())?,
            }
        }
        if standardizer.mean.len() != TRAJECTORY_DIM || standardizer.std.len() != TRAJECTORY_DIM {
            return Err(Error::Input("vae checkpoint lacks standardization constants".into()));
        }
        for spec in [&arch.trunk, &arch.mean_head, &arch.logvar_head, &arch.decoder] {
            spec.check_params(&params)?;
        }
        Ok(VaeModel {
            arch,
            params,
            standardizer,
            config,
            clamp_events: AtomicU64::new(0),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        VaeModel::from_checkpoint(&Checkpoint::load(path, CHECKPOINT_KIND)?)
    }
}
