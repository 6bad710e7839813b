//! Goal-conditioned Gaussian policy over latent actions.

use std::path::Path;

use puckmeta_autodiff::{
    DiagonalGaussian, MlpSpec, ParamSet, ParamVars, Tape, Tensor, Var, LN_2PI,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::physics::Goal;
use crate::trajectory::LatentAction;
use crate::vae::LATENT_DIM;

pub const DEFAULT_HIDDEN: usize = 128;
pub const MEAN_PREFIX: &str = "policy.mean";
pub const LOG_STD_NAME: &str = "policy.log_std";
/// Initial exploration std per latent axis.
pub const INITIAL_STD: f64 = 0.5;
/// Gain on the output layer at initialization, so initial means sit near
/// the latent origin.
const OUTPUT_GAIN: f64 = 0.1;
const CHECKPOINT_KIND: &str = "policy";

/// MLP `2 → hidden → 2` for the mean plus a state-independent log-std.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    spec: MlpSpec,
    params: ParamSet,
}

fn mean_spec(hidden: usize) -> MlpSpec {
    MlpSpec::new(MEAN_PREFIX, &[2, hidden, LATENT_DIM])
}

impl PolicyModel {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, hidden: usize) -> Self {
        let spec = mean_spec(hidden);
        let mut params = spec.init(rng, OUTPUT_GAIN);
        params
            .insert(LOG_STD_NAME, Tensor::full(&[LATENT_DIM], INITIAL_STD.ln()))
            .expect("fresh name");
        PolicyModel { spec, params }
    }

    /// All-zero mean network with the initial log-std.
    pub fn zeros(hidden: usize) -> Self {
        let spec = mean_spec(hidden);
        let mut params = spec.zeros();
        params
            .insert(LOG_STD_NAME, Tensor::full(&[LATENT_DIM], INITIAL_STD.ln()))
            .expect("fresh name");
        PolicyModel { spec, params }
    }

    /// Wraps an existing parameter set, inferring the hidden width.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        let w0 = params.require(&format!("{MEAN_PREFIX}.l0.weight"))?;
        let hidden = *w0.shape().get(1).ok_or_else(|| {
            Error::Input(format!("policy weight has shape {:?}", w0.shape()))
        })?;
        let spec = mean_spec(hidden);
        spec.check_params(&params)?;
        let log_std = params.require(LOG_STD_NAME)?;
        if log_std.shape() != [LATENT_DIM] {
            return Err(Error::Input(format!(
                "policy log-std has shape {:?}",
                log_std.shape()
            )));
        }
        if params.len() != 2 * spec.num_layers() + 1 {
            return Err(Error::Input("policy parameter set has extra entries".into()));
        }
        Ok(PolicyModel { spec, params })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn hidden(&self) -> usize {
        self.spec.sizes[1]
    }

    pub fn log_std(&self) -> [f64; 2] {
        let t = self.params.get(LOG_STD_NAME).expect("validated");
        [t.data()[0], t.data()[1]]
    }

    pub fn std(&self) -> [f64; 2] {
        self.log_std().map(f64::exp)
    }

    /// Policy means for a batch of goals.
    pub fn mean_actions(&self, goals: &[Goal]) -> Result<Vec<LatentAction>> {
        if goals.is_empty() {
            return Ok(vec![]);
        }
        let tape = Tape::new();
        let vars = ParamVars::constant(&tape, &self.params);
        let dist = act_distribution(&self.spec, &vars, goals)?;
        let mean = dist.mean.value();
        Ok((0..goals.len())
            .map(|i| LatentAction([mean.row(i)[0], mean.row(i)[1]]))
            .collect())
    }

    pub fn mean_action(&self, goal: &Goal) -> Result<LatentAction> {
        Ok(self.mean_actions(std::slice::from_ref(goal))?[0])
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(CHECKPOINT_KIND, self.params.clone())
            .with("architecture", format!("mlp 2-{}-2 tanh", self.hidden()))
            .with("hidden", self.hidden())
            .with("initial_std", INITIAL_STD)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(Error::Input(format!("expected a policy checkpoint, got {}", ck.kind)));
        }
        let policy = PolicyModel::from_params(ck.params.clone())?;
        let hidden: usize = ck.get_parsed("hidden")?;
        if hidden != policy.hidden() {
            return Err(Error::Input(format!(
                "checkpoint says hidden {hidden}, weights say {}",
                policy.hidden()
            )));
        }
        Ok(policy)
    }

    pub fn save(&self, path: &Path, extra: &[(&str, String)]) -> Result<()> {
        let mut ck = self.to_checkpoint();
        for (k, v) in extra {
            ck = ck.with(k, v);
        }
        ck.save(path)
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint)> {
        let ck = Checkpoint::load(path, CHECKPOINT_KIND)?;
        Ok((PolicyModel::from_checkpoint(&ck)?, ck))
    }
}

/// `[n, 2]` tensor of normalized goals.
pub fn goal_tensor(goals: &[Goal]) -> Tensor {
    let data = goals
        .iter()
        .flat_map(|g| {
            let n = g.normalized();
            [n.x, n.y]
        })
        .collect();
    Tensor::matrix(goals.len(), 2, data).expect("two columns")
}

/// `[n, 2]` tensor of latent actions.
pub fn action_tensor(actions: &[LatentAction]) -> Tensor {
    let data = actions.iter().flat_map(|a| a.0).collect();
    Tensor::matrix(actions.len(), LATENT_DIM, data).expect("two columns")
}

/// Action distribution for each goal under `params` (which may be tracked
/// or the result of functional updates).
pub fn act_distribution<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    goals: &[Goal],
) -> Result<DiagonalGaussian<'t>> {
    let tape = params
        .vars()
        .first()
        .ok_or_else(|| Error::Input("empty policy parameters".into()))?
        .tape();
    let input = tape.constant(goal_tensor(goals));
    let mean = spec.forward(params, input)?;
    let log_std = params.require(LOG_STD_NAME)?;
    Ok(DiagonalGaussian::new(mean, log_std)?)
}

/// Log-density of `actions` given `goals`, one entry per pair.
pub fn log_densities<'t>(
    spec: &MlpSpec,
    params: &ParamVars<'t>,
    goals: &[Goal],
    actions: &[LatentAction],
) -> Result<Var<'t>> {
    if goals.len() != actions.len() {
        return Err(Error::Input(format!(
            "{} goals but {} actions",
            goals.len(),
            actions.len()
        )));
    }
    let dist = act_distribution(spec, params, goals)?;
    let x = dist.mean.tape().constant(action_tensor(actions));
    Ok(dist.log_density(x)?)
}

/// Diagonal Gaussian log-density in plain arithmetic, matching
/// [`puckmeta_autodiff::gaussian_log_density`].
pub fn log_density_value(mean: [f64; 2], log_std: [f64; 2], x: [f64; 2]) -> f64 {
    let mut quad = 0.0;
    for i in 0..2 {
        let z = (x[i] - mean[i]) * (-log_std[i]).exp();
        quad += z * z;
    }
    -0.5 * quad - (log_std[0] + log_std[1] + 0.5 * 2.0 * LN_2PI)
}

/// Reparameterized draw `mean + std * eps` and its log-density.
pub fn sample_action<R: Rng + ?Sized>(
    mean: [f64; 2],
    log_std: [f64; 2],
    rng: &mut R,
) -> (LatentAction, f64) {
    let eps: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    action_from_noise(mean, log_std, eps)
}

pub fn action_from_noise(mean: [f64; 2], log_std: [f64; 2], eps: [f64; 2]) -> (LatentAction, f64) {
    let z = [
        mean[0] + log_std[0].exp() * eps[0],
        mean[1] + log_std[1].exp() * eps[1],
    ];
    (LatentAction(z), log_density_value(mean, log_std, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_mean_head_gives_zero_mean() {
        let p = PolicyModel::zeros(8);
        for g in [Goal::new(0.8, 0.1), Goal::new(1.2, -0.15)] {
            assert_eq!(p.mean_action(&g).unwrap().0, [0.0, 0.0]);
        }
        assert!((p.std()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn plain_density_matches_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = PolicyModel::init(&mut rng, 16);
        let goals = [Goal::new(0.9, 0.05), Goal::new(1.1, -0.1)];
        let means = p.mean_actions(&goals).unwrap();
        let mut actions = vec![];
        let mut plain = vec![];
        for m in &means {
            let (a, lp) = sample_action(m.0, p.log_std(), &mut rng);
            actions.push(a);
            plain.push(lp);
        }
        let tape = Tape::new();
        let vars = ParamVars::constant(&tape, p.params());
        let lp = log_densities(p.spec(), &vars, &goals, &actions).unwrap();
        for (a, b) in lp.value().data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_params_rejects_foreign_sets() {
        let mut p = PolicyModel::zeros(4).into_params();
        p.insert("extra", Tensor::scalar(1.0)).unwrap();
        assert!(PolicyModel::from_params(p).is_err());
        assert!(PolicyModel::from_params(ParamSet::new()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyModel::init(&mut rng, 6);
        let back = PolicyModel::from_checkpoint(
            &Checkpoint::from_text(&p.to_checkpoint().to_text()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, p);
    }
}
