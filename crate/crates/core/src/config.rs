//! Flat `key = value` configuration files with `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::meta::MetaConfig;
use crate::physics::CONDITIONS;
use crate::vae::VaeConfig;

/// Every key the tools understand, with its default.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("artifacts_dir", "artifacts"),
    ("dataset_size", "7371"),
    ("vae_epochs", "200"),
    ("vae_batch_size", "64"),
    ("vae_learning_rate", "0.001"),
    ("vae_hidden", "64"),
    ("beta_start", "1e-7"),
    ("beta_end", "1e-3"),
    ("tasks_per_batch", "10"),
    ("rollouts", "16"),
    ("inner_steps", "3"),
    ("alpha_init", "0.01"),
    ("learn_alpha", "true"),
    ("clip", "0.2"),
    ("ppo_epochs", "4"),
    ("learning_rate", "0.0003"),
    ("alpha_learning_rate", "0.0003"),
    ("iterations", "3000"),
    ("oracle_iterations", "300"),
    ("first_order", "false"),
    ("policy_hidden", "128"),
    ("repetitions", "25"),
    ("eval_steps", "10"),
    ("eval_episodes", "16"),
    ("conditions", "isotropic_low,isotropic_medium,anisotropic_low_x,anisotropic_low_y"),
    ("stability_condition", "isotropic_medium"),
    ("stability_goals", "1000"),
    ("sweep_points", "2000"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: IndexMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl Config {
    /// Defaults overridden by the entries of `text`. Unknown keys and
    /// malformed lines are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Config::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not a configuration key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key);
        raw.parse()
            .map_err(|_| Error::Config(format!("bad value `{raw}` for `{key}`")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        PathBuf::from(self.get("artifacts_dir"))
    }

    pub fn dataset_size(&self) -> Result<usize> {
        let n: usize = self.parsed("dataset_size")?;
        if n == 0 {
            return Err(Error::Config("dataset_size must be at least 1".into()));
        }
        Ok(n)
    }

    pub fn vae(&self) -> Result<VaeConfig> {
        Ok(VaeConfig {
            epochs: self.parsed("vae_epochs")?,
            batch_size: self.parsed("vae_batch_size")?,
            learning_rate: self.parsed("vae_learning_rate")?,
            hidden: self.parsed("vae_hidden")?,
            beta_start: self.parsed("beta_start")?,
            beta_end: self.parsed("beta_end")?,
        })
    }

    pub fn meta(&self) -> Result<MetaConfig> {
        let m = MetaConfig {
            tasks_per_batch: self.parsed("tasks_per_batch")?,
            rollouts: self.parsed("rollouts")?,
            inner_steps: self.parsed("inner_steps")?,
            alpha_init: self.parsed("alpha_init")?,
            learn_alpha: self.parsed("learn_alpha")?,
            clip: self.parsed("clip")?,
            ppo_epochs: self.parsed("ppo_epochs")?,
            learning_rate: self.parsed("learning_rate")?,
            alpha_learning_rate: self.parsed("alpha_learning_rate")?,
            iterations: self.parsed("iterations")?,
            first_order: self.parsed("first_order")?,
            hidden: self.parsed("policy_hidden")?,
            seed: self.seed()?,
        };
        m.validate()?;
        Ok(m)
    }

    /// The meta configuration with the oracle's iteration budget.
    pub fn oracle(&self) -> Result<MetaConfig> {
        Ok(MetaConfig {
            iterations: self.parsed("oracle_iterations")?,
            ..self.meta()?
        })
    }

    pub fn conditions(&self) -> Result<Vec<String>> {
        let list: Vec<String> = self
            .get("conditions")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        for c in &list {
            if !CONDITIONS.contains(&c.as_str()) {
                return Err(Error::UnknownCondition {
                    name: c.clone(),
                    valid: CONDITIONS.join(", "),
                });
            }
        }
        if list.is_empty() {
            return Err(Error::Config("no conditions given".into()));
        }
        Ok(list)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = ExperimentConfig {
            conditions: self.conditions()?,
            repetitions: self.parsed("repetitions")?,
            eval_steps: self.parsed("eval_steps")?,
            eval_episodes: self.parsed("eval_episodes")?,
            rollouts: self.parsed("rollouts")?,
            stability_goals: self.parsed("stability_goals")?,
            seed: self.seed()?,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn sweep_points(&self) -> Result<usize> {
        self.parsed("sweep_points")
    }

    /// Canonical `key = value` listing, one per line, in key order.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of the canonical listing, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
