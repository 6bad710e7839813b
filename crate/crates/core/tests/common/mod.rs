#![allow(dead_code)]

pub mod checks;

use std::sync::OnceLock;

use puckmeta_core::trajectory::generate_dataset;
use puckmeta_core::vae::{train_vae, VaeConfig, VaeModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A briefly trained small VAE: enough structure for the decoder to hit
/// the puck, cheap enough for contract tests.
pub fn small_vae() -> &'static VaeModel {
    static VAE: OnceLock<VaeModel> = OnceLock::new();
    VAE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data = generate_dataset(&mut rng, 512).unwrap();
        let config = VaeConfig {
            epochs: 30,
            hidden: 32,
            ..VaeConfig::default()
        };
        train_vae(&data, &config, &mut rng).unwrap().0
    })
}
