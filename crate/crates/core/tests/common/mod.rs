//! Fixtures shared by the integration and acceptance targets.
#![allow(dead_code)]

use mfdmc::data::{generate_synthetic, InteractionDataset, SyntheticSpec};
use mfdmc::model::{Model, ModelConfig, OptimizerConfig, PsiRule, Side};
use mfdmc::training::{train_epoch, Schedule, TrainState};

pub fn toy() -> InteractionDataset {
    let spec = SyntheticSpec { users: 24, items: 20, density: 0.5, noise_sigma: 0.05, seed: 9, ..Default::default() };
    generate_synthetic(&spec).unwrap().0
}

pub fn toy_config(centers: usize, epochs: usize) -> ModelConfig {
    ModelConfig {
        views: 2,
        centers,
        center_dim: 2,
        latent_dim: 4,
        eta: Schedule::ramp(0.0, 0.1, 40),
        gamma: Schedule::ramp(0.0, 1e-4, 40),
        optimizer: OptimizerConfig { learning_rate: 0.5, center_learning_rate: 0.05, batch_size: 32, epochs, momentum: 0.9 },
        ..ModelConfig::default()
    }
}

/// Ten centers per view with user center 3 of view 0 starved of weight.
/// Logits are frozen, so every other center keeps a mean weight of exactly 1/9.
pub fn dead_center_run(epochs: usize) -> TrainState<f64> {
    let data = toy();
    let mut cfg = toy_config(10, epochs);
    cfg.init_logit_std = 0.0;
    cfg.optimizer.learning_rate = 0.0;
    let mut model = Model::<f64>::init(&cfg, data.n_users, data.n_items).unwrap();
    for u in 0..data.n_users {
        model.user_weights.row_mut(u, 0)[3] = -40.0;
    }
    let mut state = TrainState::new(model);
    for _ in 0..epochs {
        train_epoch(&mut state, &data, None).unwrap();
    }
    state
}

/// Runs 100 epochs with ψ = 0.5 and calls `check` after every epoch.
pub fn adversarial_run(share: bool, mut check: impl FnMut(&TrainState<f64>)) -> TrainState<f64> {
    let data = toy();
    let mut cfg = toy_config(10, 100);
    cfg.psi = PsiRule::Fixed { value: 0.5 };
    cfg.init_logit_std = 1.0;
    cfg.share_centers = share;
    let mut state = TrainState::new(Model::<f64>::init(&cfg, data.n_users, data.n_items).unwrap());
    for _ in 0..100 {
        train_epoch(&mut state, &data, None).unwrap();
        check(&state);
    }
    state
}

pub fn min_live(state: &TrainState<f64>) -> usize {
    Side::BOTH.iter().flat_map(|&s| state.model.live_counts(s)).min().unwrap()
}
