use std::sync::{Arc, OnceLock};

use idad_core::bounds::BoundEstimate;
use idad_core::eval::{evaluate_policy, in_highest_weight_region, nearest_grid_point, posterior_map, simulate_histories, EvalSetup};
use idad_core::models::ImplicitModel;
use idad_core::rng::SeedStreams;
use idad_core::train::{Trained, TrainConfig, Trainer};

use crate::{Check, Verdict};

const EVAL_SEED: u64 = 1000;

type Shared = Arc<dyn ImplicitModel>;

/// Training and held-out models; the held-out one has its own path bank.
pub fn models() -> idad_core::Result<(Shared, Shared)> {
    static MODELS: OnceLock<(Shared, Shared)> = OnceLock::new();
    if let Some(m) = MODELS.get() {
        return Ok(m.clone());
    }
    let config = TrainConfig::preset("sir_desk")?;
    let train = config.model.build(&SeedStreams::new(config.seed).child("model"))?;
    let eval = config.model.build(&SeedStreams::new(EVAL_SEED).child("eval-model"))?;
    Ok(MODELS.get_or_init(|| (train, eval)).clone())
}

fn train(horizon: usize) -> idad_core::Result<Trained> {
    let mut config = TrainConfig::preset("sir_desk")?;
    config.horizon = horizon;
    Trainer::with_model(config, models()?.0)?.run()
}

fn critic_bound(trained: &Trained, model: &dyn ImplicitModel) -> idad_core::Result<BoundEstimate> {
    let critic = trained.critic.as_ref().map(|c| (c, trained.config.objective));
    let setup = EvalSetup { horizon: trained.config.horizon, contrastives: 10_000, n_histories: 2048, seed: EVAL_SEED, critic };
    Ok(evaluate_policy(&trained.designer, model, &setup)?.lower)
}

pub fn monotone_in_horizon() -> Check {
    let eval = models()?.1;
    let one = critic_bound(&train(1)?, eval.as_ref())?;
    let two = critic_bound(&train(2)?, eval.as_ref())?;
    let pooled = (one.std_error.powi(2) + two.std_error.powi(2)).sqrt();
    Verdict::new(
        two.value - one.value > pooled,
        format!(
            "InfoNCE T=1 {:.3}+-{:.3}, T=2 {:.3}+-{:.3}; difference {:.3} > pooled SE {pooled:.3}",
            one.value,
            one.std_error,
            two.value,
            two.std_error,
            two.value - one.value
        ),
    )
}

pub fn posterior_coverage() -> Check {
    let trials = 50;
    let eval = models()?.1;
    let trained = train(TrainConfig::preset("sir_desk")?.horizon)?;
    let critic = trained.critic.as_ref().ok_or("no critic")?;
    let streams = SeedStreams::new(2024).child("coverage");
    let (draw, histories) = simulate_histories(&trained.designer, eval.as_ref(), trained.config.horizon, trials, &streams)?;
    let grid = eval.posterior_grid();
    let mut covered = 0;
    for (i, history) in histories.iter().enumerate() {
        let weights = posterior_map(critic, history, &grid, trained.config.objective)?;
        let cell = nearest_grid_point(eval.as_ref(), &grid, draw.theta.row(i))?;
        covered += usize::from(in_highest_weight_region(&weights, cell, 0.9));
    }
    let needed = (0.8 * trials as f64).ceil() as usize;
    Verdict::new(
        covered >= needed,
        format!("true (beta, gamma) inside the 90% highest-weight region in {covered}/{trials} trials (need {needed}); grid of {} cells", grid.len()),
    )
}
