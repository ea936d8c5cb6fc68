use idad_core::models::ImplicitModel;
use idad_core::nets::{History, PoolingKind};
use idad_core::rng::{Rng, SeedStreams};
use idad_core::tensor_ad::Tape;
use idad_core::train::{build_networks, Designer, TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::{Check, Verdict};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rel_change(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

fn random_history(model: &dyn ImplicitModel, len: usize, rng: &mut Rng) -> History {
    let info = model.info();
    let mut h = History::new(info.design_dim, info.outcome_dim);
    for _ in 0..len {
        let design = (0..info.design_dim).map(|_| 2.0 * normal(rng)).collect();
        let outcome = (0..info.outcome_dim).map(|_| normal(rng)).collect();
        h.push(design, outcome).unwrap();
    }
    h
}

/// Largest relative change of policy designs and critic scores over permuted histories.
fn max_permutation_change(config: &TrainConfig, histories: usize, perms: usize) -> Result<f64, Box<dyn std::error::Error>> {
    let streams = SeedStreams::new(config.seed);
    let model = config.model.build(&streams.child("model"))?;
    let (designer, critic) = build_networks(config, model.as_ref())?;
    let Designer::Network(policy) = designer else { return Err("expected a policy network".into()) };
    let critic = critic.ok_or("expected a critic")?;
    let mut rng = SeedStreams::new(21).rng("permutations");
    let mut worst = 0.0_f64;
    for _ in 0..histories {
        let len = rng.random_range(2..=config.horizon);
        let history = random_history(model.as_ref(), len, &mut rng);
        let theta = model.sample_prior(1, &mut rng);
        let design = policy.act(&history)?;
        let score = critic.score_grid(&history, &theta)?[0];
        for _ in 0..perms {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            let permuted = history.permuted(&order);
            worst = worst.max(rel_change(&design, &policy.act(&permuted)?));
            worst = worst.max(rel_change(&[score], &[critic.score_grid(&permuted, &theta)?[0]]));
        }
    }
    Ok(worst)
}

pub fn permutation_invariance() -> Check {
    let attention = TrainConfig::preset("locfin_desk")?;
    let mut recurrent = attention.clone();
    recurrent.policy.encoder.pooling = PoolingKind::Recurrent;
    recurrent.critic.encoder.pooling = PoolingKind::Recurrent;
    let invariant = max_permutation_change(&attention, 100, 10)?;
    let sensitive = max_permutation_change(&recurrent, 100, 10)?;
    Verdict::new(
        invariant < 1e-9 && sensitive > 1e-9,
        format!("100 histories x 10 permutations: attention max change {invariant:.1e} < 1e-9; recurrent max change {sensitive:.1e}"),
    )
}

fn objective_at(trainer: &Trainer) -> Result<f64, Box<dyn std::error::Error>> {
    let tape = Tape::new();
    let (terms, _, _) = trainer.objective(&tape, 0)?;
    Ok(terms.value()?.item()?)
}

/// Relative error between backprop and central differences on one element of every tensor.
fn gradient_error(trainer: &mut Trainer, critic: bool, rng: &mut Rng) -> Result<(f64, usize), Box<dyn std::error::Error>> {
    let h = 1e-6;
    let analytic = {
        let tape = Tape::new();
        let (terms, pp, cp) = trainer.objective(&tape, 0)?;
        let grads = tape.backward(terms.value()?)?;
        if critic { cp.ok_or("no critic")?.grads(&grads) } else { pp.grads(&grads) }
    };
    let mut ad = Vec::new();
    let mut fd = Vec::new();
    for (k, grad) in analytic.iter().enumerate() {
        let j = rng.random_range(0..grad.numel());
        let nudge = |trainer: &mut Trainer, delta: f64| {
            let store = if critic { trainer.critic_mut().unwrap().store_mut() } else { trainer.designer_mut().store_mut() };
            store.tensors_mut()[k].data_mut()[j] += delta;
        };
        nudge(trainer, h);
        let up = objective_at(trainer)?;
        nudge(trainer, -2.0 * h);
        let down = objective_at(trainer)?;
        nudge(trainer, h);
        ad.push(grad.data()[j]);
        fd.push((up - down) / (2.0 * h));
    }
    Ok((rel_change(&fd, &ad), ad.len()))
}

pub fn end_to_end_gradient() -> Check {
    let mut config = TrainConfig::preset("linear_gaussian_desk")?;
    config.batch_size = 16;
    let mut trainer = Trainer::new(config)?;
    // A few steps move the parameters away from their symmetric initialization.
    for _ in 0..5 {
        trainer.step()?;
    }
    let mut rng = SeedStreams::new(5).rng("gradient-check");
    let (policy_err, np) = gradient_error(&mut trainer, false, &mut rng)?;
    let (critic_err, nc) = gradient_error(&mut trainer, true, &mut rng)?;
    Verdict::new(
        policy_err < 1e-4 && critic_err < 1e-4,
        format!("T=2 linear-Gaussian InfoNCE: policy relative error {policy_err:.1e} ({np} tensors), critic {critic_err:.1e} ({nc} tensors) < 1e-4"),
    )
}
