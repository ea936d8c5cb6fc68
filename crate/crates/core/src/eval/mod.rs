//! Policy evaluation: paired sPCE/sNMC over fresh histories, heuristic
//! baselines, critic posterior maps and deployment timing.

mod policies;
mod report;

pub use policies::{baseline_policy, BaselineKind, DesignPolicy, EqualIntervalPolicy, RandomPolicy};
pub use report::{EvalReport, LatencyStats, CSV_HEADER};

use crate::bounds::{density_ratio_from_critic, snmc_term, spce_term, BoundEstimate, Objective, NWJ_SCORE_CLAMP};
use crate::error::{Error, Result};
use crate::models::{ImplicitModel, ParameterGrid, PriorDraw};
use crate::nets::{CriticNet, History, HistoryBatch};
use crate::rng::SeedStreams;
use crate::tensor_ad::{logsumexp, Tape, Tensor};

/// Histories are pushed through networks in blocks of this many rows.
const BLOCK: usize = 1024;

/// Worker threads for evaluation: `IDAD_THREADS` if set, otherwise the
/// available parallelism.
pub fn worker_count() -> usize {
    if cfg!(target_arch = "wasm32") {
        return 1;
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("IDAD_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

/// Maps `f` over `0..n` on up to [`worker_count`] threads; results keep index order.
pub fn parallel_map<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = worker_count().min(n).max(1);
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Result<Vec<T>>>())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Runs `policy` against `n` fresh prior draws for `horizon` experiments.
pub fn simulate_histories(
    policy: &dyn DesignPolicy,
    model: &dyn ImplicitModel,
    horizon: usize,
    n: usize,
    streams: &SeedStreams,
) -> Result<(PriorDraw, Vec<History>)> {
    let info = model.info();
    let mut rng = streams.rng("rollout");
    let mut policy_rng = streams.rng("policy");
    let draw = model.draw(n, &mut rng);
    let mut histories = vec![History::new(info.design_dim, info.outcome_dim); n];
    for _ in 0..horizon {
        let mut designs = Vec::with_capacity(n * info.design_dim);
        for start in (0..n).step_by(BLOCK) {
            let end = (start + BLOCK).min(n);
            designs.extend(policy.next_designs(&histories[start..end], &mut policy_rng)?.into_data());
        }
        let designs = Tensor::new(vec![n, info.design_dim], designs)?;
        let noise = model.sample_noise(n, &mut rng);
        let tape = Tape::new();
        let y = model.simulate(&draw.theta, &draw.context, tape.constant(designs.clone()), &noise)?.value();
        for (i, h) in histories.iter_mut().enumerate() {
            h.push(designs.row(i).to_vec(), y.row(i).to_vec())?;
        }
    }
    Ok((draw, histories))
}

/// Evaluation settings shared by every policy in a comparison.
#[derive(Debug, Clone, Copy)]
pub struct EvalSetup<'a> {
    pub horizon: usize,
    /// Contrastive samples `L` per history.
    pub contrastives: usize,
    pub n_histories: usize,
    pub seed: u64,
    /// Trained critic and its objective; the only bound available without a likelihood.
    pub critic: Option<(&'a CriticNet, Objective)>,
}

/// Estimates the total information of `policy` on fresh histories.
///
/// With a likelihood, sPCE and sNMC are computed from the same histories and
/// contrastive sets. Without one the critic's training bound is reported and
/// the report is flagged likelihood-free.
pub fn evaluate_policy(policy: &dyn DesignPolicy, model: &dyn ImplicitModel, setup: &EvalSetup<'_>) -> Result<EvalReport> {
    if setup.contrastives == 0 || setup.n_histories == 0 {
        return Err(Error::Config("evaluation needs L >= 1 and at least one history".into()));
    }
    let streams = SeedStreams::new(setup.seed).child("eval");
    let (draw, histories) = simulate_histories(policy, model, setup.horizon, setup.n_histories, &streams)?;
    let (lower, upper, likelihood_free) = if model.has_likelihood() {
        let (lo, up) = likelihood_bounds(model, &draw, &histories, setup.contrastives, &streams)?;
        (lo, Some(up), false)
    } else {
        let (critic, objective) = setup.critic.ok_or_else(|| {
            Error::Unsupported(format!("{} has no likelihood; evaluation needs the trained critic", model.info().kind.name()))
        })?;
        (critic_bound(critic, objective, model, &draw, &histories, setup.contrastives, &streams)?, None, true)
    };
    Ok(EvalReport {
        model: model.info().kind,
        policy: policy.name(),
        horizon: setup.horizon,
        n_histories: setup.n_histories,
        contrastives: setup.contrastives,
        seed: setup.seed,
        lower,
        upper,
        likelihood_free,
        latency: None,
    })
}

fn history_log_likelihood(model: &dyn ImplicitModel, theta: &[f64], history: &History) -> Result<f64> {
    history
        .pairs()
        .iter()
        .map(|(d, y)| model.log_likelihood_value(theta, d, y))
        .sum()
}

fn likelihood_bounds(
    model: &dyn ImplicitModel,
    draw: &PriorDraw,
    histories: &[History],
    contrastives: usize,
    streams: &SeedStreams,
) -> Result<(BoundEstimate, BoundEstimate)> {
    let terms = parallel_map(histories.len(), |i| {
        let mut rng = streams.indexed("contrastive", i as u64);
        let thetas = model.sample_prior(contrastives, &mut rng);
        let mut ll = Vec::with_capacity(contrastives + 1);
        ll.push(history_log_likelihood(model, draw.theta.row(i), &histories[i])?);
        for theta in thetas.iter_rows() {
            ll.push(history_log_likelihood(model, theta, &histories[i])?);
        }
        Ok((spce_term(&ll)?, snmc_term(&ll)?))
    })?;
    let (lo, up): (Vec<f64>, Vec<f64>) = terms.into_iter().unzip();
    Ok((
        BoundEstimate::from_terms(&lo, contrastives, Objective::Spce),
        BoundEstimate::from_terms(&up, contrastives, Objective::Snmc),
    ))
}

/// The critic's own bound on fresh histories, with `L` prior contrastives
/// shared across histories. sLACE with the prior as proposal is InfoNCE.
fn critic_bound(
    critic: &CriticNet,
    objective: Objective,
    model: &dyn ImplicitModel,
    draw: &PriorDraw,
    histories: &[History],
    contrastives: usize,
    streams: &SeedStreams,
) -> Result<BoundEstimate> {
    if !matches!(objective, Objective::Nwj | Objective::InfoNce | Objective::Slace) {
        return Err(Error::Unsupported(format!("critic bound for {}", objective.name())));
    }
    let thetas = model.sample_prior(contrastives, &mut streams.rng("contrastive"));
    let theta_codes = {
        let tape = Tape::new();
        let p = critic.store().bind(&tape, false);
        critic.encode_theta(&tape, &p, &thetas)?.value()
    };
    let blocks: Vec<usize> = (0..histories.len()).step_by(BLOCK).collect();
    let parts = parallel_map(blocks.len(), |k| {
        let start = blocks[k];
        let end = (start + BLOCK).min(histories.len());
        let tape = Tape::new();
        let p = critic.store().bind(&tape, false);
        let batch = HistoryBatch::from_histories(&tape, &histories[start..end])?;
        let eh = critic.encode_history(&tape, &p, &batch)?;
        let own = Tensor::new(
            vec![end - start, draw.theta.row_width()],
            (start..end).flat_map(|i| draw.theta.row(i).to_vec()).collect(),
        )?;
        let positive = eh.mul(critic.encode_theta(&tape, &p, &own)?)?.sum(1)?.value();
        let scores = eh.matmul(tape.constant(theta_codes.clone()).transpose()?)?.value();
        let l = contrastives as f64;
        Ok(scores
            .iter_rows()
            .zip(positive.data())
            .map(|(row, &u0)| match objective {
                Objective::Nwj => {
                    u0 - row.iter().map(|u| (u.min(NWJ_SCORE_CLAMP) - 1.0).exp()).sum::<f64>() / l
                }
                _ => {
                    let mut all = Vec::with_capacity(row.len() + 1);
                    all.push(u0);
                    all.extend_from_slice(row);
                    u0 - logsumexp(&all) + (l + 1.0).ln()
                }
            })
            .collect::<Vec<f64>>())
    })?;
    let terms: Vec<f64> = parts.into_iter().flatten().collect();
    Ok(BoundEstimate::from_terms(&terms, contrastives, objective))
}

/// Normalized posterior weights over `grid`: prior mass times critic ratio.
pub fn posterior_map(critic: &CriticNet, history: &History, grid: &ParameterGrid, objective: Objective) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Config("posterior map needs a non-empty grid".into()));
    }
    let ratio = density_ratio_from_critic(critic, history, grid, objective)?;
    normalize_weights(grid.prior_mass.iter().zip(&ratio).map(|(m, r)| m * r).collect())
}

fn normalize_weights(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Format(format!("posterior weights sum to {total}")));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Whether cell `index` belongs to the smallest set of heaviest cells holding `level` mass.
pub fn in_highest_weight_region(weights: &[f64], index: usize, level: f64) -> bool {
    let w = weights[index];
    let heavier: f64 = weights.iter().filter(|&&x| x > w).sum();
    heavier < level
}

/// Grid point closest to `theta` in the model's parameter feature space.
pub fn nearest_grid_point(model: &dyn ImplicitModel, grid: &ParameterGrid, theta: &[f64]) -> Result<usize> {
    let features = model.theta_features();
    let points = features.apply(&grid.thetas)?;
    let target = features.apply(&Tensor::new(vec![1, theta.len()], theta.to_vec())?)?;
    let target = target.data();
    points
        .iter_rows()
        .map(|r| r.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Config("empty grid".into()))
}

/// Wall-clock per design proposal over simulated experiments; the first design
/// of each run is excluded because it can be computed ahead of time.
pub fn time_deployment(
    policy: &dyn DesignPolicy,
    model: &dyn ImplicitModel,
    horizon: usize,
    n_trials: usize,
    seed: u64,
) -> Result<LatencyStats> {
    let streams = SeedStreams::new(seed).child("deploy-timing");
    let mut rng = streams.rng("rollout");
    let mut policy_rng = streams.rng("policy");
    let info = model.info();
    let draw = model.draw(n_trials, &mut rng);
    let mut samples = Vec::with_capacity(n_trials * horizon.saturating_sub(1));
    for i in 0..n_trials {
        let context = draw.context.select(&[i]);
        let mut history = History::new(info.design_dim, info.outcome_dim);
        for t in 0..horizon {
            let start = std::time::Instant::now();
            let design = policy.act(&history, &mut policy_rng)?;
            if t > 0 {
                samples.push(start.elapsed().as_secs_f64());
            }
            let y = model.simulate_value(draw.theta.row(i), &context, &design, &mut rng)?;
            history.push(design, y)?;
        }
    }
    Ok(LatencyStats::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{exact_eig_linear_gaussian, LinearGaussianModel, PkModel};
    use crate::nets::{CriticConfig, EncoderConfig, FeatureScaling, PoolingKind, ThetaFeatures};
    use crate::train::{Designer, StaticDesigns};

    fn fixed(model: &dyn ImplicitModel, designs: &[f64]) -> Designer {
        let designs: Vec<Vec<f64>> = designs.iter().map(|&d| vec![d]).collect();
        Designer::Static(StaticDesigns::from_designs(&designs, model.design_transform()).unwrap())
    }

    #[test]
    fn linear_gaussian_bounds_bracket_the_exact_value() {
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let policy = fixed(&m, &[1.0, 1.5]);
        let setup = EvalSetup { horizon: 2, contrastives: 2000, n_histories: 1000, seed: 3, critic: None };
        let r = evaluate_policy(&policy, &m, &setup).unwrap();
        let exact = exact_eig_linear_gaussian(&[1.0, 1.5], 1.0, 1.0);
        let up = r.upper.as_ref().unwrap();
        assert!(r.lower.value - 3.0 * r.lower.std_error < exact);
        assert!(up.value + 3.0 * up.std_error > exact);
        assert!(r.lower.value <= up.value);
        assert!(!r.likelihood_free);
    }

    #[test]
    fn evaluation_is_reproducible_and_thread_independent() {
        let m = PkModel::new();
        let policy = baseline_policy(BaselineKind::Random, &m, 3).unwrap();
        let setup = EvalSetup { horizon: 3, contrastives: 50, n_histories: 40, seed: 11, critic: None };
        let a = evaluate_policy(policy.as_ref(), &m, &setup).unwrap();
        let b = evaluate_policy(policy.as_ref(), &m, &setup).unwrap();
        assert_eq!(a.lower.value.to_bits(), b.lower.value.to_bits());
        assert_eq!(a.upper.unwrap().value.to_bits(), b.upper.unwrap().value.to_bits());
        let serial = (0..10).map(|i| Ok(i * i)).collect::<Result<Vec<_>>>().unwrap();
        assert_eq!(parallel_map(10, |i| Ok(i * i)).unwrap(), serial);
    }

    fn tiny_critic(model: &dyn ImplicitModel, horizon: usize) -> CriticNet {
        let config = CriticConfig {
            encoder: EncoderConfig { pair_hidden: vec![8], encoding_dim: 8, pooling: PoolingKind::AttentionSum, heads: 8 },
            head_hidden: vec![],
            theta_hidden: vec![8],
        };
        let info = model.info();
        CriticNet::new(
            &config,
            FeatureScaling::identity(info.design_dim, info.outcome_dim),
            info.theta_dim,
            ThetaFeatures::Identity,
            horizon,
            &mut SeedStreams::new(2).rng("c"),
        )
        .unwrap()
    }

    #[test]
    fn constant_critic_posterior_is_the_prior() {
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let mut critic = tiny_critic(&m, 1);
        let last = critic.theta_encoder().last_layer().clone();
        critic.store_mut().get_mut(last.weight).data_mut().fill(0.0);
        critic.store_mut().get_mut(last.bias).data_mut().fill(0.0);
        let grid = m.posterior_grid();
        let h = History::from_pairs(1, 1, vec![(vec![1.0], vec![0.4])]).unwrap();
        for objective in [Objective::InfoNce, Objective::Nwj] {
            let w = posterior_map(&critic, &h, &grid, objective).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in w.iter().zip(&grid.prior_mass) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_weights_are_an_error() {
        assert!(normalize_weights(vec![0.0; 4]).is_err());
        assert_eq!(normalize_weights(vec![1.0, 3.0]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn highest_weight_region_membership() {
        let w = [0.5, 0.3, 0.15, 0.05];
        assert!(in_highest_weight_region(&w, 0, 0.9));
        assert!(in_highest_weight_region(&w, 2, 0.9));
        assert!(!in_highest_weight_region(&w, 3, 0.9));
        assert!(!in_highest_weight_region(&w, 2, 0.8));
    }

    #[test]
    fn likelihood_free_models_need_a_critic() {
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let critic = tiny_critic(&m, 2);
        let policy = fixed(&m, &[1.0, -1.0]);
        let setup = EvalSetup { horizon: 2, contrastives: 20, n_histories: 30, seed: 0, critic: Some((&critic, Objective::InfoNce)) };
        let streams = SeedStreams::new(0).child("eval");
        let (draw, hs) = simulate_histories(&policy, &m, 2, 30, &streams).unwrap();
        let b = critic_bound(&critic, Objective::InfoNce, &m, &draw, &hs, 20, &streams).unwrap();
        assert!(b.value <= (21f64).ln() + 1e-12);
        // Likelihood models still report the likelihood bounds.
        assert!(!evaluate_policy(&policy, &m, &setup).unwrap().likelihood_free);
    }

    #[test]
    fn deployment_timing_skips_the_first_design() {
        let m = PkModel::new();
        let policy = baseline_policy(BaselineKind::EqualInterval, &m, 4).unwrap();
        let stats = time_deployment(policy.as_ref(), &m, 4, 5, 0).unwrap();
        assert_eq!(stats.calls, 15);
        assert!(stats.mean_seconds >= 0.0);
    }
}
