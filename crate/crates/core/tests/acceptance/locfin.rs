use std::collections::BTreeMap;
use std::sync::Mutex;

use idad_core::bounds::BoundEstimate;
use idad_core::eval::{baseline_policy, evaluate_policy, BaselineKind, DesignPolicy, EvalSetup};
use idad_core::models::ImplicitModel;
use idad_core::train::{Method, TrainConfig, Trainer};

use crate::{Check, Verdict};

const SEEDS: [u64; 3] = [0, 1, 2];
const CONTRASTIVES: usize = 10_000;
const HISTORIES: usize = 2048;

static RUNS: Mutex<BTreeMap<(u64, &'static str), BoundEstimate>> = Mutex::new(BTreeMap::new());

fn evaluate(policy: &dyn DesignPolicy, model: &dyn ImplicitModel, horizon: usize, seed: u64) -> idad_core::Result<BoundEstimate> {
    let setup = EvalSetup { horizon, contrastives: CONTRASTIVES, n_histories: HISTORIES, seed: 1000 + seed, critic: None };
    Ok(evaluate_policy(policy, model, &setup)?.lower)
}

/// sPCE of the desk preset trained with `method` (or the random baseline), memoized per seed.
fn spce(seed: u64, method: &'static str) -> idad_core::Result<BoundEstimate> {
    if let Some(hit) = RUNS.lock().unwrap().get(&(seed, method)) {
        return Ok(hit.clone());
    }
    let mut config = TrainConfig::preset("locfin_desk")?;
    config.seed = seed;
    let estimate = if method == "random" {
        let model = config.model.build(&idad_core::rng::SeedStreams::new(seed).child("model"))?;
        let policy = baseline_policy(BaselineKind::Random, model.as_ref(), config.horizon)?;
        evaluate(policy.as_ref(), model.as_ref(), config.horizon, seed)?
    } else {
        let config = config.with_method(method.parse::<Method>()?);
        let trainer = Trainer::new(config)?;
        let model = trainer.model().clone();
        let trained = trainer.run()?;
        evaluate(&trained.designer, model.as_ref(), trained.config.horizon, seed)?
    };
    RUNS.lock().unwrap().insert((seed, method), estimate.clone());
    Ok(estimate)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn ordering() -> Check {
    let mut idad = Vec::new();
    let mut fixed = Vec::new();
    let mut random = Vec::new();
    let mut rows = Vec::new();
    for seed in SEEDS {
        let (i, s, r) = (spce(seed, "idad")?, spce(seed, "static")?, spce(seed, "random")?);
        rows.push(format!("seed {seed}: iDAD {:.3}+-{:.3} static {:.3} random {:.3}", i.value, i.std_error, s.value, r.value));
        idad.push(i.value);
        fixed.push(s.value);
        random.push(r.value);
    }
    let (i, s, r) = (mean(&idad), mean(&fixed), mean(&random));
    Verdict::new(
        i >= 1.3 * r && i >= s,
        format!(
            "mean sPCE over seeds {SEEDS:?}: iDAD {i:.3} vs 1.3 x random {:.3} (ratio {:.3}), static {s:.3}; {}",
            1.3 * r,
            i / r,
            rows.join("; ")
        ),
    )
}

pub fn dad_parity() -> Check {
    let dad = spce(0, "dad")?;
    let idad = spce(0, "idad")?;
    let gap = dad.value - idad.value;
    Verdict::new(gap <= 0.5, format!("seed 0: sPCE DAD {:.3} - iDAD {:.3} = {gap:.3} <= 0.5", dad.value, idad.value))
}
