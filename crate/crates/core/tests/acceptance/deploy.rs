use std::sync::Arc;

use idad_core::eval::time_deployment;
use idad_core::models::ImplicitModel;
use idad_core::rng::SeedStreams;
use idad_core::store::{Checkpoint, StoreError};
use idad_core::train::{build_networks, TrainConfig, Trainer};
use idad_core::Error;

use crate::{Check, Verdict};

const BUDGET_SECONDS: f64 = 0.05;

fn model_for(config: &TrainConfig) -> idad_core::Result<Arc<dyn ImplicitModel>> {
    if matches!(config.model, idad_core::models::ModelSpec::Sir { .. }) {
        return Ok(crate::sir::models()?.0);
    }
    config.model.build(&SeedStreams::new(config.seed).child("model"))
}

pub fn latency() -> Check {
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for preset in TrainConfig::PRESETS {
        let config = TrainConfig::preset(preset)?;
        let model = model_for(&config)?;
        let (designer, _) = build_networks(&config, model.as_ref())?;
        let stats = time_deployment(&designer, model.as_ref(), config.horizon, 20, 3)?;
        worst = worst.max(stats.max_seconds);
        rows.push(format!("{preset} (T={}) max {:.2} ms", config.horizon, stats.max_seconds * 1e3));
    }
    Verdict::new(worst < BUDGET_SECONDS, format!("slowest call {:.2} ms < 50 ms; {}", worst * 1e3, rows.join(", ")))
}

fn trained_bytes(preset: &str, steps: usize) -> idad_core::Result<Vec<u8>> {
    let mut config = TrainConfig::preset(preset)?;
    config.steps = steps;
    let trainer = Trainer::new(config)?;
    let model = trainer.model().clone();
    let trained = trainer.run()?;
    Checkpoint::from_trained(&trained, model.as_ref()).to_bytes()
}

fn rejects(bytes: &[u8], expected: fn(&StoreError) -> bool) -> bool {
    matches!(Checkpoint::from_bytes(bytes), Err(Error::Store(e)) if expected(&e))
}

pub fn determinism_and_persistence() -> Check {
    let mut failures = Vec::new();
    let mut checked = Vec::new();
    let dir = tempfile::tempdir()?;
    for preset in ["linear_gaussian_desk", "pk_desk"] {
        let first = trained_bytes(preset, 30)?;
        if first != trained_bytes(preset, 30)? {
            failures.push(format!("{preset}: retraining changed the checkpoint"));
        }
        let path = dir.path().join(format!("{preset}.idad"));
        Checkpoint::from_bytes(&first)?.save(&path)?;
        let reloaded = Checkpoint::load(&path)?.to_bytes()?;
        if reloaded != first || std::fs::read(&path)? != first {
            failures.push(format!("{preset}: save -> load -> save changed bytes"));
        }

        let mut bad = first.clone();
        bad[0] ^= 0xff;
        if !rejects(&bad, |e| matches!(e, StoreError::BadMagic)) {
            failures.push(format!("{preset}: flipped magic not rejected as bad magic"));
        }
        let mut bad = first.clone();
        bad[8..12].copy_from_slice(&99u32.to_le_bytes());
        if !rejects(&bad, |e| matches!(e, StoreError::UnsupportedVersion { found: 99, .. })) {
            failures.push(format!("{preset}: version 99 not rejected as unsupported"));
        }
        if !rejects(&first[..first.len() - 12], |e| matches!(e, StoreError::Truncated(_))) {
            failures.push(format!("{preset}: cut tensor record not rejected as truncated"));
        }
        let mut bad = first.clone();
        let at = first.len() - 20;
        bad[at] ^= 0x01;
        if !rejects(&bad, |e| matches!(e, StoreError::ChecksumMismatch { .. })) {
            failures.push(format!("{preset}: flipped tensor byte not rejected by the checksum"));
        }
        checked.push(format!("{preset} ({} bytes)", first.len()));
    }
    let detail = if failures.is_empty() {
        format!("bitwise-identical retraining, byte-identical round trip, and bad magic / version / truncation / checksum rejected for {}", checked.join(", "))
    } else {
        failures.join("; ")
    };
    Verdict::new(failures.is_empty(), detail)
}
