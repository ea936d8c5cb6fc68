use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundEstimate;
use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Per-proposal wall-clock statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub calls: usize,
    pub mean_seconds: f64,
    /// Standard error of the mean relative to the mean.
    pub rel_error: f64,
    pub max_seconds: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return LatencyStats { calls: 0, mean_seconds: 0.0, rel_error: 0.0, max_seconds: 0.0 };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let se = (var / n as f64).sqrt();
        LatencyStats {
            calls: n,
            mean_seconds: mean,
            rel_error: if mean > 0.0 { se / mean } else { 0.0 },
            max_seconds: samples.iter().cloned().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: ModelKind,
    pub policy: String,
    pub horizon: usize,
    pub n_histories: usize,
    pub contrastives: usize,
    pub seed: u64,
    pub lower: BoundEstimate,
    pub upper: Option<BoundEstimate>,
    /// The lower bound comes from the trained critic, not from a likelihood.
    pub likelihood_free: bool,
    pub latency: Option<LatencyStats>,
}

pub const CSV_HEADER: &str = "model,policy,horizon,n_histories,contrastives,seed,lower_kind,lower,lower_se,upper_kind,upper,upper_se,likelihood_free,latency_mean_s,latency_rel_error";

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model.name());
        let _ = writeln!(s, "policy = {}", self.policy);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "n_histories = {}", self.n_histories);
        let _ = writeln!(s, "contrastives = {}", self.contrastives);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "lower.{} = {:.6} +- {:.6}", self.lower.objective.name(), self.lower.value, self.lower.std_error);
        if let Some(u) = &self.upper {
            let _ = writeln!(s, "upper.{} = {:.6} +- {:.6}", u.objective.name(), u.value, u.std_error);
        }
        let _ = writeln!(s, "likelihood_free = {}", self.likelihood_free);
        if self.likelihood_free {
            let _ = writeln!(s, "note = lower bound is the trained critic's objective and carries critic bias");
        }
        if let Some(l) = &self.latency {
            let _ = writeln!(s, "latency_mean_s = {:.6e}", l.mean_seconds);
            let _ = writeln!(s, "latency_rel_error = {:.4}", l.rel_error);
            let _ = writeln!(s, "latency_max_s = {:.6e}", l.max_seconds);
        }
        s
    }

    pub fn csv_row(&self) -> String {
        let (uk, uv, ue) = match &self.upper {
            Some(u) => (u.objective.name().to_string(), u.value.to_string(), u.std_error.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let (lm, lr) = match &self.latency {
            Some(l) => (l.mean_seconds.to_string(), l.rel_error.to_string()),
            None => (String::new(), String::new()),
        };
        [
            self.model.name().to_string(),
            self.policy.clone(),
            self.horizon.to_string(),
            self.n_histories.to_string(),
            self.contrastives.to_string(),
            self.seed.to_string(),
            self.lower.objective.name().to_string(),
            self.lower.value.to_string(),
            self.lower.std_error.to_string(),
            uk,
            uv,
            ue,
            self.likelihood_free.to_string(),
            lm,
            lr,
        ]
        .join(",")
    }

    /// Appends a row to a results table, writing the header for a new file.
    pub fn append_csv(&self, path: &Path) -> Result<()> {
        let mut text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e.into()),
        };
        if text.is_empty() {
            text = format!("{CSV_HEADER}\n");
        } else if text.lines().next() != Some(CSV_HEADER) {
            return Err(Error::Format(format!("{} has a different results header", path.display())));
        }
        if !text.ends_with('\n') {
            text.push('\n');
        }
        text.push_str(&self.csv_row());
        text.push('\n');
        crate::store::atomic_write(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::Objective;

    fn report() -> EvalReport {
        EvalReport {
            model: ModelKind::Pk,
            policy: "random".into(),
            horizon: 5,
            n_histories: 4,
            contrastives: 10,
            seed: 1,
            lower: BoundEstimate::from_terms(&[1.0, 2.0, 3.0, 4.0], 10, Objective::Spce),
            upper: Some(BoundEstimate::from_terms(&[1.5, 2.5, 3.5, 4.5], 10, Objective::Snmc)),
            likelihood_free: false,
            latency: None,
        }
    }

    #[test]
    fn standard_error_is_sample_std_over_root_n() {
        let r = report();
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((r.lower.std_error - sd / 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_rows_match_the_header() {
        let r = report();
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        r.append_csv(&path).unwrap();
        r.append_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        std::fs::write(&path, "other,header\n").unwrap();
        assert!(r.append_csv(&path).is_err());
    }

    #[test]
    fn text_record_lists_both_bounds() {
        let t = report().to_text();
        assert!(t.contains("lower.spce = 2.500000"));
        assert!(t.contains("upper.snmc = 3.000000"));
    }

    #[test]
    fn latency_stats() {
        let s = LatencyStats::from_samples(&[1.0, 3.0]);
        assert_eq!(s.calls, 2);
        assert_eq!(s.mean_seconds, 2.0);
        assert_eq!(s.max_seconds, 3.0);
        assert!((s.rel_error - 0.5).abs() < 1e-12);
    }
}
