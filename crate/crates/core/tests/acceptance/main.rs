//! One PASS/FAIL line per acceptance criterion.
//!
//! `cargo test -p idad-core --test acceptance -- <substring>` runs only the
//! criteria whose name contains the substring.

mod autodiff;
mod bounds;
mod deploy;
mod locfin;
mod nets;
mod sir;

use std::time::Instant;

pub type Check = Result<Verdict, Box<dyn std::error::Error>>;

pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Check {
        Ok(Verdict { pass, detail: detail.into() })
    }
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Check); 11] = [
        ("autodiff_matches_finite_differences", autodiff::matches_finite_differences),
        ("bound_identities", bounds::identities),
        ("optimal_critic_tightness", bounds::optimal_critic_tightness),
        ("permutation_invariance", nets::permutation_invariance),
        ("end_to_end_gradient", nets::end_to_end_gradient),
        ("locfin_desk_ordering", locfin::ordering),
        ("locfin_dad_parity", locfin::dad_parity),
        ("sir_monotone_in_horizon", sir::monotone_in_horizon),
        ("sir_posterior_coverage", sir::posterior_coverage),
        ("deployment_latency", deploy::latency),
        ("determinism_and_persistence", deploy::determinism_and_persistence),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
