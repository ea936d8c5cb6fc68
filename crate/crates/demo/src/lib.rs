//! WebAssembly bindings for the static demo page in `www/`.

use idad_core::models::{exact_eig_linear_gaussian, LinearGaussianModel, PathBank, PkModel, SirParams};
use wasm_bindgen::prelude::*;

/// Infected count on a grid of `points` times over [0, 100] days.
pub fn sir_infected(beta: f64, gamma: f64, seed: u64, points: usize) -> idad_core::Result<Vec<f64>> {
    if !(beta > 0.0 && gamma > 0.0) {
        return Err(idad_core::Error::Config("beta and gamma must be positive".into()));
    }
    let bank = PathBank::simulate_with(vec![SirParams { beta, gamma }], seed, 10)?;
    let horizon = bank.meta().horizon;
    let n = points.max(2);
    (0..n).map(|j| Ok(bank.observe(0, horizon * j as f64 / (n - 1) as f64)?.0)).collect()
}

/// Noise-free concentration at `points` times over [0, 24] hours.
pub fn pk_concentration(ka: f64, ke: f64, v: f64, points: usize) -> idad_core::Result<Vec<f64>> {
    if !(ka > 0.0 && ke > 0.0 && v > 0.0) || ka == ke {
        return Err(idad_core::Error::Config("need positive k_a != k_e and V".into()));
    }
    let m = PkModel::new();
    let n = points.max(2);
    Ok((0..n).map(|j| m.concentration(&[ka, ke, v], 24.0 * j as f64 / (n - 1) as f64)).collect())
}

/// Exact information gain of linear-Gaussian designs, then the posterior
/// mean and standard deviation after the given outcomes.
pub fn linear_gaussian(designs: &[f64], outcomes: &[f64], prior_std: f64, noise_std: f64) -> idad_core::Result<Vec<f64>> {
    if designs.len() != outcomes.len() {
        return Err(idad_core::Error::Config("one outcome per design".into()));
    }
    let bound = designs.iter().fold(1.0f64, |a, d| a.max(d.abs()));
    let m = LinearGaussianModel::new(prior_std, noise_std, bound)?;
    let pairs: Vec<(f64, f64)> = designs.iter().copied().zip(outcomes.iter().copied()).collect();
    let (mean, sd) = m.posterior(&pairs);
    Ok(vec![exact_eig_linear_gaussian(designs, prior_std, noise_std), mean, sd])
}

fn js(e: idad_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = sirPath)]
pub fn sir_path(beta: f64, gamma: f64, seed: u32, points: usize) -> Result<Vec<f64>, JsError> {
    sir_infected(beta, gamma, seed as u64, points).map_err(js)
}

#[wasm_bindgen(js_name = pkCurve)]
pub fn pk_curve(ka: f64, ke: f64, v: f64, points: usize) -> Result<Vec<f64>, JsError> {
    pk_concentration(ka, ke, v, points).map_err(js)
}

/// Returns `[eig, posterior mean, posterior sd]`.
#[wasm_bindgen(js_name = linearGaussian)]
pub fn linear_gaussian_js(designs: Vec<f64>, outcomes: Vec<f64>, prior_std: f64, noise_std: f64) -> Result<Vec<f64>, JsError> {
    linear_gaussian(&designs, &outcomes, prior_std, noise_std).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sir_path_starts_at_two_infected_and_stays_in_range() {
        let p = sir_infected(0.5, 0.1, 3, 101).unwrap();
        assert_eq!(p.len(), 101);
        assert_eq!(p[0], 2.0);
        assert!(p.iter().all(|&i| (0.0..=500.0).contains(&i)));
        assert_eq!(p, sir_infected(0.5, 0.1, 3, 101).unwrap());
        assert!(sir_infected(-1.0, 0.1, 3, 10).is_err());
    }

    #[test]
    fn pk_curve_starts_at_zero_and_peaks_inside() {
        let c = pk_concentration(1.0, 0.1, 20.0, 241).unwrap();
        assert_eq!(c[0], 0.0);
        let peak = c.iter().cloned().fold(0.0, f64::max);
        assert!(peak > c[240]);
        assert!(pk_concentration(1.0, 1.0, 20.0, 5).is_err());
    }

    #[test]
    fn linear_gaussian_matches_closed_form() {
        let r = linear_gaussian(&[1.0], &[0.0], 1.0, 1.0).unwrap();
        assert!((r[0] - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(r[1], 0.0);
        assert!((r[2] - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
