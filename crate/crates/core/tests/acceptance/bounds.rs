use idad_core::bounds::{infonce, infonce_in_batch, nwj, slace, spce, spce_term};
use idad_core::eval::{evaluate_policy, EvalSetup};
use idad_core::models::{ImplicitModel, LinearGaussianModel};
use idad_core::rng::{Rng, SeedStreams};
use idad_core::tensor_ad::{Tape, Tensor};
use idad_core::train::{Designer, StaticDesigns};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::{Check, Verdict};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_scores(rows: usize, cols: usize, spread: f64, rng: &mut Rng) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| normal(rng) * spread).collect()).unwrap()
}

pub fn identities() -> Check {
    let streams = SeedStreams::new(3).child("bound-identities");
    let mut rng = streams.rng("scores");
    let mut worst_constant = 0.0_f64;
    let mut worst_slace = 0.0_f64;
    let mut worst_nwj = 0.0_f64;
    let mut ceiling_violations = 0;
    let batches = 200;
    for _ in 0..batches {
        let b = rng.random_range(2..=32);
        let tape = Tape::new();
        let c = normal(&mut rng) * 10.0;
        let constant = tape.constant(Tensor::full(&[b, b], c));
        worst_constant = worst_constant.max(infonce_in_batch(constant)?.value()?.item()?.abs());

        let l = rng.random_range(1..=64);
        let scores = tape.constant(random_scores(b, l + 1, 5.0, &mut rng));
        let positive = scores.slice(1, 0, 1)?.reshape(&[b])?;
        let nce = infonce(positive, scores)?.value()?.item()?;
        let lace = slace(scores, &Tensor::zeros(&[b, l + 1]))?.value()?.item()?;
        worst_slace = worst_slace.max((nce - lace).abs());
        let ceiling = ((l + 1) as f64).ln();
        if nce > ceiling {
            ceiling_violations += 1;
        }

        let log_lik = random_scores(b, l + 1, 20.0, &mut rng);
        if spce(&log_lik)?.value > ceiling || log_lik.iter_rows().any(|r| spce_term(r).unwrap() > ceiling) {
            ceiling_violations += 1;
        }

        let ones = tape.constant(Tensor::full(&[b], 1.0));
        worst_nwj = worst_nwj.max(nwj(ones, ones)?.value()?.item()?.abs());
    }
    let pass = worst_constant <= 1e-10 && worst_slace <= 1e-10 && worst_nwj <= 1e-12 && ceiling_violations == 0;
    Verdict::new(
        pass,
        format!(
            "{batches} batches: |InfoNCE(const)| {worst_constant:.1e} <= 1e-10, |sLACE(prior) - InfoNCE| {worst_slace:.1e} <= 1e-10, \
             |NWJ(U=1)| {worst_nwj:.1e} <= 1e-12, batches above ln(L+1): {ceiling_violations}"
        ),
    )
}

fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub fn optimal_critic_tightness() -> Check {
    let eig = 0.5 * 2f64.ln();
    let tol = 0.02;
    let model = LinearGaussianModel::new(1.0, 1.0, 2.0)?;
    let designer = Designer::Static(StaticDesigns::from_designs(&[vec![1.0]], model.design_transform())?);
    let setup = EvalSetup { horizon: 1, contrastives: 10_000, n_histories: 4096, seed: 11, critic: None };
    let report = evaluate_policy(&designer, &model, &setup)?;
    let lower = report.lower.value;
    let upper = report.upper.as_ref().map(|u| u.value).ok_or("no upper bound reported")?;

    // The log-likelihood is an optimal critic: InfoNCE with it is sPCE.
    let streams = SeedStreams::new(12).child("optimal-critic");
    let mut rng = streams.rng("histories");
    let (n, l) = (256, 10_000);
    let mut rows = Vec::with_capacity(n * (l + 1));
    for _ in 0..n {
        let theta0 = normal(&mut rng);
        let y = theta0 + normal(&mut rng);
        rows.push(model.log_likelihood_value(&[theta0], &[1.0], &[y])?);
        for _ in 0..l {
            rows.push(model.log_likelihood_value(&[normal(&mut rng)], &[1.0], &[y])?);
        }
    }
    let log_lik = Tensor::new(vec![n, l + 1], rows)?;
    let tape = Tape::new();
    let scores = tape.constant(log_lik.clone());
    let nce = infonce(scores.slice(1, 0, 1)?.reshape(&[n])?, scores)?.value()?.item()?;
    let nce_gap = (nce - spce(&log_lik)?.value).abs();

    // sLACE at L = 1 with the exact posterior as proposal.
    let n = 4096;
    let mut scores = Vec::with_capacity(2 * n);
    let mut weights = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let theta0 = normal(&mut rng);
        let y = theta0 + normal(&mut rng);
        let (mean, sd) = model.posterior(&[(1.0, y)]);
        let theta1 = mean + sd * normal(&mut rng);
        for theta in [theta0, theta1] {
            scores.push(model.log_likelihood_value(&[theta], &[1.0], &[y])?);
            weights.push(model.log_prior(&[theta]) - normal_log_pdf(theta, mean, sd));
        }
    }
    let tape = Tape::new();
    let scores = tape.constant(Tensor::new(vec![n, 2], scores)?);
    let lace = slace(scores, &Tensor::new(vec![n, 2], weights)?)?.value()?.item()?;

    let pass = (lower - eig).abs() <= tol && (upper - eig).abs() <= tol && nce_gap <= 1e-10 && (lace - eig).abs() <= tol;
    Verdict::new(
        pass,
        format!(
            "EIG {eig:.5}; sPCE {lower:.5}, sNMC {upper:.5} (L=1e4, n=4096, +-{tol}); |InfoNCE - sPCE| {nce_gap:.1e} <= 1e-10; \
             sLACE(L=1, exact posterior) {lace:.5}"
        ),
    )
}
