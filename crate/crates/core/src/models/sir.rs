use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{normal_log_pdf, ImplicitModel, ModelInfo, ModelKind, ParameterGrid, PriorDraw, SimContext};
use crate::error::{Error, Result};
use crate::nets::{DesignTransform, FeatureScaling, ThetaFeatures};
use crate::rng::{Rng, SeedStreams};
use crate::tensor_ad::{Tensor, Var};

pub const SIR_POPULATION: f64 = 500.0;
pub const SIR_SIM_DT: f64 = 0.01;
pub const SIR_HORIZON: f64 = 100.0;
pub const SIR_INITIAL: [f64; 2] = [498.0, 2.0];
const LOG_MEAN: [f64; 2] = [0.5, 0.1];
const LOG_STD: f64 = 0.5;

const BANK_MAGIC: &[u8; 8] = b"IDADPATH";
const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirParams {
    pub beta: f64,
    pub gamma: f64,
}

impl SirParams {
    pub fn sample(rng: &mut Rng) -> SirParams {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        SirParams {
            beta: (LOG_MEAN[0] + LOG_STD * z1).exp(),
            gamma: (LOG_MEAN[1] + LOG_STD * z2).exp(),
        }
    }
}

/// States `(S, I)` at times `j * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePathGrid {
    pub dt: f64,
    pub states: Vec<[f64; 2]>,
}

impl SdePathGrid {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.states.len()).map(|j| j as f64 * self.dt)
    }

    pub fn infected(&self) -> Vec<f64> {
        self.states.iter().map(|s| s[1]).collect()
    }

    /// `I(tau)` by linear interpolation.
    pub fn observe(&self, tau: f64) -> Result<f64> {
        Ok(observe_path(&self.infected(), self.dt, tau)?.0)
    }
}

fn em_step(x: [f64; 2], p: SirParams, population: f64, dt: f64, e1: f64, e2: f64) -> [f64; 2] {
    let [s, i] = x;
    let infection = p.beta * s * i / population;
    let recovery = p.gamma * i;
    let sdt = dt.sqrt();
    let a = infection.sqrt() * sdt * e1;
    let b = recovery.sqrt() * sdt * e2;
    let s_next = (s - infection * dt - a).max(0.0);
    let i_next = (i + (infection - recovery) * dt + a - b).max(0.0).min(population - s_next);
    [s_next, i_next]
}

/// Euler–Maruyama solution of the stochastic SIR system on `steps` steps.
///
/// `noise` holds two standard normals per step, in step order.
pub fn euler_maruyama(params: SirParams, dt: f64, steps: usize, noise: &[f64], x0: [f64; 2]) -> Result<SdePathGrid> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if noise.len() != 2 * steps {
        return Err(Error::Config(format!("expected {} noise values, got {}", 2 * steps, noise.len())));
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0;
    states.push(x);
    for e in noise.chunks_exact(2) {
        x = em_step(x, params, SIR_POPULATION, dt, e[0], e[1]);
        states.push(x);
    }
    Ok(SdePathGrid { dt, states })
}

/// Grid interval used for `tau` and the knot time it is measured from.
///
/// Times within `1e-9 * spacing` of a knot snap onto it and read the stored value.
fn locate(points: usize, spacing: f64, tau: f64) -> Result<(usize, f64)> {
    if points < 2 {
        return Err(Error::Config("a path needs at least two grid points".into()));
    }
    let last = points - 1;
    let horizon = last as f64 * spacing;
    let tol = 1e-9 * spacing;
    if !(tau >= -tol && tau <= horizon + tol) {
        return Err(Error::DesignOutOfBox { design: vec![tau], bounds: vec![(0.0, horizon)] });
    }
    let nearest = ((tau / spacing).round() as usize).min(last);
    if (tau - nearest as f64 * spacing).abs() <= tol {
        return Ok((nearest.min(last - 1), if nearest == last { tau - spacing } else { tau }));
    }
    let j = ((tau / spacing).floor() as usize).min(last - 1);
    Ok((j, j as f64 * spacing))
}

/// Linear interpolation of grid `values` with the given spacing: `(value, slope)`.
pub fn observe_path(values: &[f64], spacing: f64, tau: f64) -> Result<(f64, f64)> {
    let (j, knot) = locate(values.len(), spacing, tau)?;
    let slope = (values[j + 1] - values[j]) / spacing;
    let offset = tau - knot;
    if offset == spacing {
        return Ok((values[j + 1], slope));
    }
    Ok((values[j] + offset * slope, slope))
}

/// Sidecar description of a [`PathBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathBankMeta {
    pub population: f64,
    pub sim_dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub count: usize,
    /// Stored grid keeps every `record_every`-th solver step.
    pub record_every: usize,
    pub initial: [f64; 2],
}

impl PathBankMeta {
    pub fn spacing(&self) -> f64 {
        self.sim_dt * self.record_every as f64
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.sim_dt).round() as usize
    }

    pub fn points(&self) -> usize {
        self.steps() / self.record_every + 1
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "population = {}", self.population);
        let _ = writeln!(s, "sim_dt = {}", self.sim_dt);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "count = {}", self.count);
        let _ = writeln!(s, "record_every = {}", self.record_every);
        let _ = writeln!(s, "s0 = {}", self.initial[0]);
        let _ = writeln!(s, "i0 = {}", self.initial[1]);
        s
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("path bank sidecar: malformed line `{line}`")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(f: &std::collections::HashMap<String, String>, k: &str) -> Result<T> {
            f.get(k)
                .ok_or_else(|| Error::Format(format!("path bank sidecar: missing `{k}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("path bank sidecar: bad value for `{k}`")))
        }
        let meta = PathBankMeta {
            population: get(&fields, "population")?,
            sim_dt: get(&fields, "sim_dt")?,
            horizon: get(&fields, "horizon")?,
            seed: get(&fields, "seed")?,
            count: get(&fields, "count")?,
            record_every: get(&fields, "record_every")?,
            initial: [get(&fields, "s0")?, get(&fields, "i0")?],
        };
        if meta.record_every == 0 || !(meta.sim_dt > 0.0) || meta.steps() % meta.record_every != 0 {
            return Err(Error::Format("path bank sidecar: inconsistent grid description".into()));
        }
        Ok(meta)
    }
}

/// Pre-simulated SIR paths paired with the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBank {
    meta: PathBankMeta,
    params: Vec<SirParams>,
    infected: Vec<f64>,
}

impl PathBank {
    /// `count` paths with parameters drawn from the prior.
    pub fn simulate(count: usize, seed: u64, record_every: usize) -> Result<Self> {
        let streams = SeedStreams::new(seed);
        let params = (0..count).map(|i| SirParams::sample(&mut streams.indexed("sir-theta", i as u64))).collect();
        Self::simulate_with(params, seed, record_every)
    }

    /// One path per given parameter vector.
    pub fn simulate_with(params: Vec<SirParams>, seed: u64, record_every: usize) -> Result<Self> {
        if record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let meta = PathBankMeta {
            population: SIR_POPULATION,
            sim_dt: SIR_SIM_DT,
            horizon: SIR_HORIZON,
            seed,
            count: params.len(),
            record_every,
            initial: SIR_INITIAL,
        };
        let steps = meta.steps();
        if steps % record_every != 0 {
            return Err(Error::Config(format!("{steps} solver steps are not divisible by {record_every}")));
        }
        let points = meta.points();
        let streams = SeedStreams::new(seed);
        let mut infected = Vec::with_capacity(params.len() * points);
        for (i, &p) in params.iter().enumerate() {
            let mut rng = streams.indexed("sir-path", i as u64);
            let mut x = SIR_INITIAL;
            infected.push(x[1]);
            for step in 1..=steps {
                let e1 = StandardNormal.sample(&mut rng);
                let e2 = StandardNormal.sample(&mut rng);
                x = em_step(x, p, SIR_POPULATION, SIR_SIM_DT, e1, e2);
                if step % record_every == 0 {
                    infected.push(x[1]);
                }
            }
        }
        Ok(PathBank { meta, params, infected })
    }

    /// Noise that [`PathBank::simulate_with`] uses for path `index`.
    pub fn path_noise(&self, index: usize) -> Vec<f64> {
        let mut rng = SeedStreams::new(self.meta.seed).indexed("sir-path", index as u64);
        (0..2 * self.meta.steps()).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn meta(&self) -> &PathBankMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self, index: usize) -> SirParams {
        self.params[index]
    }

    pub fn path(&self, index: usize) -> &[f64] {
        let n = self.meta.points();
        &self.infected[index * n..(index + 1) * n]
    }

    pub fn observe(&self, index: usize, tau: f64) -> Result<(f64, f64)> {
        observe_path(self.path(index), self.meta.spacing(), tau)
    }

    fn sidecar(path: &Path) -> std::path::PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        s.into()
    }

    /// Writes the binary bank and its `.meta` sidecar; both writes are atomic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let points = self.meta.points();
        let mut bytes = Vec::with_capacity(16 + 8 * (points + self.len() * (points + 2)));
        bytes.extend_from_slice(BANK_MAGIC);
        bytes.extend_from_slice(&BANK_VERSION.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        for j in 0..points {
            bytes.extend_from_slice(&(j as f64 * self.meta.spacing()).to_le_bytes());
        }
        for (i, p) in self.params.iter().enumerate() {
            bytes.extend_from_slice(&p.beta.to_le_bytes());
            bytes.extend_from_slice(&p.gamma.to_le_bytes());
            for v in self.path(i) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::store::atomic_write(path, &bytes)?;
        crate::store::atomic_write(&Self::sidecar(path), self.meta.to_text().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta = PathBankMeta::from_text(&std::fs::read_to_string(Self::sidecar(path))?)?;
        let bytes = std::fs::read(path)?;
        if bytes.len() < 16 || &bytes[..8] != BANK_MAGIC {
            return Err(Error::Format("not a path bank file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != BANK_VERSION {
            return Err(Error::Format(format!("unsupported path bank version {version}")));
        }
        let points = meta.points();
        let expected = 16 + 8 * (points + meta.count * (points + 2));
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "path bank has {} bytes, sidecar implies {expected}",
                bytes.len()
            )));
        }
        let mut values = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for j in 0..points {
            let t = values.next().unwrap();
            if (t - j as f64 * meta.spacing()).abs() > 1e-9 {
                return Err(Error::Format("path bank grid does not match its sidecar".into()));
            }
        }
        let mut params = Vec::with_capacity(meta.count);
        let mut infected = Vec::with_capacity(meta.count * points);
        for _ in 0..meta.count {
            params.push(SirParams { beta: values.next().unwrap(), gamma: values.next().unwrap() });
            infected.extend(values.by_ref().take(points));
        }
        Ok(PathBank { meta, params, infected })
    }
}

/// Stochastic SIR epidemic observed through the number of infected.
///
/// Outcomes are read from pre-simulated paths, so there is no observation
/// noise and no tractable likelihood.
#[derive(Debug, Clone)]
pub struct SirModel {
    info: ModelInfo,
    bank: Arc<PathBank>,
}

impl SirModel {
    pub fn new(bank: Arc<PathBank>) -> Self {
        SirModel {
            info: ModelInfo {
                kind: ModelKind::Sir,
                design_dim: 1,
                outcome_dim: 1,
                theta_dim: 2,
                design_box: Some(vec![(0.0, SIR_HORIZON)]),
                exchangeable: false,
                default_horizon: 10,
                theta_names: vec!["beta".into(), "gamma".into()],
            },
            bank,
        }
    }

    pub fn bank(&self) -> &Arc<PathBank> {
        &self.bank
    }

    /// Context holding freshly simulated paths for the given parameters.
    pub fn context_for(params: &[SirParams], seed: u64) -> Result<(Tensor, SimContext)> {
        let bank = PathBank::simulate_with(params.to_vec(), seed, 10)?;
        let theta = Tensor::new(vec![params.len(), 2], params.iter().flat_map(|p| [p.beta, p.gamma]).collect())?;
        let rows = (0..params.len()).collect();
        Ok((theta, SimContext::Paths { bank: Arc::new(bank), rows }))
    }
}

impl ImplicitModel for SirModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn sample_prior(&self, n: usize, rng: &mut Rng) -> Tensor {
        let data = (0..n)
            .flat_map(|_| {
                let p = SirParams::sample(rng);
                [p.beta, p.gamma]
            })
            .collect();
        Tensor::new(vec![n, 2], data).expect("shape matches data")
    }

    /// Bank rows resampled with replacement.
    fn draw(&self, n: usize, rng: &mut Rng) -> PriorDraw {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.bank.len())).collect();
        let data = rows
            .iter()
            .flat_map(|&r| {
                let p = self.bank.params(r);
                [p.beta, p.gamma]
            })
            .collect();
        PriorDraw {
            theta: Tensor::new(vec![n, 2], data).expect("shape matches data"),
            context: SimContext::Paths { bank: self.bank.clone(), rows },
        }
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(LOG_MEAN)
            .map(|(&t, m)| if t > 0.0 { normal_log_pdf(t.ln(), m, LOG_STD) - t.ln() } else { f64::NEG_INFINITY })
            .sum()
    }

    fn noise_dim(&self) -> usize {
        0
    }

    fn simulate<'t>(&self, theta: &Tensor, context: &SimContext, design: Var<'t>, _noise: &Tensor) -> Result<Var<'t>> {
        let SimContext::Paths { bank, rows } = context else {
            return Err(Error::Config("SIR simulation needs path-bank context".into()));
        };
        let b = theta.rows();
        if rows.len() != b {
            return Err(Error::Config(format!("{} path rows for {b} parameter draws", rows.len())));
        }
        let taus = design.value();
        self.info.check_design_rows(&taus)?;
        let spacing = bank.meta().spacing();
        let mut knots = Vec::with_capacity(b);
        let mut slopes = Vec::with_capacity(b);
        let mut values = Vec::with_capacity(b);
        for (&row, &tau) in rows.iter().zip(taus.data()) {
            let path = bank.path(row);
            let (j, knot) = locate(path.len(), spacing, tau)?;
            knots.push(knot);
            slopes.push((path[j + 1] - path[j]) / spacing);
            values.push(path[j]);
        }
        let tape = design.tape();
        let shape = vec![b, 1];
        let offset = design.sub(tape.constant(Tensor::new(shape.clone(), knots)?))?;
        Ok(offset
            .mul(tape.constant(Tensor::new(shape.clone(), slopes)?))?
            .add(tape.constant(Tensor::new(shape, values)?))?)
    }

    fn theta_features(&self) -> ThetaFeatures {
        ThetaFeatures::StandardizedLog { mean: LOG_MEAN.to_vec(), std: vec![LOG_STD; 2] }
    }

    fn feature_scaling(&self) -> FeatureScaling {
        FeatureScaling {
            design_offset: vec![50.0],
            design_scale: vec![50.0],
            outcome_offset: vec![50.0],
            outcome_scale: vec![100.0],
        }
    }

    fn design_transform(&self) -> DesignTransform {
        DesignTransform::Sigmoid { lower: vec![0.0], upper: vec![SIR_HORIZON] }
    }

    fn posterior_grid(&self) -> ParameterGrid {
        ParameterGrid::log_normal_product(&LOG_MEAN, &[LOG_STD; 2], 50, 3.0)
    }
}
