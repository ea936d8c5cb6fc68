use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use idad_core::bounds::Objective;
use idad_core::eval::{
    baseline_policy, evaluate_policy, simulate_histories, time_deployment, BaselineKind, DesignPolicy, EvalSetup,
};
use idad_core::models::{ImplicitModel, ModelKind, ModelSpec};
use idad_core::rng::SeedStreams;
use idad_core::store::{load_config, open_checkpoint, Checkpoint};
use idad_core::train::{Method, Trainer};
use thiserror::Error;

use crate::serve::{self, AppState, Journal};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] idad_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Runtime(idad_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "idad", version, about = "Amortized likelihood-free adaptive experimental design")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write a checkpoint plus a JSON-lines training log.
    Train(TrainArgs),
    /// Evaluate a checkpoint's policy on fresh histories.
    Eval(EvalArgs),
    /// Show and evaluate a heuristic design policy.
    Baseline(BaselineArgs),
    /// Serve checkpoints over HTTP.
    Deploy(DeployArgs),
    /// Dump simulated rollouts as JSON lines.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Preset name or path to a TOML config file.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    /// Checkpoint path; defaults to `<config name>.idad`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training log path; defaults to the checkpoint path with `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalOpts {
    /// Contrastive samples per history.
    #[arg(long = "L", default_value_t = 10_000)]
    pub contrastives: usize,
    /// Number of fresh histories.
    #[arg(long = "n", default_value_t = 2048)]
    pub n_histories: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Results table to append a row to.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub opts: EvalOpts,
    /// Simulated experiments timed for deployment latency (0 skips timing).
    #[arg(long, default_value_t = 20)]
    pub timing_trials: usize,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub model: ModelKind,
    #[arg(long, default_value = "equal_interval")]
    pub kind: BaselineKind,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    /// Only print the designs.
    #[arg(long)]
    pub no_eval: bool,
    #[command(flatten)]
    pub opts: EvalOpts,
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    /// Checkpoint files or directories holding `*.idad` files.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory for the session journal; sessions found there are restored.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, required_unless_present = "checkpoint")]
    pub model: Option<ModelKind>,
    /// Use a trained policy instead of a baseline.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "random")]
    pub policy: BaselineKind,
    #[arg(long = "T")]
    pub horizon: Option<usize>,
    #[arg(long = "n", default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Baseline(a) => baseline(a, out),
        Command::Deploy(a) => deploy(a),
        Command::Simulate(a) => simulate(a, out),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

pub fn train(a: TrainArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let mut config = load_config(&a.config)?;
    if let Some(m) = a.method {
        config = config.with_method(m);
    }
    if let Some(v) = a.objective {
        config.objective = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.steps {
        config.steps = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr {
        config.lr = v;
    }
    if let Some(v) = a.horizon {
        config.horizon = v;
    }
    let ck_path = a.out.unwrap_or_else(|| PathBuf::from(format!("{}.idad", config.name)));
    let log = a.log.unwrap_or_else(|| with_suffix(&ck_path, ".log.jsonl"));
    config.log_path = Some(log.to_string_lossy().into_owned());
    config.validate()?;
    writeln!(out, "# effective config\n{}", config.to_toml_string())?;
    idad_core::store::atomic_write(&with_suffix(&ck_path, ".toml"), config.to_toml_string().as_bytes())?;
    let trainer = Trainer::new(config)?;
    let model = trainer.model().clone();
    let trained = trainer.run()?;
    Checkpoint::from_trained(&trained, model.as_ref()).save(&ck_path)?;
    let s = &trained.summary;
    writeln!(
        out,
        "steps = {}\nfinal_objective = {:.6}\nbest_objective = {:.6}\nfinal_lr = {}\ncheckpoint = {}\nlog = {}",
        s.steps,
        s.final_objective,
        s.best_objective,
        s.final_lr,
        ck_path.display(),
        log.display()
    )?;
    Ok(())
}

/// Evaluation rebuilds the model on its own seed stream, so SIR gets a path
/// bank disjoint from the one used in training.
fn eval_model(spec: &ModelSpec, seed: u64) -> Result<Arc<dyn ImplicitModel>> {
    Ok(spec.build(&SeedStreams::new(seed).child("eval-model"))?)
}

fn report(
    policy: &dyn DesignPolicy,
    model: &dyn ImplicitModel,
    setup: &EvalSetup<'_>,
    opts: &EvalOpts,
    header: &str,
    out: &mut dyn std::io::Write,
) -> Result<idad_core::eval::EvalReport> {
    let r = evaluate_policy(policy, model, setup)?;
    write!(out, "{header}{}", r.to_text())?;
    if let Some(p) = &opts.results {
        r.append_csv(p)?;
    }
    Ok(r)
}

pub fn eval(a: EvalArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let (ck, _, restored) = open_checkpoint(&a.checkpoint)?;
    let config = &ck.descriptor.config;
    let model = eval_model(&config.model, a.opts.seed)?;
    let setup = EvalSetup {
        horizon: config.horizon,
        contrastives: a.opts.contrastives,
        n_histories: a.opts.n_histories,
        seed: a.opts.seed,
        critic: restored.critic.as_ref().map(|c| (c, config.objective)),
    };
    let mut r = evaluate_policy(&restored.designer, model.as_ref(), &setup)?;
    r.policy = config.method.name().to_string();
    if a.timing_trials > 0 {
        r.latency = Some(time_deployment(&restored.designer, model.as_ref(), config.horizon, a.timing_trials, a.opts.seed)?);
    }
    write!(out, "checkpoint = {}\nconfig = {}\ntrain_seed = {}\n{}", a.checkpoint.display(), config.name, config.seed, r.to_text())?;
    if let Some(p) = &a.opts.results {
        r.append_csv(p)?;
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let model = eval_model(&ModelSpec::default_for(a.model), a.opts.seed)?;
    let horizon = a.horizon.unwrap_or(model.info().default_horizon);
    let policy = baseline_policy(a.kind, model.as_ref(), horizon)?;
    if let Some(eq) = policy_designs(a.kind, model.as_ref(), horizon)? {
        let list: Vec<String> = eq.iter().map(|d| format!("{d}")).collect();
        writeln!(out, "designs = {}", list.join(", "))?;
    } else {
        let desc = match &model.info().design_box {
            Some(b) => format!("uniform over {b:?}"),
            None => "standard normal".into(),
        };
        writeln!(out, "designs = random, {desc}, independent of the history")?;
    }
    if a.no_eval {
        return Ok(());
    }
    if !model.has_likelihood() {
        writeln!(out, "evaluation skipped: {} has no likelihood and a baseline has no critic", a.model.name())?;
        return Ok(());
    }
    let setup = EvalSetup {
        horizon,
        contrastives: a.opts.contrastives,
        n_histories: a.opts.n_histories,
        seed: a.opts.seed,
        critic: None,
    };
    report(policy.as_ref(), model.as_ref(), &setup, &a.opts, "", out)?;
    Ok(())
}

fn policy_designs(kind: BaselineKind, model: &dyn ImplicitModel, horizon: usize) -> Result<Option<Vec<f64>>> {
    Ok(match kind {
        BaselineKind::EqualInterval => {
            let p = idad_core::eval::baseline_policy(kind, model, horizon)?;
            let info = model.info();
            let mut h = idad_core::nets::History::new(info.design_dim, info.outcome_dim);
            let mut rng = SeedStreams::new(0).rng("designs");
            let mut ds = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                let d = p.act(&h, &mut rng)?;
                ds.push(d[0]);
                h.push(d, vec![0.0; info.outcome_dim]).map_err(idad_core::Error::from)?;
            }
            Some(ds)
        }
        BaselineKind::Random => None,
    })
}

pub fn simulate(a: SimulateArgs, out: &mut dyn std::io::Write) -> Result<()> {
    let (model, policy, horizon): (Arc<dyn ImplicitModel>, Box<dyn DesignPolicy>, usize) = match &a.checkpoint {
        Some(path) => {
            let (ck, model, restored) = open_checkpoint(path)?;
            if a.model.is_some_and(|m| m != ck.descriptor.model) {
                return Err(CliError::Usage("--model does not match the checkpoint".into()));
            }
            let h = a.horizon.unwrap_or(ck.descriptor.config.horizon);
            (model, Box::new(restored.designer), h)
        }
        None => {
            let kind = a.model.expect("clap requires --model without --checkpoint");
            let model = ModelSpec::default_for(kind).build(&SeedStreams::new(a.seed).child("model"))?;
            let h = a.horizon.unwrap_or(model.info().default_horizon);
            let p = baseline_policy(a.policy, model.as_ref(), h)?;
            (model, p, h)
        }
    };
    let streams = SeedStreams::new(a.seed).child("simulate");
    let (draw, histories) = simulate_histories(policy.as_ref(), model.as_ref(), horizon, a.n, &streams)?;
    for (i, h) in histories.iter().enumerate() {
        let record = serde_json::json!({
            "model": model.info().kind.name(),
            "theta": draw.theta.row(i),
            "theta_names": model.info().theta_names,
            "designs": h.designs().collect::<Vec<_>>(),
            "outcomes": h.outcomes().collect::<Vec<_>>(),
        });
        writeln!(out, "{record}")?;
    }
    Ok(())
}

pub fn deploy(a: DeployArgs) -> Result<()> {
    let addr = serve::bind_address(a.port).map_err(CliError::Usage)?;
    let deployments = AppState::load_checkpoints(&a.checkpoints)?;
    if deployments.is_empty() {
        return Err(CliError::Usage("no checkpoints found".into()));
    }
    let journal = a.journal.map(Journal::open).transpose()?;
    let state = Arc::new(AppState::new(deployments, journal));
    let restored = state.replay_journal()?;
    if restored > 0 {
        eprintln!("idad: restored {restored} sessions from the journal");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve::serve(state, addr))?;
    Ok(())
}
