use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use symhnn::datagen::{build_dataset, sample_initials, SnapshotDataset};
use symhnn::evaluation::{write_report, EvalSpec};
use symhnn::geometry::PhasePoint;
use symhnn::integrators::{implicit_midpoint, HamiltonianField, Trajectory};
use symhnn::pipeline::{run_pipeline, ExperimentConfig};
use symhnn::systems::SystemSpec;
use symhnn::training::{train, write_history_csv, Mode, TrainConfig, TrainedModel};
use symhnn::{Error, ErrorClass, Result};

#[derive(Parser)]
#[command(name = "symhnn", version, about = "Learn Hamiltonians and their symmetries from snapshot data")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SYMHNN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write a snapshot dataset.
    GenerateData(GenerateArgs),
    /// Train one model on a dataset.
    Train(TrainArgs),
    /// Evaluate trained models and write a report directory.
    Evaluate(EvaluateArgs),
    /// Integrate a trained model (or the true system) with the implicit midpoint rule.
    Rollout(RolloutArgs),
    /// Run generation, training and evaluation from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config providing system and dataset defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["cart-pendulum", "two-body"])]
    system: Option<String>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset CSV path; metadata is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_parser = ["basenn", "hnn", "symhnn"])]
    mode: String,
    /// Experiment config whose train settings for this mode are the base.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    delta_max: Option<f64>,
    #[arg(long)]
    mc_points: Option<usize>,
    /// Minibatch size, 0 for full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to initialize from (incremental symmetry discovery).
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Checkpoint output path; the history CSV goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, env = "SYMHNN_OUT_DIR")]
    report_dir: PathBuf,
    /// Initial point `q..,p..`, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    rollout_z0: Option<Vec<f64>>,
    #[arg(long)]
    rollout_horizon: Option<f64>,
    #[arg(long)]
    rollout_step: Option<f64>,
    #[arg(long, default_value_t = 8)]
    grid_res: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RolloutArgs {
    /// Trained checkpoint; without it the true system is integrated.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_parser = ["cart-pendulum", "two-body"])]
    system: Option<String>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    z0: Vec<f64>,
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    step: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long, env = "SYMHNN_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn system_from(name: &Option<String>) -> Result<Option<SystemSpec>> {
    name.as_deref().map(SystemSpec::from_name).transpose()
}

fn generate(args: GenerateArgs) -> Result<()> {
    let base = args.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let system = match (system_from(&args.system)?, &base) {
        (Some(s), _) => s,
        (None, Some(cfg)) => cfg.system,
        (None, None) => return Err(Error::Config("--system or --config is required".into())),
    };
    let defaults = match &base {
        Some(cfg) if cfg.system.name() == system.name() => cfg.dataset,
        _ => symhnn::pipeline::DatasetSpec {
            trajectories: None,
            horizon: None,
            rate: None,
            noise_var: None,
            seed: None,
        }
        .resolve(&system, 0)?,
    };
    let count = args.count.unwrap_or(defaults.trajectories);
    let seed = args.seed.unwrap_or(defaults.seed);
    let sys = system.build()?;
    let initials = sample_initials(&system, count, seed);
    let ds = build_dataset(
        &sys,
        &initials,
        args.horizon.unwrap_or(defaults.horizon),
        args.rate.unwrap_or(defaults.rate),
        args.noise_var.unwrap_or(defaults.noise_var),
        seed,
    )?;
    ensure_parent(&args.out)?;
    ds.write(&args.out)?;
    info!("wrote {} records to {}", ds.records.len(), args.out.display());
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mode: Mode = args.mode.parse()?;
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?
            .model(mode)
            .cloned()
            .unwrap_or_default(),
        None => TrainConfig::default(),
    };
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.lr0 = lr;
    }
    if let Some(d) = args.delta_max {
        cfg.delta_max = d;
    }
    if let Some(m) = args.mc_points {
        cfg.mc_points = m;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let dataset = SnapshotDataset::read(&args.dataset)?;
    let prior = args.prior.as_deref().map(TrainedModel::load).transpose()?;
    let model = train(&dataset, &cfg, mode, prior.as_ref())?;
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    let history = args.out.with_extension("history.csv");
    write_history_csv(&model.history, &history)?;
    info!(
        "saved {} (best epoch {}) and {}",
        args.out.display(),
        model.best_epoch,
        history.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let dataset = SnapshotDataset::read(&args.dataset)?;
    let models = args
        .models
        .iter()
        .map(|p| TrainedModel::load(p))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TrainedModel> = models.iter().collect();
    let spec = EvalSpec {
        rollout_z0: args.rollout_z0,
        rollout_horizon: args.rollout_horizon,
        rollout_step: args.rollout_step,
        grid_res: args.grid_res,
        samples: args.samples,
        seed: args.seed,
        domain: None,
    };
    let (_, manifest) = write_report(&refs, &dataset, &spec, &args.report_dir)?;
    info!("wrote {} report files to {}", manifest.files.len(), args.report_dir.display());
    Ok(())
}

fn rollout(args: RolloutArgs) -> Result<()> {
    let z0 = PhasePoint::from_vec(args.z0)?;
    let traj: Trajectory = match (&args.model, system_from(&args.system)?) {
        (Some(path), _) => {
            let model = TrainedModel::load(path)?;
            implicit_midpoint(&model.net, &z0, args.horizon, args.step)?
        }
        (None, Some(system)) => {
            let sys = system.build()?;
            implicit_midpoint(&HamiltonianField(&sys), &z0, args.horizon, args.step)?
        }
        (None, None) => return Err(Error::Config("--model or --system is required".into())),
    };
    ensure_parent(&args.out)?;
    traj.write_csv(&args.out)?;
    info!("wrote {} states to {}", traj.len(), args.out.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out = args
        .out_dir
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: set out_dir, --out-dir or SYMHNN_OUT_DIR".into()))?;
    let output = run_pipeline(&cfg, &out)?;
    for row in &output.report.losses {
        info!(
            "model={} train={:.4e} validation={:.4e} test={:.4e}",
            row.model, row.train, row.validation, row.test
        );
    }
    for a in &output.report.alignments {
        info!("model={} generator={} alignment={:.6}", a.model, a.generator, a.alignment);
    }
    info!("manifest lists {} files in {}", output.manifest.files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Rollout(a) => rollout(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
