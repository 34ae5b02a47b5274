use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::losses::{dynamics_loss_grad, symmetry_loss_grad, vectorfield_loss_grad};
use super::optim::{delta_schedule, Adam, EarlyStopping, PlateauScheduler};
use crate::datagen::{SamplingDomain, Snapshot, SnapshotDataset};
use crate::diffnet::{ScalarNet, VectorNet};
use crate::error::{Error, Result};
use crate::geometry::{lie_bracket, norm, AffineGenerator, PhasePoint};
use crate::integrators::VectorField;
use crate::rng::{stream_rng, Stream};
use crate::systems::{Hamiltonian, SystemSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Direct vector-field regression.
    #[serde(rename = "basenn")]
    BaseNN,
    #[serde(rename = "hnn")]
    HNN,
    #[serde(rename = "symhnn")]
    SymHNN,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::BaseNN, Mode::HNN, Mode::SymHNN];

    pub fn name(self) -> &'static str {
        match self {
            Mode::BaseNN => "basenn",
            Mode::HNN => "hnn",
            Mode::SymHNN => "symhnn",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?} (basenn, hnn, symhnn)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub early_stop_patience: usize,
    pub lr0: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub delta_max: f64,
    pub warmup_flat: usize,
    pub warmup_ramp: usize,
    /// Number of symmetry generators learned by SymHNN.
    pub k: usize,
    /// Per-generator weights of the unit-norm penalty; missing entries are 1.
    pub alpha: Vec<f64>,
    /// Per-generator weights of the orthogonality penalty; missing entries are 1.
    pub beta: Vec<f64>,
    /// Monte-Carlo points for the symmetry loss, redrawn every epoch.
    pub mc_points: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Symmetry-loss domain; defaults to the system's training region.
    pub mc_domain: Option<SamplingDomain>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20_000,
            early_stop_patience: 10_000,
            lr0: 5e-3,
            lr_factor: 0.95,
            lr_patience: 50,
            delta_max: 0.5,
            warmup_flat: 100,
            warmup_ramp: 100,
            k: 1,
            alpha: Vec::new(),
            beta: Vec::new(),
            mc_points: 128,
            batch_size: 512,
            hidden: vec![256, 256, 256],
            seed: 0,
            mc_domain: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.early_stop_patience == 0 || self.mc_points == 0 {
            return bad("epochs, early_stop_patience and mc_points must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be nonempty and positive: {:?}", self.hidden));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive (got {})", self.lr0));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad(format!("lr_factor must lie in (0, 1) (got {})", self.lr_factor));
        }
        if !(self.delta_max >= 0.0 && self.delta_max.is_finite()) {
            return bad(format!("delta_max must be >= 0 (got {})", self.delta_max));
        }
        if self.alpha.iter().chain(&self.beta).any(|w| !(*w >= 0.0)) {
            return bad("alpha and beta weights must be >= 0".into());
        }
        if let Some(d) = &self.mc_domain {
            d.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn delta(&self, epoch: usize) -> f64 {
        delta_schedule(epoch, self.delta_max, self.warmup_flat, self.warmup_ramp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "net", rename_all = "kebab-case")]
pub enum ModelNet {
    Hamiltonian(ScalarNet),
    VectorField(VectorNet),
}

impl ModelNet {
    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            ModelNet::Hamiltonian(n) => n.mlp_mut().params_mut(),
            ModelNet::VectorField(n) => n.mlp_mut().params_mut(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            ModelNet::Hamiltonian(n) => n.mlp().params(),
            ModelNet::VectorField(n) => n.mlp().params(),
        }
    }

    /// Mean objective on `batch` (`l_dynamics` or `l_VF`) and its gradient.
    fn loss_grad(&self, batch: &[&Snapshot], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        match self {
            ModelNet::Hamiltonian(n) => dynamics_loss_grad(n, batch, want_grad),
            ModelNet::VectorField(n) => vectorfield_loss_grad(n, batch, want_grad),
        }
    }
}

impl VectorField for ModelNet {
    fn dim(&self) -> usize {
        match self {
            ModelNet::Hamiltonian(n) => 2 * n.n(),
            ModelNet::VectorField(n) => 2 * n.n(),
        }
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        let z = PhasePoint::from_vec(z.to_vec())?;
        match self {
            ModelNet::Hamiltonian(n) => n.vector_field(&z),
            ModelNet::VectorField(n) => n.forward(&z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's minibatches.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Symmetry objective of the last minibatch, when it was evaluated.
    pub sym_loss: Option<f64>,
    pub lr: f64,
    pub delta: f64,
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "sym_loss", "lr", "delta"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.sym_loss.map(|s| s.to_string()).unwrap_or_default(),
            r.lr.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub format_version: u32,
    pub mode: Mode,
    pub system: SystemSpec,
    pub net: ModelNet,
    pub generators: Vec<AffineGenerator>,
    pub config: TrainConfig,
    pub config_hash: String,
    pub dataset_seed: u64,
    /// Reduction used for every reported loss.
    pub loss_reduction: String,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainedModel {
    pub fn hamiltonian(&self) -> Option<&ScalarNet> {
        match &self.net {
            ModelNet::Hamiltonian(n) => Some(n),
            ModelNet::VectorField(_) => None,
        }
    }

    /// The model's objective (`l_dynamics`, or `l_VF` for BaseNN) on `records`.
    pub fn objective(&self, records: &[Snapshot]) -> Result<f64> {
        let refs: Vec<&Snapshot> = records.iter().collect();
        Ok(self.net.loss_grad(&refs, false)?.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let model: TrainedModel = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if model.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    model.format_version
                ),
            });
        }
        Ok(model)
    }
}

/// Unit-normalized bracket of the two most recent generators, if it does
/// not (nearly) vanish.
pub fn bracket_prior(generators: &[AffineGenerator]) -> Option<AffineGenerator> {
    let [.., a, b] = generators else {
        return None;
    };
    let br = lie_bracket(a, b).ok()?;
    if norm(&br) < 1e-6 {
        None
    } else {
        br.normalized().ok()
    }
}

fn random_generator(n: usize, rng: &mut impl Rng) -> Result<AffineGenerator> {
    let len = n * n + n;
    let params: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    AffineGenerator::from_params(n, &params)?.normalized()
}

/// Symmetry-loss domain used when the config leaves it open.
pub fn default_mc_domain(system: &SystemSpec, train: &[Snapshot]) -> Result<SamplingDomain> {
    match system {
        SystemSpec::CartPendulum { .. } => Ok(SamplingDomain::cart_pendulum_training()),
        SystemSpec::TwoBody { .. } => {
            let pts: Vec<PhasePoint> = train.iter().map(|r| r.z.clone()).collect();
            SamplingDomain::two_body_from_points(&pts, 1.2)
        }
    }
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("epoch {epoch}: {context}"),
        },
        other => other,
    }
}

/// Runs the epoch loop and returns the parameters with the best validation
/// objective. With a prior, the network and its generators seed the new
/// run; further generators start from the bracket prior when available.
pub fn train(
    dataset: &SnapshotDataset,
    cfg: &TrainConfig,
    mode: Mode,
    prior: Option<&TrainedModel>,
) -> Result<TrainedModel> {
    cfg.validate()?;
    let k = match mode {
        Mode::SymHNN if cfg.k == 0 => {
            return Err(Error::Config("symhnn needs k >= 1".into()));
        }
        Mode::SymHNN => cfg.k,
        _ => 0,
    };
    let train_set: Vec<&Snapshot> = dataset.train().iter().collect();
    let val_set: Vec<&Snapshot> = dataset.validation().iter().collect();
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation splits must be nonempty".into()));
    }
    let n = dataset.n();
    let system = dataset.meta.system;

    let mut net_rng = stream_rng(cfg.seed, Stream::NetInit);
    let mut net = match mode {
        Mode::BaseNN => ModelNet::VectorField(VectorNet::random(n, &cfg.hidden, &mut net_rng)?),
        _ => ModelNet::Hamiltonian(ScalarNet::random(n, &cfg.hidden, &mut net_rng)?),
    };
    let mut generators: Vec<AffineGenerator> = Vec::with_capacity(k);
    if let Some(p) = prior {
        if p.system != system {
            return Err(Error::Mismatch(format!(
                "prior was trained on {} but the dataset is {}",
                p.system.name(),
                system.name()
            )));
        }
        match (&mut net, &p.net) {
            (ModelNet::Hamiltonian(a), ModelNet::Hamiltonian(b)) => a.mlp_mut().set_params(b.mlp().params())?,
            (ModelNet::VectorField(a), ModelNet::VectorField(b)) => a.mlp_mut().set_params(b.mlp().params())?,
            _ => return Err(Error::Mismatch("prior uses a different model kind".into())),
        }
        generators.extend(p.generators.iter().take(k).cloned());
    }
    let mut gen_rng = stream_rng(cfg.seed, Stream::GeneratorInit);
    while generators.len() < k {
        let next = match bracket_prior(&generators) {
            Some(v) => v,
            None => random_generator(n, &mut gen_rng)?,
        };
        generators.push(next);
    }
    let domain = match &cfg.mc_domain {
        Some(d) => d.clone(),
        None => default_mc_domain(&system, dataset.train())?,
    };

    let mut net_adam = Adam::new(net.params().len());
    let mut gen_adam: Vec<Adam> = generators.iter().map(|v| Adam::new(v.param_len())).collect();
    let mut sched = PlateauScheduler::new(cfg.lr0, cfg.lr_factor, cfg.lr_patience);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut batch_rng = stream_rng(cfg.seed, Stream::Batches);
    let mut mc_rng = stream_rng(cfg.seed, Stream::MonteCarlo);

    let batch_size = match cfg.batch_size {
        0 => train_set.len(),
        b => b.min(train_set.len()),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch: Vec<&Snapshot> = Vec::with_capacity(batch_size);
    let mut best = (net.clone(), generators.clone());
    let mut history = Vec::new();

    for epoch in 0..cfg.epochs {
        let delta = if k > 0 { cfg.delta(epoch) } else { 0.0 };
        let lr = sched.lr();
        let wrap = at_epoch(epoch);
        if batch_size < train_set.len() {
            order.shuffle(&mut batch_rng);
        }
        let mc: Option<Vec<PhasePoint>> =
            (delta > 0.0).then(|| domain.sample(cfg.mc_points, &mut mc_rng));

        let mut train_loss = 0.0;
        let mut sym_loss = None;
        for idx in order.chunks(batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i]));
            let (loss, mut grad) = net.loss_grad(&batch, true).map_err(&wrap)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("epoch {epoch}: training loss"),
                });
            }
            train_loss += loss * batch.len() as f64 / train_set.len() as f64;
            if let (Some(mc), ModelNet::Hamiltonian(h)) = (&mc, &net) {
                let sym = symmetry_loss_grad(h, &generators, mc, &cfg.alpha, &cfg.beta, true)
                    .map_err(&wrap)?;
                grad.iter_mut().zip(&sym.net).for_each(|(g, s)| *g += delta * s);
                for ((v, adam), g) in generators.iter_mut().zip(&mut gen_adam).zip(&sym.generators) {
                    let mut p = v.to_params();
                    let g: Vec<f64> = g.iter().map(|x| delta * x).collect();
                    adam.step(&mut p, &g, lr).map_err(&wrap)?;
                    *v = AffineGenerator::from_params(n, &p)?;
                }
                sym_loss = Some(sym.loss);
            }
            net_adam.step(net.params_mut(), &grad, lr).map_err(&wrap)?;
        }

        let (val_loss, _) = net.loss_grad(&val_set, false)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!("epoch {epoch}: validation loss"),
            });
        }
        sched.step(val_loss);
        if stopper.update(epoch, val_loss) {
            best = (net.clone(), generators.clone());
        }
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            sym_loss,
            lr,
            delta,
        };
        let line = format!(
            "mode={mode} epoch={epoch} train={train_loss:.6e} val={val_loss:.6e} sym={} lr={lr:.6e} delta={delta}",
            sym_loss.map_or("-".to_string(), |s| format!("{s:.6e}"))
        );
        if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
            info!("{line}");
        } else {
            debug!("{line}");
        }
        history.push(rec);
        if stopper.should_stop() {
            info!("mode={mode} early stop at epoch {epoch}");
            break;
        }
    }

    let (net, generators) = best;
    Ok(TrainedModel {
        format_version: CHECKPOINT_VERSION,
        mode,
        system,
        net,
        generators,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        dataset_seed: dataset.meta.seed,
        loss_reduction: "mean".into(),
        best_epoch: stopper.best_epoch().unwrap_or(0),
        history,
    })
}
