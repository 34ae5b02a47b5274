//! Config-driven end-to-end experiment: generate data, train each model
//! kind, evaluate, and record every artifact in a hashed manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::datagen::{build_dataset, sample_initials, SnapshotDataset};
use crate::error::{Error, Result};
use crate::evaluation::{write_report, EvalReport, EvalSpec, Manifest};
use crate::systems::SystemSpec;
use crate::training::{train, write_history_csv, Mode, TrainConfig, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub trajectories: Option<usize>,
    pub horizon: Option<f64>,
    pub rate: Option<f64>,
    pub noise_var: Option<f64>,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

/// Dataset parameters with system defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDataset {
    pub trajectories: usize,
    pub horizon: f64,
    pub rate: f64,
    pub noise_var: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn resolve(&self, system: &SystemSpec, seed: u64) -> Result<ResolvedDataset> {
        let (count, horizon, rate) = match system {
            SystemSpec::CartPendulum { .. } => (1000, 3.0, 15.0),
            SystemSpec::TwoBody { .. } => (5000, 10.0, 1.0),
        };
        let r = ResolvedDataset {
            trajectories: self.trajectories.unwrap_or(count),
            horizon: self.horizon.unwrap_or(horizon),
            rate: self.rate.unwrap_or(rate),
            noise_var: self.noise_var.unwrap_or(1e-2),
            seed: self.seed.unwrap_or(seed),
        };
        if r.trajectories == 0 || !(r.horizon > 0.0) || !(r.rate > 0.0) || !(r.noise_var >= 0.0) {
            return Err(Error::Config(format!("invalid dataset settings: {r:?}")));
        }
        Ok(r)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    #[serde(default)]
    seed: u64,
    out_dir: Option<PathBuf>,
    system: SystemSpec,
    dataset: Option<DatasetSpec>,
    models: Option<Vec<Mode>>,
    /// Shared training settings, with optional `basenn` / `hnn` / `symhnn`
    /// sub-tables overriding them per model kind.
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    evaluation: EvalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub mode: Mode,
    pub config: TrainConfig,
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub system: SystemSpec,
    pub dataset: ResolvedDataset,
    pub models: Vec<ModelSpec>,
    pub evaluation: EvalSpec,
}

fn resolve_train(table: &toml::Table, mode: Mode, seed: u64) -> Result<TrainConfig> {
    let mode_keys: BTreeSet<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
    let mut merged: toml::Table = table
        .iter()
        .filter(|(k, _)| !mode_keys.contains(k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if let Some(over) = table.get(mode.name()) {
        let over = over
            .as_table()
            .ok_or_else(|| Error::Config(format!("train.{mode} must be a table")))?;
        merged.extend(over.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    merged
        .entry("seed")
        .or_insert(toml::Value::Integer(seed as i64));
    let cfg: TrainConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("train.{mode}: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawExperiment =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        raw.system.build().map_err(|e| Error::Config(e.to_string()))?;
        let dataset = raw
            .dataset
            .unwrap_or(DatasetSpec {
                trajectories: None,
                horizon: None,
                rate: None,
                noise_var: None,
                seed: None,
            })
            .resolve(&raw.system, raw.seed)?;
        let modes = raw.models.unwrap_or_else(|| Mode::ALL.to_vec());
        if modes.is_empty() {
            return Err(Error::Config("models must list at least one model kind".into()));
        }
        let models = modes
            .into_iter()
            .map(|mode| {
                let config = resolve_train(&raw.train, mode, raw.seed)?;
                if mode == Mode::SymHNN && config.k == 0 {
                    return Err(Error::Config("symhnn needs k >= 1".into()));
                }
                Ok(ModelSpec { mode, config })
            })
            .collect::<Result<Vec<_>>>()?;
        if raw.evaluation.grid_res < 2 || raw.evaluation.samples == 0 {
            return Err(Error::Config("evaluation needs grid_res >= 2 and samples > 0".into()));
        }
        Ok(ExperimentConfig {
            seed: raw.seed,
            out_dir: raw.out_dir,
            system: raw.system,
            dataset,
            models,
            evaluation: raw.evaluation,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn model(&self, mode: Mode) -> Option<&TrainConfig> {
        self.models.iter().find(|m| m.mode == mode).map(|m| &m.config)
    }
}

/// Relative artifact locations inside an experiment directory.
pub mod layout {
    pub const CONFIG: &str = "experiment.json";
    pub const DATASET: &str = "data/dataset.csv";
    pub const REPORT_DIR: &str = "report";
    pub const MANIFEST: &str = "manifest.json";

    pub fn model(mode: crate::training::Mode) -> String {
        format!("models/{mode}.json")
    }

    pub fn history(mode: crate::training::Mode) -> String {
        format!("models/{mode}_history.csv")
    }
}

pub fn generate(cfg: &ExperimentConfig) -> Result<SnapshotDataset> {
    let sys = cfg.system.build()?;
    let d = cfg.dataset;
    let initials = sample_initials(&cfg.system, d.trajectories, d.seed);
    build_dataset(&sys, &initials, d.horizon, d.rate, d.noise_var, d.seed)
}

pub struct PipelineOutput {
    pub dataset: SnapshotDataset,
    pub models: Vec<TrainedModel>,
    pub report: EvalReport,
    pub manifest: Manifest,
}

/// Runs every stage into `out_dir`. Errors carry the failing stage.
pub fn run_pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PipelineOutput> {
    let mut files = Vec::new();
    std::fs::create_dir_all(out_dir.join("data"))?;
    std::fs::create_dir_all(out_dir.join("models"))?;
    let config_path = out_dir.join(layout::CONFIG);
    std::fs::write(&config_path, serde_json::to_string_pretty(cfg)? + "\n")?;
    files.push(config_path);

    info!("stage=generate system={} trajectories={}", cfg.system.name(), cfg.dataset.trajectories);
    let dataset_path = out_dir.join(layout::DATASET);
    let dataset = generate(cfg)
        .and_then(|ds| {
            ds.write(&dataset_path)?;
            Ok(ds)
        })
        .map_err(|e| e.in_stage("generate"))?;
    files.push(dataset_path.clone());
    files.push(SnapshotDataset::meta_path(&dataset_path));

    let mut models = Vec::with_capacity(cfg.models.len());
    for spec in &cfg.models {
        info!("stage=train mode={}", spec.mode);
        let model = train(&dataset, &spec.config, spec.mode, None).map_err(|e| e.in_stage("train"))?;
        let mp = out_dir.join(layout::model(spec.mode));
        let hp = out_dir.join(layout::history(spec.mode));
        model
            .save(&mp)
            .and_then(|_| write_history_csv(&model.history, &hp))
            .map_err(|e| e.in_stage("train"))?;
        files.extend([mp, hp]);
        models.push(model);
    }

    info!("stage=evaluate");
    let refs: Vec<&TrainedModel> = models.iter().collect();
    let report_dir = out_dir.join(layout::REPORT_DIR);
    let (report, report_manifest) =
        write_report(&refs, &dataset, &cfg.evaluation, &report_dir).map_err(|e| e.in_stage("evaluate"))?;
    files.extend(report_manifest.files.iter().map(|f| report_dir.join(&f.path)));
    files.push(report_dir.join(layout::MANIFEST));

    let manifest = Manifest::build(out_dir, &files)?;
    manifest.write(&out_dir.join(layout::MANIFEST))?;
    Ok(PipelineOutput {
        dataset,
        models,
        report,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [system]
        name = "cart-pendulum"
        m = 1.0
        m0 = 1.0
        l = 1.0
        g = 9.81
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.dataset.trajectories, 1000);
        assert_eq!(cfg.dataset.seed, 3);
        assert_eq!(cfg.models.len(), 3);
        assert!(cfg.models.iter().all(|m| m.config.seed == 3 && m.config.epochs == 20_000));
    }

    #[test]
    fn per_mode_tables_override_shared_settings() {
        let text = format!("{MINIMAL}\n[train]\nepochs = 10\nhidden = [4]\n[train.symhnn]\nk = 2\nepochs = 20\n");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.model(Mode::HNN).unwrap().epochs, 10);
        let sym = cfg.model(Mode::SymHNN).unwrap();
        assert_eq!((sym.epochs, sym.k, sym.hidden.clone()), (20, 2, vec![4]));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        for bad in [
            format!("{MINIMAL}\nbogus = 1\n"),
            format!("{MINIMAL}\n[train]\nepoch = 5\n"),
            format!("{MINIMAL}\n[train.hnn]\nlearning_rate = 5\n"),
            format!("{MINIMAL}\n[evaluation]\nsamplez = 5\n"),
            MINIMAL.replace("g = 9.81", "g = 9.81\nh = 1.0"),
        ] {
            let err = ExperimentConfig::from_toml(&bad).unwrap_err();
            assert_eq!(err.class(), crate::ErrorClass::Config, "{bad}: {err}");
        }
    }
}
