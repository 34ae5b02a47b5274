//! Post-training diagnostics: loss tables, rollouts with true-energy traces,
//! Noether-quantity traces, symmetry-error statistics and level-set grids.
//! Everything is written as CSV/JSON into a report directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{SamplingDomain, Split, SnapshotDataset};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{conserved_quantity, directional_derivative, inner_product, norm, AffineGenerator, PhasePoint};
use crate::integrators::{implicit_midpoint, HamiltonianField, Trajectory};
use crate::rng::{stream_rng, Stream};
use crate::systems::{Hamiltonian, ReferenceSystem, SystemSpec};
use crate::training::{default_mc_domain, symmetry_losses, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub model: String,
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    /// Sum of `l_sym^(k)` over the model's own generators, on the grid.
    pub sym_learned: Option<f64>,
    /// Sum of `l_sym^(k)` over the system's true generators, on the grid.
    pub sym_true: Option<f64>,
}

fn check_system(model: &TrainedModel, system: &SystemSpec) -> Result<()> {
    if &model.system == system {
        Ok(())
    } else {
        Err(Error::Mismatch(format!(
            "model {} was trained on {} but the dataset is {}",
            model.mode,
            model.system.name(),
            system.name()
        )))
    }
}

/// Split objectives per model plus symmetry losses on a fixed `grid`.
pub fn loss_table(
    models: &[&TrainedModel],
    dataset: &SnapshotDataset,
    grid: &[PhasePoint],
) -> Result<Vec<LossRow>> {
    let sys = dataset.meta.system.build()?;
    models
        .iter()
        .map(|m| {
            check_system(m, &dataset.meta.system)?;
            let [train, validation, test] = Split::ALL.map(|s| m.objective(dataset.part(s)));
            let (sym_learned, sym_true) = match m.hamiltonian() {
                Some(h) => {
                    let learned = if m.generators.is_empty() {
                        None
                    } else {
                        Some(symmetry_losses(h, &m.generators, grid)?.iter().sum())
                    };
                    let truth = symmetry_losses(h, sys.true_generators(), grid)?.iter().sum();
                    (learned, Some(truth))
                }
                None => (None, None),
            };
            Ok(LossRow {
                model: m.mode.to_string(),
                train: train?,
                validation: validation?,
                test: test?,
                sym_learned,
                sym_true,
            })
        })
        .collect()
}

/// Rollout of one field with the true energy along it, shifted so that the
/// first entry is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub label: String,
    pub result: std::result::Result<(Trajectory, Vec<f64>), String>,
}

impl Rollout {
    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.result.as_ref().ok().map(|(t, _)| t)
    }

    pub fn energy(&self) -> Option<&[f64]> {
        self.result.as_ref().ok().map(|(_, e)| e.as_slice())
    }
}

/// True energy along `traj` minus its initial value; points where the true
/// Hamiltonian is undefined give NaN.
pub fn shifted_energy(sys: &ReferenceSystem, traj: &Trajectory) -> Vec<f64> {
    let e: Vec<f64> = traj
        .states
        .iter()
        .map(|z| sys.energy(z).unwrap_or(f64::NAN))
        .collect();
    let e0 = e.first().copied().unwrap_or(0.0);
    e.iter().map(|x| x - e0).collect()
}

/// Implicit-midpoint rollouts of the true field (labelled `true`) and of
/// every model. Solver failures are reported per model.
pub fn rollout_compare(
    models: &[&TrainedModel],
    sys: &ReferenceSystem,
    z0: &PhasePoint,
    t_end: f64,
    h: f64,
) -> Vec<Rollout> {
    let truth = implicit_midpoint(&HamiltonianField(sys), z0, t_end, h);
    let mut out = vec![Rollout {
        label: "true".into(),
        result: truth
            .map(|t| {
                let e = shifted_energy(sys, &t);
                (t, e)
            })
            .map_err(|e| e.to_string()),
    }];
    out.par_extend(models.par_iter().map(|m| Rollout {
        label: m.mode.to_string(),
        result: implicit_midpoint(&m.net, z0, t_end, h)
            .map(|t| {
                let e = shifted_energy(sys, &t);
                (t, e)
            })
            .map_err(|e| e.to_string()),
    }));
    out
}

pub fn conserved_trace(v: &AffineGenerator, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.states.iter().map(|z| conserved_quantity(v, z)).collect()
}

pub fn peak_to_peak(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if xs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Quantiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no values to summarize".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (i, frac) = (pos.floor() as usize, pos.fract());
            if i + 1 < v.len() {
                v[i] + frac * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Ok(Quartiles {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins spanning the sample range.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0; bins.max(1)];
        if !values.is_empty() {
            let width = (hi - lo) / counts.len() as f64;
            for &x in values {
                let b = if width > 0.0 {
                    (((x - lo) / width) as usize).min(counts.len() - 1)
                } else {
                    0
                };
                counts[b] += 1;
            }
        }
        Histogram { lo, hi, counts }
    }
}

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryErrorField {
    pub values: Vec<f64>,
    pub summary: Quartiles,
    pub histogram: Histogram,
    /// `l_sym^(k)` of the generator over the samples.
    pub aggregate: f64,
}

/// Directional derivative of `h` along `v` at every sample, with summary
/// statistics.
pub fn symmetry_error_field<H: Hamiltonian>(
    h: &H,
    v: &AffineGenerator,
    samples: &[PhasePoint],
) -> Result<SymmetryErrorField> {
    let nu = norm(v);
    if nu == 0.0 {
        return Err(Error::ZeroGenerator);
    }
    let values = samples
        .par_iter()
        .map(|z| directional_derivative(v, &h.gradient(z)?, z))
        .collect::<Result<Vec<f64>>>()?;
    let aggregate = values.iter().map(|d| d * d).sum::<f64>() / values.len().max(1) as f64 / nu;
    Ok(SymmetryErrorField {
        summary: Quartiles::of(&values)?,
        histogram: Histogram::of(&values, HISTOGRAM_BINS),
        aggregate,
        values,
    })
}

/// Values of a Hamiltonian over a regular grid in two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetGrid {
    /// Indices of the free phase coordinates.
    pub axes: [usize; 2],
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major over `(x, y)`; `None` where the Hamiltonian is undefined.
    pub values: Vec<Vec<Option<f64>>>,
    /// Training region overlay, if known.
    pub domain: Option<SamplingDomain>,
}

impl LevelSetGrid {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "h"])?;
        for (i, x) in self.x.iter().enumerate() {
            for (j, y) in self.y.iter().enumerate() {
                let v = self.values[i][j].map(|v| v.to_string()).unwrap_or_default();
                w.write_record([x.to_string(), y.to_string(), v])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Axis specification for [`level_set_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub res: usize,
}

/// Evaluates `h` with coordinates `x.index` and `y.index` varied over a
/// grid and the rest taken from `base`.
pub fn level_set_grid<H: Hamiltonian>(
    h: &H,
    base: &PhasePoint,
    x: GridAxis,
    y: GridAxis,
) -> Result<LevelSetGrid> {
    let dim = base.as_slice().len();
    check_dim(2 * h.n(), dim)?;
    if x.res < 2 || y.res < 2 {
        return Err(Error::InvalidParameters("grid resolution must be at least 2".into()));
    }
    if x.index >= dim || y.index >= dim || x.index == y.index {
        return Err(Error::InvalidParameters(format!(
            "grid axes {} and {} must be distinct coordinates below {dim}",
            x.index, y.index
        )));
    }
    let line = |a: GridAxis| -> Vec<f64> {
        (0..a.res)
            .map(|i| a.lo + (a.hi - a.lo) * i as f64 / (a.res - 1) as f64)
            .collect()
    };
    let (xs, ys) = (line(x), line(y));
    let values = xs
        .par_iter()
        .map(|&xv| {
            ys.iter()
                .map(|&yv| {
                    let mut z = base.clone();
                    z.as_mut_slice()[x.index] = xv;
                    z.as_mut_slice()[y.index] = yv;
                    h.energy(&z).ok().filter(|e| e.is_finite())
                })
                .collect()
        })
        .collect();
    Ok(LevelSetGrid {
        axes: [x.index, y.index],
        x: xs,
        y: ys,
        values,
        domain: None,
    })
}

/// Absolute cosine of the angle between two generators.
pub fn generator_alignment(learned: &AffineGenerator, truth: &AffineGenerator) -> Result<f64> {
    let (a, b) = (norm(learned), norm(truth));
    if a == 0.0 || b == 0.0 {
        return Err(Error::ZeroGenerator);
    }
    Ok((inner_product(learned, truth)? / (a * b)).abs().min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// Defaults to the system's reference initial point.
    pub rollout_z0: Option<Vec<f64>>,
    /// Defaults to 60 s (cart-pendulum) or 20 s (two-body).
    pub rollout_horizon: Option<f64>,
    /// Defaults to 1/15 s (cart-pendulum) or 0.01 s (two-body).
    pub rollout_step: Option<f64>,
    /// Points per axis of the symmetry-loss grid and the level-set grids.
    pub grid_res: usize,
    /// Fresh random points for the symmetry-error statistics.
    pub samples: usize,
    pub seed: u64,
    /// Region for symmetry statistics; defaults to the widened training region.
    pub domain: Option<SamplingDomain>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            rollout_z0: None,
            rollout_horizon: None,
            rollout_step: None,
            grid_res: 8,
            samples: 1000,
            seed: 0,
            domain: None,
        }
    }
}

/// Reference rollout start, horizon and step for a system.
pub fn default_rollout(system: &SystemSpec) -> (Vec<f64>, f64, f64) {
    match system {
        SystemSpec::CartPendulum { .. } => (vec![0.0, 2.34, 0.49, 1.54], 60.0, 1.0 / 15.0),
        SystemSpec::TwoBody { .. } => (vec![7.0, 0.0, 1.72, 12.05], 20.0, 0.01),
    }
}

/// Default region for the symmetry-error statistics.
pub fn default_eval_domain(dataset: &SnapshotDataset) -> Result<SamplingDomain> {
    match dataset.meta.system {
        SystemSpec::CartPendulum { .. } => Ok(SamplingDomain::cart_pendulum_evaluation()),
        SystemSpec::TwoBody { .. } => default_mc_domain(&dataset.meta.system, dataset.train()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySummary {
    pub model: String,
    /// `true-<i>` for a true generator, `learned-<i>` for a learned one.
    pub generator: String,
    pub summary: Quartiles,
    pub histogram: Histogram,
    pub aggregate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub model: String,
    pub generator: usize,
    /// Best alignment with any true generator.
    pub alignment: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub model: String,
    pub error: Option<String>,
    pub max_abs_energy_shift: Option<f64>,
    /// Peak-to-peak Noether quantity of each true generator.
    pub conserved_peak_to_peak: Vec<f64>,
}

/// Quantitative part of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: SystemSpec,
    pub losses: Vec<LossRow>,
    pub alignments: Vec<Alignment>,
    pub symmetry: Vec<SymmetrySummary>,
    pub rollouts: Vec<RolloutSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hashes `paths`, recorded relative to `root` where possible.
    pub fn build(root: &Path, paths: &[PathBuf]) -> Result<Self> {
        let files = paths
            .iter()
            .map(|p| {
                let data = std::fs::read(p)?;
                Ok(ManifestEntry {
                    path: p
                        .strip_prefix(root)
                        .unwrap_or(p)
                        .to_string_lossy()
                        .replace('\\', "/"),
                    sha256: hex::encode(Sha256::digest(&data)),
                    bytes: data.len() as u64,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Manifest { files })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn write_series(path: &Path, header: [&str; 2], t: &[f64], v: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (a, b) in t.iter().zip(v) {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn level_set_axes(system: &SystemSpec, res: usize) -> [(PhasePoint, GridAxis, GridAxis, &'static str); 2] {
    use std::f64::consts::PI;
    let ax = |index, lo, hi| GridAxis { index, lo, hi, res };
    match system {
        SystemSpec::CartPendulum { .. } => [
            (PhasePoint::zeros(2), ax(0, -6.0, 6.0), ax(1, -1.2 * PI, 1.2 * PI), "q"),
            (PhasePoint::zeros(2), ax(2, -2.0, 2.0), ax(3, -2.0 * PI, 2.0 * PI), "p"),
        ],
        SystemSpec::TwoBody { .. } => [
            (PhasePoint::zeros(2), ax(0, -12.0, 12.0), ax(1, -12.0, 12.0), "q"),
            (
                PhasePoint::new(&[7.0, 0.0], &[0.0, 0.0]).expect("planar point"),
                ax(2, -20.0, 20.0),
                ax(3, -20.0, 20.0),
                "p",
            ),
        ],
    }
}

/// Runs every diagnostic and writes the report into `dir`. Returns the
/// quantitative summary and the manifest (also written as `manifest.json`).
pub fn write_report(
    models: &[&TrainedModel],
    dataset: &SnapshotDataset,
    spec: &EvalSpec,
    dir: &Path,
) -> Result<(EvalReport, Manifest)> {
    std::fs::create_dir_all(dir)?;
    let system = dataset.meta.system;
    let sys = system.build()?;
    let truths = sys.true_generators();
    let domain = match &spec.domain {
        Some(d) => d.clone(),
        None => default_eval_domain(dataset)?,
    };
    let mut files: Vec<PathBuf> = Vec::new();

    let train_domain = default_mc_domain(&system, dataset.train())?;
    let grid = train_domain.grid(spec.grid_res)?;
    let losses = loss_table(models, dataset, &grid)?;
    let p = dir.join("loss_table.csv");
    {
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["model", "train", "validation", "test", "sym_learned", "sym_true"])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &losses {
            w.write_record([
                r.model.clone(),
                r.train.to_string(),
                r.validation.to_string(),
                r.test.to_string(),
                opt(r.sym_learned),
                opt(r.sym_true),
            ])?;
        }
        w.flush()?;
    }
    files.push(p);

    let mut alignments = Vec::new();
    for m in models {
        for (i, v) in m.generators.iter().enumerate() {
            let best = truths
                .iter()
                .map(|t| generator_alignment(v, t))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            alignments.push(Alignment {
                model: m.mode.to_string(),
                generator: i,
                alignment: best,
                params: v.to_params(),
            });
        }
    }
    let p = dir.join("alignment.json");
    write_json(&p, &alignments)?;
    files.push(p);

    let samples = domain.sample(spec.samples, &mut stream_rng(spec.seed, Stream::Evaluation));
    let mut symmetry = Vec::new();
    for m in models {
        let Some(h) = m.hamiltonian() else { continue };
        let named = truths
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("true-{i}"), v.clone()))
            .chain(m.generators.iter().enumerate().map(|(i, v)| (format!("learned-{i}"), v.clone())));
        for (name, v) in named {
            let field = symmetry_error_field(h, &v.normalized()?, &samples)?;
            let p = dir.join(format!("symmetry_error_{}_{name}.csv", m.mode));
            let mut w = csv::Writer::from_path(&p)?;
            w.write_record(["value"])?;
            for x in &field.values {
                w.write_record([x.to_string()])?;
            }
            w.flush()?;
            files.push(p);
            symmetry.push(SymmetrySummary {
                model: m.mode.to_string(),
                generator: name,
                summary: field.summary,
                histogram: field.histogram,
                aggregate: field.aggregate,
            });
        }
    }
    let p = dir.join("symmetry_summary.json");
    write_json(&p, &symmetry)?;
    files.push(p);

    let (z0_default, horizon_default, step_default) = default_rollout(&system);
    let z0 = PhasePoint::from_vec(spec.rollout_z0.clone().unwrap_or(z0_default))?;
    check_dim(2 * sys.n(), z0.as_slice().len())?;
    let horizon = spec.rollout_horizon.unwrap_or(horizon_default);
    let step = spec.rollout_step.unwrap_or(step_default);
    let rollouts = rollout_compare(models, &sys, &z0, horizon, step);
    let mut rollout_summaries = Vec::new();
    for r in &rollouts {
        let mut summary = RolloutSummary {
            model: r.label.clone(),
            error: None,
            max_abs_energy_shift: None,
            conserved_peak_to_peak: Vec::new(),
        };
        match &r.result {
            Ok((traj, energy)) => {
                let p = dir.join(format!("rollout_{}.csv", r.label));
                traj.write_csv(&p)?;
                files.push(p);
                let p = dir.join(format!("energy_{}.csv", r.label));
                write_series(&p, ["t", "energy_shift"], &traj.times, energy)?;
                files.push(p);
                summary.max_abs_energy_shift = Some(energy.iter().fold(0.0, |m, e| m.max(e.abs())));
                for (i, v) in truths.iter().enumerate() {
                    let trace = conserved_trace(v, traj)?;
                    let p = dir.join(format!("conserved_{}_true-{i}.csv", r.label));
                    write_series(&p, ["t", "conserved"], &traj.times, &trace)?;
                    files.push(p);
                    summary.conserved_peak_to_peak.push(peak_to_peak(&trace));
                }
            }
            Err(e) => summary.error = Some(e.clone()),
        }
        rollout_summaries.push(summary);
    }

    let labelled: Vec<(String, &dyn Hamiltonian)> = std::iter::once(("true".to_string(), &sys as &dyn Hamiltonian))
        .chain(
            models
                .iter()
                .filter_map(|m| m.hamiltonian().map(|h| (m.mode.to_string(), h as &dyn Hamiltonian))),
        )
        .collect();
    for (label, h) in labelled {
        for (base, x, y, tag) in level_set_axes(&system, spec.grid_res.max(2) * 8) {
            let mut g = level_set_grid(&h, &base, x, y)?;
            g.domain = Some(train_domain.clone());
            let p = dir.join(format!("level_set_{label}_{tag}.csv"));
            g.write_csv(&p)?;
            files.push(p);
        }
    }

    let report = EvalReport {
        system,
        losses,
        alignments,
        symmetry,
        rollouts: rollout_summaries,
    };
    let p = dir.join("report.json");
    write_json(&p, &report)?;
    files.push(p);
    let manifest = Manifest::build(dir, &files)?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok((report, manifest))
}
