//! Initial-condition sampling, snapshot datasets and their on-disk format.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::PhasePoint;
use crate::integrators::{rk4, sample_times, HamiltonianField, Rk4Options};
use crate::rng::{stream_rng, Stream};
use crate::systems::{Hamiltonian, ReferenceSystem, SystemSpec};

/// Region of phase space used for sampling initials or Monte-Carlo points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplingDomain {
    /// Axis-aligned box over all `2n` phase coordinates.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Planar annulus in `q` (uniform by area) times a momentum box.
    Annulus {
        r_min: f64,
        r_max: f64,
        p_lower: Vec<f64>,
        p_upper: Vec<f64>,
    },
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<()> {
    check_dim(lower.len(), upper.len())?;
    if lower.iter().zip(upper).all(|(l, u)| l < u && l.is_finite() && u.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameters(format!(
            "box bounds must be finite and ordered: {lower:?} / {upper:?}"
        )))
    }
}

fn widen(lower: &[f64], upper: &[f64], factor: f64) -> (Vec<f64>, Vec<f64>) {
    lower
        .iter()
        .zip(upper)
        .map(|(l, u)| {
            let (c, h) = (0.5 * (l + u), 0.5 * (u - l) * factor);
            (c - h, c + h)
        })
        .unzip()
}

/// `res` equally spaced points spanning `[lo, hi]`.
fn linspace(lo: f64, hi: f64, res: usize) -> impl Iterator<Item = f64> {
    (0..res).map(move |i| lo + (hi - lo) * i as f64 / (res - 1) as f64)
}

/// Cartesian product of per-axis point lists, last axis fastest.
fn tensor_grid(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect()
    })
}

impl SamplingDomain {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = SamplingDomain::Box { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn annulus(r_min: f64, r_max: f64, p_lower: Vec<f64>, p_upper: Vec<f64>) -> Result<Self> {
        let d = SamplingDomain::Annulus {
            r_min,
            r_max,
            p_lower,
            p_upper,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingDomain::Box { lower, upper } => {
                check_bounds(lower, upper)?;
                if lower.is_empty() || lower.len() % 2 != 0 {
                    return Err(Error::InvalidParameters(format!(
                        "box needs an even, nonzero number of coordinates (got {})",
                        lower.len()
                    )));
                }
                Ok(())
            }
            SamplingDomain::Annulus {
                r_min,
                r_max,
                p_lower,
                p_upper,
            } => {
                if !(0.0 <= *r_min && r_min < r_max && r_max.is_finite()) {
                    return Err(Error::InvalidParameters(format!(
                        "annulus needs 0 <= r_min < r_max (got {r_min}, {r_max})"
                    )));
                }
                check_dim(2, p_lower.len())?;
                check_bounds(p_lower, p_upper)
            }
        }
    }

    /// Training box of the cart-pendulum experiments.
    pub fn cart_pendulum_training() -> Self {
        SamplingDomain::Box {
            lower: vec![-5.0, -PI, -1.0, -PI],
            upper: vec![5.0, PI, 1.0, PI],
        }
    }

    /// Evaluation box: the training `q` box widened by 1.2 and the larger
    /// momentum range `|p_s| < 2`, `|p_phi| < 2 pi`.
    pub fn cart_pendulum_evaluation() -> Self {
        SamplingDomain::Box {
            lower: vec![-6.0, -1.2 * PI, -2.0, -2.0 * PI],
            upper: vec![6.0, 1.2 * PI, 2.0, 2.0 * PI],
        }
    }

    /// Annulus covering the radii and momentum components seen in `points`,
    /// widened about its centre by `factor`.
    pub fn two_body_from_points(points: &[PhasePoint], factor: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("no points to derive a domain from".into()));
        }
        let mut r = (f64::INFINITY, f64::NEG_INFINITY);
        let mut lo = vec![f64::INFINITY; 2];
        let mut hi = vec![f64::NEG_INFINITY; 2];
        for z in points {
            check_dim(2, z.n())?;
            let rad = z.q()[0].hypot(z.q()[1]);
            r = (r.0.min(rad), r.1.max(rad));
            for i in 0..2 {
                lo[i] = lo[i].min(z.p()[i]);
                hi[i] = hi[i].max(z.p()[i]);
            }
        }
        SamplingDomain::annulus(r.0, r.1, lo, hi)?.extended(factor)
    }

    /// Phase-space dimension `2n`.
    pub fn dim(&self) -> usize {
        match self {
            SamplingDomain::Box { lower, .. } => lower.len(),
            SamplingDomain::Annulus { .. } => 4,
        }
    }

    /// Scales every interval about its midpoint (radii too, clamped at 0).
    pub fn extended(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::InvalidParameters(format!(
                "extension factor must be positive (got {factor})"
            )));
        }
        match self {
            SamplingDomain::Box { lower, upper } => {
                let (lower, upper) = widen(lower, upper, factor);
                SamplingDomain::new_box(lower, upper)
            }
            SamplingDomain::Annulus {
                r_min,
                r_max,
                p_lower,
                p_upper,
            } => {
                let (r_lo, r_hi) = widen(&[*r_min], &[*r_max], factor);
                let (pl, pu) = widen(p_lower, p_upper, factor);
                SamplingDomain::annulus(r_lo[0].max(0.0), r_hi[0], pl, pu)
            }
        }
    }

    pub fn contains(&self, z: &PhasePoint) -> bool {
        let inside = |x: &[f64], l: &[f64], u: &[f64]| {
            x.iter().zip(l).zip(u).all(|((x, l), u)| l <= x && x <= u)
        };
        match self {
            SamplingDomain::Box { lower, upper } => {
                z.as_slice().len() == lower.len() && inside(z.as_slice(), lower, upper)
            }
            SamplingDomain::Annulus {
                r_min,
                r_max,
                p_lower,
                p_upper,
            } => {
                if z.n() != 2 {
                    return false;
                }
                let r = z.q()[0].hypot(z.q()[1]);
                *r_min <= r && r <= *r_max && inside(z.p(), p_lower, p_upper)
            }
        }
    }

    /// `count` uniform samples.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<PhasePoint> {
        let uniform = |rng: &mut dyn FnMut() -> f64, l: f64, u: f64| l + (u - l) * rng();
        (0..count)
            .map(|_| {
                let mut draw = || rng.random::<f64>();
                let z = match self {
                    SamplingDomain::Box { lower, upper } => lower
                        .iter()
                        .zip(upper)
                        .map(|(&l, &u)| uniform(&mut draw, l, u))
                        .collect(),
                    SamplingDomain::Annulus {
                        r_min,
                        r_max,
                        p_lower,
                        p_upper,
                    } => {
                        let r = uniform(&mut draw, r_min * r_min, r_max * r_max).sqrt();
                        let th = uniform(&mut draw, -PI, PI);
                        let mut z = vec![r * th.cos(), r * th.sin()];
                        z.extend(
                            p_lower
                                .iter()
                                .zip(p_upper)
                                .map(|(&l, &u)| uniform(&mut draw, l, u)),
                        );
                        z
                    }
                };
                PhasePoint::from_vec(z).expect("domain dimension is even")
            })
            .collect()
    }

    /// Regular grid with `res` points per axis (polar in `q` for annuli).
    pub fn grid(&self, res: usize) -> Result<Vec<PhasePoint>> {
        if res < 2 {
            return Err(Error::InvalidParameters(format!(
                "grid resolution must be at least 2 (got {res})"
            )));
        }
        let points = match self {
            SamplingDomain::Box { lower, upper } => {
                let axes: Vec<Vec<f64>> = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| linspace(l, u, res).collect())
                    .collect();
                tensor_grid(&axes)
            }
            SamplingDomain::Annulus {
                r_min,
                r_max,
                p_lower,
                p_upper,
            } => {
                let mut axes = vec![
                    linspace(*r_min, *r_max, res).collect(),
                    (0..res).map(|i| 2.0 * PI * i as f64 / res as f64).collect(),
                ];
                axes.extend(
                    p_lower
                        .iter()
                        .zip(p_upper)
                        .map(|(&l, &u)| linspace(l, u, res).collect()),
                );
                tensor_grid(&axes)
                    .into_iter()
                    .map(|g| vec![g[0] * g[1].cos(), g[0] * g[1].sin(), g[2], g[3]])
                    .collect()
            }
        };
        points.into_iter().map(PhasePoint::from_vec).collect()
    }
}

pub fn sample_cart_pendulum_initials(count: usize, seed: u64) -> Vec<PhasePoint> {
    SamplingDomain::cart_pendulum_training().sample(count, &mut stream_rng(seed, Stream::Initials))
}

/// Radius and speed ranges for two-body initial conditions. The speed factor
/// `u` multiplies the circular-orbit momentum `sqrt(k / r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBodyInitialRule {
    pub r_min: f64,
    pub r_max: f64,
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for TwoBodyInitialRule {
    fn default() -> Self {
        TwoBodyInitialRule {
            r_min: 5.0,
            r_max: 10.0,
            u_min: 0.7,
            u_max: 1.3,
        }
    }
}

impl TwoBodyInitialRule {
    /// Only circular orbits.
    pub fn circular() -> Self {
        TwoBodyInitialRule {
            u_min: 1.0,
            u_max: 1.0,
            ..Default::default()
        }
    }
}

pub fn sample_two_body_initials(count: usize, k: f64, seed: u64) -> Vec<PhasePoint> {
    sample_two_body_initials_with(count, k, TwoBodyInitialRule::default(), seed)
}

pub fn sample_two_body_initials_with(
    count: usize,
    k: f64,
    rule: TwoBodyInitialRule,
    seed: u64,
) -> Vec<PhasePoint> {
    let mut rng = stream_rng(seed, Stream::Initials);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    (0..count)
        .map(|_| {
            let r = lerp(rule.r_min, rule.r_max, rng.random::<f64>());
            let th = lerp(-PI, PI, rng.random::<f64>());
            let u = lerp(rule.u_min, rule.u_max, rng.random::<f64>());
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let speed = sign * u * (k / r).sqrt();
            let (s, c) = th.sin_cos();
            PhasePoint::new(&[r * c, r * s], &[-speed * s, speed * c]).expect("planar point")
        })
        .collect()
}

pub fn monte_carlo_phase_samples(domain: &SamplingDomain, count: usize, seed: u64) -> Vec<PhasePoint> {
    domain.sample(count, &mut stream_rng(seed, Stream::MonteCarlo))
}

/// State and (possibly noisy) observed vector field at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub z: PhasePoint,
    pub zdot: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// 70 / 15 / 15 with rounding; the test part takes the remainder.
    pub fn for_total(total: usize) -> Self {
        let train = (0.70 * total as f64).round() as usize;
        let validation = ((0.15 * total as f64).round() as usize).min(total - train);
        SplitSizes {
            train,
            validation,
            test: total - train - validation,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub system: SystemSpec,
    pub horizon: f64,
    pub rate: f64,
    pub noise_var: f64,
    pub seed: u64,
    pub trajectories: usize,
    pub dropped_trajectories: usize,
    pub split: SplitSizes,
}

/// Shuffled snapshot records; the first `split.train` are training data,
/// followed by the validation and test parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDataset {
    pub records: Vec<Snapshot>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

/// Integrates every initial with RK4, samples at `rate` over `horizon`
/// (both endpoints included), adds Gaussian noise to the vector field,
/// shuffles and splits. Trajectories that fail to integrate are dropped.
pub fn build_dataset(
    sys: &ReferenceSystem,
    initials: &[PhasePoint],
    horizon: f64,
    rate: f64,
    noise_var: f64,
    seed: u64,
) -> Result<SnapshotDataset> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidParameters(format!(
            "noise variance must be non-negative (got {noise_var})"
        )));
    }
    let times = sample_times(horizon, rate)?;
    let field = HamiltonianField(sys);
    let per_traj: Vec<Option<Vec<Snapshot>>> = initials
        .par_iter()
        .enumerate()
        .map(|(i, z0)| {
            let traj = rk4(&field, z0, &times, Rk4Options::default()).and_then(|traj| {
                traj.times
                    .iter()
                    .zip(traj.states)
                    .map(|(&t, z)| {
                        let zdot = sys.vector_field(&z)?;
                        Ok(Snapshot { t, z, zdot })
                    })
                    .collect::<Result<Vec<_>>>()
            });
            match traj {
                Ok(s) => Some(s),
                Err(e) => {
                    warn!("dropping trajectory {i}: {e}");
                    None
                }
            }
        })
        .collect();
    let dropped = per_traj.iter().filter(|t| t.is_none()).count();
    let mut records: Vec<Snapshot> = per_traj.into_iter().flatten().flatten().collect();
    if records.is_empty() {
        return Err(Error::Empty("every trajectory failed to integrate".into()));
    }

    if noise_var > 0.0 {
        let normal = Normal::new(0.0, noise_var.sqrt())
            .map_err(|e| Error::InvalidParameters(e.to_string()))?;
        let mut rng = stream_rng(seed, Stream::Noise);
        for r in &mut records {
            for x in &mut r.zdot {
                *x += normal.sample(&mut rng);
            }
        }
    }
    records.shuffle(&mut stream_rng(seed, Stream::Shuffle));

    let split = SplitSizes::for_total(records.len());
    Ok(SnapshotDataset {
        meta: DatasetMeta {
            system: sys.spec(),
            horizon,
            rate,
            noise_var,
            seed,
            trajectories: initials.len() - dropped,
            dropped_trajectories: dropped,
            split,
        },
        records,
    })
}

/// Default initials for the given system.
pub fn sample_initials(spec: &SystemSpec, count: usize, seed: u64) -> Vec<PhasePoint> {
    match *spec {
        SystemSpec::CartPendulum { .. } => sample_cart_pendulum_initials(count, seed),
        SystemSpec::TwoBody { k, .. } => sample_two_body_initials(count, k, seed),
    }
}

impl SnapshotDataset {
    pub fn n(&self) -> usize {
        self.records.first().map_or(0, |r| r.z.n())
    }

    pub fn part(&self, split: Split) -> &[Snapshot] {
        let s = self.meta.split;
        match split {
            Split::Train => &self.records[..s.train],
            Split::Validation => &self.records[s.train..s.train + s.validation],
            Split::Test => &self.records[s.train + s.validation..],
        }
    }

    pub fn train(&self) -> &[Snapshot] {
        self.part(Split::Train)
    }

    pub fn validation(&self) -> &[Snapshot] {
        self.part(Split::Validation)
    }

    pub fn test(&self) -> &[Snapshot] {
        self.part(Split::Test)
    }

    /// Path of the metadata document that accompanies `path`.
    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the records as CSV to `path` and the metadata next to it.
    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(snapshot_header(n))?;
        for r in &self.records {
            let row = std::iter::once(r.t)
                .chain(r.z.as_slice().iter().copied())
                .chain(r.zdot.iter().copied())
                .map(|x| x.to_string());
            w.write_record(row)?;
        }
        w.flush()?;
        std::fs::write(
            Self::meta_path(path),
            serde_json::to_string_pretty(&self.meta)? + "\n",
        )?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let format_err = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let meta_path = Self::meta_path(path);
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::Format {
                path: meta_path.clone(),
                reason: e.to_string(),
            })?;
        let n = match meta.system {
            SystemSpec::CartPendulum { .. } | SystemSpec::TwoBody { .. } => 2,
        };
        let mut rd = csv::Reader::from_path(path)?;
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != snapshot_header(n) {
            return Err(format_err(format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (line, row) in rd.records().enumerate() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| format_err(format!("record {}: {e}", line + 1)))?;
            records.push(Snapshot {
                t: vals[0],
                z: PhasePoint::from_vec(vals[1..1 + 2 * n].to_vec())?,
                zdot: vals[1 + 2 * n..].to_vec(),
            });
        }
        if records.len() != meta.split.total() {
            return Err(Error::Mismatch(format!(
                "{} records but metadata lists {}",
                records.len(),
                meta.split.total()
            )));
        }
        Ok(SnapshotDataset { records, meta })
    }
}

fn snapshot_header(n: usize) -> Vec<String> {
    let mut h = crate::integrators::trajectory_header(n);
    h.extend((1..=n).map(|i| format!("qdot{i}")));
    h.extend((1..=n).map(|i| format!("pdot{i}")));
    h
}
