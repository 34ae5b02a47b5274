//! Time integration: adaptive RK4 for data generation and the implicit
//! midpoint rule for structure-preserving rollouts.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::diffnet::VectorNet;
use crate::error::{check_dim, Error, Result};
use crate::geometry::PhasePoint;
use crate::systems::Hamiltonian;

/// Autonomous vector field `z -> dz/dt` on `R^dim`.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>>;
}

/// The Hamiltonian vector field `J^-1 grad H` of any [`Hamiltonian`].
pub struct HamiltonianField<H>(pub H);

impl<H: Hamiltonian> VectorField for HamiltonianField<H> {
    fn dim(&self) -> usize {
        2 * self.0.n()
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.0.vector_field(&PhasePoint::from_vec(z.to_vec())?)
    }
}

impl VectorField for VectorNet {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.forward(&PhasePoint::from_vec(z.to_vec())?)
    }
}

/// Wraps a closure as a field.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnField { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    pub provenance: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with columns `t, q1..qn, p1..pn`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(trajectory_header(self.states.first().map_or(0, |s| s.n())))?;
        for (t, z) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(z.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("q{i}")));
    h.extend((1..=n).map(|i| format!("p{i}")));
    h
}

fn axpy(z: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

fn sup_norm(z: &[f64]) -> f64 {
    z.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn all_finite(z: &[f64]) -> bool {
    z.iter().all(|x| x.is_finite())
}

/// One classical fourth-order Runge-Kutta step.
pub fn rk4_step(field: &dyn VectorField, z: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = field.eval(z)?;
    let k2 = field.eval(&axpy(z, 0.5 * h, &k1))?;
    let k3 = field.eval(&axpy(z, 0.5 * h, &k2))?;
    let k4 = field.eval(&axpy(z, h, &k3))?;
    Ok((0..z.len())
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Equally spaced sample times `0, 1/rate, ..` up to and including `t_end`
/// (within rounding).
pub fn sample_times(t_end: f64, rate: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0 && rate > 0.0) {
        return Err(Error::InvalidParameters(format!(
            "horizon and rate must be positive (got {t_end}, {rate})"
        )));
    }
    let count = (t_end * rate + 1e-9).floor() as usize;
    Ok((0..=count).map(|i| i as f64 / rate).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct Rk4Options {
    /// Target local error per step, relative to `max(1, |z|_inf)`.
    pub tolerance: f64,
    pub initial_step: f64,
    pub max_step: f64,
}

impl Default for Rk4Options {
    fn default() -> Self {
        Rk4Options {
            tolerance: 1e-10,
            initial_step: 1e-2,
            max_step: 0.1,
        }
    }
}

/// Adaptive RK4 with step halving/doubling driven by a Richardson error
/// estimate; returns the state at each requested time (`z0` is at `t = 0`).
pub fn rk4(
    field: &dyn VectorField,
    z0: &PhasePoint,
    times: &[f64],
    opts: Rk4Options,
) -> Result<Trajectory> {
    check_dim(field.dim(), z0.as_slice().len())?;
    if times.windows(2).any(|w| w[1] <= w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameters(
            "output times must be non-negative and strictly increasing".into(),
        ));
    }
    let mut t = 0.0;
    let mut z = z0.as_slice().to_vec();
    let mut h = opts.initial_step.min(opts.max_step);
    let mut out = Trajectory {
        times: Vec::with_capacity(times.len()),
        states: Vec::with_capacity(times.len()),
        provenance: "rk4".into(),
    };
    for &target in times {
        while t < target {
            let remaining = target - t;
            let clipped = h >= remaining;
            let step = if clipped { remaining } else { h };
            let full = rk4_step(field, &z, step);
            let half = rk4_step(field, &z, 0.5 * step)
                .and_then(|mid| rk4_step(field, &mid, 0.5 * step));
            let (full, half) = match (full, half) {
                (Ok(f), Ok(hf)) if all_finite(&f) && all_finite(&hf) => (f, hf),
                (Err(e @ Error::Domain { .. }), _) | (_, Err(e @ Error::Domain { .. }))
                    if step < 1e-12 =>
                {
                    return Err(e)
                }
                _ => {
                    h = 0.5 * step;
                    if h < 1e-12 * t.abs().max(1.0) {
                        return Err(Error::StepUnderflow { t });
                    }
                    continue;
                }
            };
            let err = full
                .iter()
                .zip(&half)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / 15.0;
            let scale = sup_norm(&z).max(1.0);
            if err <= opts.tolerance * scale {
                // local extrapolation: the two-half-step result corrected by the estimate
                z = half
                    .iter()
                    .zip(&full)
                    .map(|(hf, f)| hf + (hf - f) / 15.0)
                    .collect();
                t = if clipped { target } else { t + step };
                if err < opts.tolerance * scale / 32.0 && !clipped {
                    h = (2.0 * h).min(opts.max_step);
                }
            } else {
                h = 0.5 * step;
                if h < 1e-12 * t.abs().max(1.0) {
                    return Err(Error::StepUnderflow { t });
                }
            }
        }
        out.times.push(target);
        out.states.push(PhasePoint::from_vec(z.clone())?);
    }
    Ok(out)
}

/// Fixed-step RK4 over `[0, t_end]` with `round(t_end / h)` steps.
pub fn rk4_fixed(field: &dyn VectorField, z0: &PhasePoint, t_end: f64, h: f64) -> Result<Trajectory> {
    fixed_step(field, z0, t_end, h, "rk4-fixed", |z, k| rk4_step(field, z, h).map_err(|e| {
        if matches!(e, Error::Domain { .. }) {
            e
        } else {
            Error::NonFinite {
                context: format!("rk4 step {k}"),
            }
        }
    }))
}

fn fixed_step(
    field: &dyn VectorField,
    z0: &PhasePoint,
    t_end: f64,
    h: f64,
    provenance: &str,
    mut step: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<Trajectory> {
    check_dim(field.dim(), z0.as_slice().len())?;
    if !(h > 0.0 && t_end >= 0.0) {
        return Err(Error::InvalidParameters(format!(
            "need h > 0 and t_end >= 0 (got h={h}, t_end={t_end})"
        )));
    }
    let steps = (t_end / h).round() as usize;
    let mut out = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        provenance: provenance.into(),
    };
    let mut z = z0.as_slice().to_vec();
    out.times.push(0.0);
    out.states.push(z0.clone());
    for k in 0..steps {
        z = step(&z, k)?;
        if !all_finite(&z) {
            return Err(Error::NonFinite {
                context: format!("{provenance} step {k}"),
            });
        }
        out.times.push((k + 1) as f64 * h);
        out.states.push(PhasePoint::from_vec(z.clone())?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct MidpointOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MidpointOptions {
    fn default() -> Self {
        MidpointOptions {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

fn midpoint_residual(field: &dyn VectorField, z: &[f64], y: &[f64], h: f64) -> Result<Vec<f64>> {
    let mid: Vec<f64> = z.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
    let f = field.eval(&mid)?;
    Ok((0..z.len()).map(|i| y[i] - z[i] - h * f[i]).collect())
}

/// Solves `y = z + h f((z + y) / 2)`: fixed-point iteration, then Newton with
/// a finite-difference Jacobian when the iteration stalls or diverges.
/// `h` may be negative for backward integration.
pub fn midpoint_step(
    field: &dyn VectorField,
    z: &[f64],
    h: f64,
    step: usize,
    opts: MidpointOptions,
) -> Result<Vec<f64>> {
    let converged = |delta: f64, y: &[f64]| delta <= opts.tolerance * sup_norm(y).max(1.0);

    let f0 = field.eval(z)?;
    let mut y = axpy(z, h, &f0);
    let mut best = y.clone();
    let mut prev_delta = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let next = match midpoint_residual(field, z, &y, h) {
            Ok(res) => y.iter().zip(&res).map(|(a, r)| a - r).collect::<Vec<_>>(),
            Err(_) => break,
        };
        if !all_finite(&next) {
            break;
        }
        let delta = next
            .iter()
            .zip(&y)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        y = next;
        if converged(delta, &y) {
            return Ok(y);
        }
        if delta > prev_delta {
            break;
        }
        prev_delta = delta;
        best.clone_from(&y);
    }

    // Newton on G(y) = y - z - h f((z + y) / 2)
    let dim = z.len();
    let mut y = best;
    for _ in 0..opts.max_iterations {
        let g = midpoint_residual(field, z, &y, h).map_err(|_| Error::NonConvergence { step })?;
        let mid: Vec<f64> = z.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
        let mut jac = DMatrix::<f64>::identity(dim, dim);
        for j in 0..dim {
            let eps = 1e-7 * mid[j].abs().max(1.0);
            let mut plus = mid.clone();
            let mut minus = mid.clone();
            plus[j] += eps;
            minus[j] -= eps;
            let fp = field.eval(&plus).map_err(|_| Error::NonConvergence { step })?;
            let fm = field.eval(&minus).map_err(|_| Error::NonConvergence { step })?;
            for i in 0..dim {
                jac[(i, j)] -= 0.5 * h * (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
        let delta = jac
            .lu()
            .solve(&DVector::from_vec(g))
            .ok_or(Error::NonConvergence { step })?;
        for (yi, d) in y.iter_mut().zip(delta.iter()) {
            *yi -= d;
        }
        if !all_finite(&y) {
            return Err(Error::NonConvergence { step });
        }
        if converged(sup_norm(delta.as_slice()), &y) {
            return Ok(y);
        }
    }
    Err(Error::NonConvergence { step })
}

/// Implicit midpoint rollout over `[0, t_end]` with step `h`.
pub fn implicit_midpoint(
    field: &dyn VectorField,
    z0: &PhasePoint,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    implicit_midpoint_with(field, z0, t_end, h, MidpointOptions::default())
}

pub fn implicit_midpoint_with(
    field: &dyn VectorField,
    z0: &PhasePoint,
    t_end: f64,
    h: f64,
    opts: MidpointOptions,
) -> Result<Trajectory> {
    fixed_step(field, z0, t_end, h, "implicit-midpoint", |z, k| {
        midpoint_step(field, z, h, k, opts)
    })
}
