//! Training objectives and their gradients. Dynamics losses are means over
//! samples of the squared Euclidean residual.

use rayon::prelude::*;

use crate::datagen::Snapshot;
use crate::dense::Mat;
use crate::diffnet::{ScalarNet, VectorNet};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{
    directional_derivative, directional_derivative_generator_gradient, fundamental_vector_field,
    inner_product, norm, AffineGenerator, PhasePoint,
};
use crate::systems::Hamiltonian;

/// Samples per gradient chunk. Chunks are reduced in order, so results do
/// not depend on the thread count.
pub const CHUNK: usize = 256;

fn nonempty<T>(batch: &[T], what: &str) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Empty(format!("{what} batch")))
    } else {
        Ok(())
    }
}

fn input_matrix(rows: &[&Snapshot], dim: usize) -> Mat {
    let mut m = Mat::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(r.z.as_slice());
    }
    m
}

fn sum_in_order(parts: Vec<(f64, Option<Vec<f64>>)>, len: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; len];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        if let Some(g) = g {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
    }
    (loss, grad)
}

/// Squared residual of Hamilton's equations for one sample, and the residual
/// adjoint `dL/d grad H` (times `scale`).
fn hamilton_residual(grad_h: &[f64], zdot: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let n = grad_h.len() / 2;
    let (gq, gp) = grad_h.split_at(n);
    let mut loss = 0.0;
    let mut adj = vec![0.0; 2 * n];
    for i in 0..n {
        let rq = zdot[i] - gp[i];
        let rp = zdot[n + i] + gq[i];
        loss += rq * rq + rp * rp;
        adj[i] = 2.0 * rp * scale;
        adj[n + i] = -2.0 * rq * scale;
    }
    (loss, adj)
}

fn dynamics_chunk(
    net: &ScalarNet,
    rows: &[&Snapshot],
    scale: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let dim = net.mlp().input_dim();
    let tape = net.gradient_tape(&input_matrix(rows, dim))?;
    let mut loss = 0.0;
    let mut adj = Mat::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        check_dim(dim, r.zdot.len())?;
        let (l, a) = hamilton_residual(tape.gradient(i), &r.zdot, scale);
        loss += l;
        adj.row_mut(i).copy_from_slice(&a);
    }
    let grad = if want_grad {
        Some(net.backprop_through_gradient(&tape, &vec![0.0; rows.len()], &adj)?)
    } else {
        None
    };
    Ok((loss, grad))
}

/// Mean squared residual `|zdot - J^-1 grad H(z)|^2` and, if requested, its
/// parameter gradient.
pub fn dynamics_loss_grad(
    net: &ScalarNet,
    batch: &[&Snapshot],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch, "dynamics")?;
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_chunks(CHUNK)
        .map(|c| dynamics_chunk(net, c, scale, want_grad))
        .collect::<Result<Vec<_>>>()?;
    let (sum, grad) = sum_in_order(parts, net.mlp().num_params());
    Ok((sum * scale, grad))
}

fn vectorfield_chunk(
    net: &VectorNet,
    rows: &[&Snapshot],
    scale: f64,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let dim = net.mlp().input_dim();
    let x = input_matrix(rows, dim);
    let residual = |i: usize, y: &[f64]| {
        let zdot = &rows[i].zdot;
        let mut l = 0.0;
        let adj = y
            .iter()
            .zip(zdot)
            .map(|(a, b)| {
                l += (a - b) * (a - b);
                2.0 * (a - b) * scale
            })
            .collect::<Vec<_>>();
        (l, adj)
    };
    if want_grad {
        let (l, g) = net.loss_parameter_gradient(&x, residual)?;
        Ok((l, Some(g)))
    } else {
        let y = net.forward_batch(&x)?;
        Ok(((0..rows.len()).map(|i| residual(i, y.row(i)).0).sum(), None))
    }
}

/// Mean over samples of `|f_theta(z) - zdot|^2` for a direct vector-field
/// model.
pub fn vectorfield_loss_grad(
    net: &VectorNet,
    batch: &[&Snapshot],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    nonempty(batch, "vector-field")?;
    if let Some(r) = batch.iter().find(|r| r.zdot.len() != 2 * net.n()) {
        return Err(Error::DimensionMismatch {
            expected: 2 * net.n(),
            got: r.zdot.len(),
        });
    }
    let scale = 1.0 / batch.len() as f64;
    let parts = batch
        .par_chunks(CHUNK)
        .map(|c| vectorfield_chunk(net, c, scale, want_grad))
        .collect::<Result<Vec<_>>>()?;
    let (sum, grad) = sum_in_order(parts, net.mlp().num_params());
    Ok((sum * scale, grad))
}

pub fn loss_vectorfield(net: &VectorNet, batch: &[Snapshot]) -> Result<f64> {
    let refs: Vec<&Snapshot> = batch.iter().collect();
    Ok(vectorfield_loss_grad(net, &refs, false)?.0)
}

/// Value of the combined symmetry objective together with its gradients
/// with respect to the network parameters and each generator's parameters.
#[derive(Debug, Clone)]
pub struct SymmetryGradient {
    pub loss: f64,
    /// Per-generator `l_sym^(k)` without the orthonormality penalties.
    pub per_generator: Vec<f64>,
    pub net: Vec<f64>,
    pub generators: Vec<Vec<f64>>,
}

fn weight(w: &[f64], k: usize) -> f64 {
    w.get(k).copied().unwrap_or(1.0)
}

/// `sum_k [ l_sym^(k) + alpha_k (|v_k| - 1)^2 + beta_k sum_{s<k} <v_k, v_s>^2 ]`
/// with `l_sym^(k) = mean_i |v_k(z_i) . grad H(z_i)|^2 / |v_k|`. Missing
/// weights default to 1.
pub fn symmetry_loss_grad(
    net: &ScalarNet,
    generators: &[AffineGenerator],
    mc: &[PhasePoint],
    alpha: &[f64],
    beta: &[f64],
    want_grad: bool,
) -> Result<SymmetryGradient> {
    nonempty(generators, "generator")?;
    nonempty(mc, "Monte-Carlo")?;
    let dim = net.mlp().input_dim();
    let tape = net.gradient_tape(&Mat::from_rows(mc, dim))?;
    let s = mc.len() as f64;
    let mut adj = Mat::zeros(mc.len(), dim);
    let mut gen_grads: Vec<Vec<f64>> = generators.iter().map(|v| vec![0.0; v.param_len()]).collect();
    let mut per_generator = Vec::with_capacity(generators.len());
    let mut loss = 0.0;
    let norms = check_generators(generators)?;

    for (k, (v, &nu)) in generators.iter().zip(&norms).enumerate() {
        let params = v.to_params();
        let mut mean_sq = 0.0;
        let mut dgen = vec![0.0; params.len()];
        for (i, z) in mc.iter().enumerate() {
            let g = tape.gradient(i);
            let field = fundamental_vector_field(v, z)?;
            let d: f64 = field.iter().zip(g).map(|(f, g)| f * g).sum();
            mean_sq += d * d / s;
            if want_grad {
                let c = 2.0 * d / (nu * s);
                adj.row_mut(i)
                    .iter_mut()
                    .zip(&field)
                    .for_each(|(a, f)| *a += c * f);
                let dd = directional_derivative_generator_gradient(g, z)?.to_params();
                dgen.iter_mut().zip(&dd).for_each(|(a, b)| *a += c * b);
            }
        }
        let sym_k = mean_sq / nu;
        per_generator.push(sym_k);
        let a_k = weight(alpha, k);
        let b_k = weight(beta, k);
        loss += sym_k + a_k * (nu - 1.0).powi(2);
        if want_grad {
            // d(1/|v|) = -v / |v|^3 and d|v| = v / |v|
            let coef = -mean_sq / nu.powi(3) + 2.0 * a_k * (nu - 1.0) / nu;
            for (g, (d, p)) in gen_grads[k].iter_mut().zip(dgen.iter().zip(&params)) {
                *g += d + coef * p;
            }
        }
        for (sidx, w) in generators[..k].iter().enumerate() {
            let ip = inner_product(v, w)?;
            loss += b_k * ip * ip;
            if want_grad {
                let wp = w.to_params();
                for (g, x) in gen_grads[k].iter_mut().zip(&wp) {
                    *g += 2.0 * b_k * ip * x;
                }
                for (g, x) in gen_grads[sidx].iter_mut().zip(&params) {
                    *g += 2.0 * b_k * ip * x;
                }
            }
        }
    }

    let net_grad = if want_grad {
        net.backprop_through_gradient(&tape, &vec![0.0; mc.len()], &adj)?
    } else {
        Vec::new()
    };
    Ok(SymmetryGradient {
        loss,
        per_generator,
        net: net_grad,
        generators: gen_grads,
    })
}

fn check_generators(generators: &[AffineGenerator]) -> Result<Vec<f64>> {
    generators
        .iter()
        .map(|v| {
            let nu = norm(v);
            if nu == 0.0 || !nu.is_finite() {
                Err(Error::ZeroGenerator)
            } else {
                Ok(nu)
            }
        })
        .collect()
}

/// Per-generator `l_sym^(k)` of any Hamiltonian over the sample points.
pub fn symmetry_losses<H: Hamiltonian>(
    h: &H,
    generators: &[AffineGenerator],
    mc: &[PhasePoint],
) -> Result<Vec<f64>> {
    nonempty(mc, "Monte-Carlo")?;
    let norms = check_generators(generators)?;
    let grads = mc.iter().map(|z| h.gradient(z)).collect::<Result<Vec<_>>>()?;
    generators
        .iter()
        .zip(norms)
        .map(|(v, nu)| {
            let mut mean_sq = 0.0;
            for (z, g) in mc.iter().zip(&grads) {
                let d = directional_derivative(v, g, z)?;
                mean_sq += d * d;
            }
            Ok(mean_sq / mc.len() as f64 / nu)
        })
        .collect()
}

/// `l_sym^(k)` for a single generator.
pub fn loss_sym_k<H: Hamiltonian>(h: &H, v: &AffineGenerator, mc: &[PhasePoint]) -> Result<f64> {
    Ok(symmetry_losses(h, std::slice::from_ref(v), mc)?[0])
}

/// Orthonormality penalties `sum_k alpha_k (|v_k| - 1)^2 + beta_k sum_{s<k} <v_k, v_s>^2`.
pub fn orthonormality_penalty(generators: &[AffineGenerator], alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let mut p = 0.0;
    for (k, v) in generators.iter().enumerate() {
        p += weight(alpha, k) * (norm(v) - 1.0).powi(2);
        for w in &generators[..k] {
            p += weight(beta, k) * inner_product(v, w)?.powi(2);
        }
    }
    Ok(p)
}

pub fn loss_sym_total<H: Hamiltonian>(
    h: &H,
    generators: &[AffineGenerator],
    mc: &[PhasePoint],
    alpha: &[f64],
    beta: &[f64],
) -> Result<f64> {
    nonempty(generators, "generator")?;
    let sym: f64 = symmetry_losses(h, generators, mc)?.iter().sum();
    Ok(sym + orthonormality_penalty(generators, alpha, beta)?)
}

/// Mean squared residual of Hamilton's equations for any Hamiltonian.
pub fn loss_dynamics<H: Hamiltonian>(h: &H, batch: &[Snapshot]) -> Result<f64> {
    nonempty(batch, "dynamics")?;
    let mut sum = 0.0;
    for r in batch {
        check_dim(2 * h.n(), r.zdot.len())?;
        sum += hamilton_residual(&h.gradient(&r.z)?, &r.zdot, 0.0).0;
    }
    Ok(sum / batch.len() as f64)
}

/// `l_dynamics + delta * l_sym`; the symmetry part is skipped entirely when
/// `delta == 0` or there are no generators.
pub fn total_loss<H: Hamiltonian>(
    h: &H,
    generators: &[AffineGenerator],
    batch: &[Snapshot],
    mc: &[PhasePoint],
    delta: f64,
    alpha: &[f64],
    beta: &[f64],
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameters(format!("delta must be >= 0 (got {delta})")));
    }
    let dynamics = loss_dynamics(h, batch)?;
    if delta == 0.0 || generators.is_empty() {
        return Ok(dynamics);
    }
    Ok(dynamics + delta * loss_sym_total(h, generators, mc, alpha, beta)?)
}
