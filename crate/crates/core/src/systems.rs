//! Analytic reference systems used to generate data and to score learned
//! models. Gradients are written out in closed form so they stay independent
//! of the network differentiation code.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{AffineGenerator, PhasePoint, SymplecticMatrix};

/// Anything that provides an energy and its phase-space gradient.
pub trait Hamiltonian: Sync {
    /// Configuration dimension `n`.
    fn n(&self) -> usize;

    fn energy(&self, z: &PhasePoint) -> Result<f64>;

    /// `(grad_q H, grad_p H)` at `z`.
    fn gradient(&self, z: &PhasePoint) -> Result<Vec<f64>>;

    /// Hamiltonian vector field `J^-1 grad H = (grad_p H, -grad_q H)`.
    fn vector_field(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        let g = self.gradient(z)?;
        Ok(SymplecticMatrix::new(self.n()).apply_inverse(&g))
    }
}

impl<H: Hamiltonian + ?Sized> Hamiltonian for &H {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn energy(&self, z: &PhasePoint) -> Result<f64> {
        (**self).energy(z)
    }
    fn gradient(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        (**self).gradient(z)
    }
}

/// Radius below which the two-body potential is treated as singular.
pub const TWO_BODY_MIN_RADIUS: f64 = 1e-6;

/// Default gravitation constant of the two-body model.
pub const TWO_BODY_K: f64 = 1016.895;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Planar pendulum on a cart, `q = (s, phi)` with `phi` measured from the
    /// upright vertical.
    CartPendulum { m: f64, m0: f64, l: f64, g: f64 },
    /// Point mass orbiting a fixed centre.
    TwoBody { m: f64, k: f64 },
}

impl SystemSpec {
    pub fn cart_pendulum_default() -> Self {
        SystemSpec::CartPendulum {
            m: 1.0,
            m0: 1.0,
            l: 1.0,
            g: GRAVITY,
        }
    }

    pub fn two_body_default() -> Self {
        SystemSpec::TwoBody { m: 1.0, k: TWO_BODY_K }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemSpec::CartPendulum { .. } => "cart-pendulum",
            SystemSpec::TwoBody { .. } => "two-body",
        }
    }

    /// Default parameters for a system given by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cart-pendulum" => Ok(Self::cart_pendulum_default()),
            "two-body" => Ok(Self::two_body_default()),
            other => Err(Error::Config(format!("unknown system `{other}`"))),
        }
    }

    pub fn build(&self) -> Result<ReferenceSystem> {
        match *self {
            SystemSpec::CartPendulum { m, m0, l, g } => cart_pendulum(m, m0, l, g),
            SystemSpec::TwoBody { m, k } => two_body(m, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    CartPendulum { a: f64, b: f64, c: f64, d: f64 },
    TwoBody { m: f64, k: f64 },
}

/// A ground-truth Hamiltonian system together with its known symmetries.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSystem {
    spec: SystemSpec,
    model: Model,
    true_generators: Vec<AffineGenerator>,
}

/// `H = (a p_s^2 + 2 b p_s p_phi cos(phi) + c p_phi^2) / (2ac - b^2 cos^2(phi)) - D cos(phi)`
/// with `a = m l^2`, `b = m l`, `c = m0 + m`, `D = -m g l`.
pub fn cart_pendulum(m: f64, m0: f64, l: f64, g: f64) -> Result<ReferenceSystem> {
    if !(m > 0.0 && l > 0.0 && m0 >= 0.0) || !g.is_finite() {
        return Err(Error::InvalidParameters(format!(
            "cart-pendulum needs m > 0, l > 0, m0 >= 0 (got m={m}, m0={m0}, l={l}, g={g})"
        )));
    }
    let (a, b, c, d) = (m * l * l, m * l, m0 + m, -m * g * l);
    // the denominator is smallest at cos^2 = 1
    if 2.0 * a * c - b * b <= 0.0 {
        return Err(Error::InvalidParameters(
            "cart-pendulum denominator 2ac - b^2 vanishes".into(),
        ));
    }
    Ok(ReferenceSystem {
        spec: SystemSpec::CartPendulum { m, m0, l, g },
        model: Model::CartPendulum { a, b, c, d },
        true_generators: vec![AffineGenerator::translation(&[1.0, 0.0])],
    })
}

/// `H = |p|^2 / (2m) - k / |q|`.
pub fn two_body(m: f64, k: f64) -> Result<ReferenceSystem> {
    if !(m > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParameters(format!(
            "two-body needs m > 0 and finite k (got m={m}, k={k})"
        )));
    }
    Ok(ReferenceSystem {
        spec: SystemSpec::TwoBody { m, k },
        model: Model::TwoBody { m, k },
        true_generators: vec![AffineGenerator::rotation_2d()],
    })
}

impl ReferenceSystem {
    pub fn spec(&self) -> SystemSpec {
        self.spec
    }

    pub fn name(&self) -> &'static str {
        self.spec.name()
    }

    /// Unit-free basis of the known symmetry algebra.
    pub fn true_generators(&self) -> &[AffineGenerator] {
        &self.true_generators
    }

    fn radius(&self, z: &PhasePoint) -> Result<f64> {
        let r = z.q().iter().map(|x| x * x).sum::<f64>().sqrt();
        if r < TWO_BODY_MIN_RADIUS {
            return Err(Error::Domain {
                system: "two-body",
                reason: format!("|q| = {r:e} is below {TWO_BODY_MIN_RADIUS:e}"),
            });
        }
        Ok(r)
    }
}

impl Hamiltonian for ReferenceSystem {
    fn n(&self) -> usize {
        2
    }

    fn energy(&self, z: &PhasePoint) -> Result<f64> {
        check_dim(2, z.n())?;
        let p = z.p();
        match self.model {
            Model::CartPendulum { a, b, c, d } => {
                let phi = z.q()[1];
                let (ps, pphi) = (p[0], p[1]);
                let cos = phi.cos();
                let num = a * ps * ps + 2.0 * b * ps * pphi * cos + c * pphi * pphi;
                let den = 2.0 * a * c - b * b * cos * cos;
                Ok(num / den - d * cos)
            }
            Model::TwoBody { m, k } => {
                let r = self.radius(z)?;
                Ok(0.5 * (p[0] * p[0] + p[1] * p[1]) / m - k / r)
            }
        }
    }

    fn gradient(&self, z: &PhasePoint) -> Result<Vec<f64>> {
        check_dim(2, z.n())?;
        let (q, p) = (z.q(), z.p());
        match self.model {
            Model::CartPendulum { a, b, c, d } => {
                let phi = q[1];
                let (ps, pphi) = (p[0], p[1]);
                let (sin, cos) = phi.sin_cos();
                let num = a * ps * ps + 2.0 * b * ps * pphi * cos + c * pphi * pphi;
                let den = 2.0 * a * c - b * b * cos * cos;
                let dnum_dphi = -2.0 * b * ps * pphi * sin;
                let dden_dphi = 2.0 * b * b * cos * sin;
                let dh_dphi = (dnum_dphi * den - num * dden_dphi) / (den * den) + d * sin;
                let dh_dps = (2.0 * a * ps + 2.0 * b * pphi * cos) / den;
                let dh_dpphi = (2.0 * b * ps * cos + 2.0 * c * pphi) / den;
                Ok(vec![0.0, dh_dphi, dh_dps, dh_dpphi])
            }
            Model::TwoBody { m, k } => {
                let r = self.radius(z)?;
                let f = k / (r * r * r);
                Ok(vec![f * q[0], f * q[1], p[0] / m, p[1] / m])
            }
        }
    }
}
