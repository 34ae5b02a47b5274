//! Affine Lie-algebra machinery on configuration space `Q = R^n` and its
//! cotangent-lifted action on phase space `T*Q = R^2n`.
//!
//! A generator `v = (M, b)` of `aff(Q)` is embedded as the `(n+1) x (n+1)`
//! matrix `[[M, b], [0, 0]]`. The lifted action of a group element `(A, c)` is
//! `(q, p) -> (A^-1 (q - c), A^T p)`, whose infinitesimal generator is the
//! fundamental field `(-M q - b, M^T p)`.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A point `z = (q, p)` of phase space, stored contiguously as `[q.., p..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhasePoint(Vec<f64>);

impl PhasePoint {
    pub fn new(q: &[f64], p: &[f64]) -> Result<Self> {
        check_dim(q.len(), p.len())?;
        let mut z = Vec::with_capacity(2 * q.len());
        z.extend_from_slice(q);
        z.extend_from_slice(p);
        Ok(PhasePoint(z))
    }

    /// Wraps a flat `[q.., p..]` vector; the length must be even.
    pub fn from_vec(z: Vec<f64>) -> Result<Self> {
        if !z.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                expected: z.len() + 1,
                got: z.len(),
            });
        }
        Ok(PhasePoint(z))
    }

    pub fn zeros(n: usize) -> Self {
        PhasePoint(vec![0.0; 2 * n])
    }

    /// Configuration dimension `n`.
    pub fn n(&self) -> usize {
        self.0.len() / 2
    }

    pub fn q(&self) -> &[f64] {
        &self.0[..self.n()]
    }

    pub fn p(&self) -> &[f64] {
        &self.0[self.n()..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PhasePoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// The canonical structure matrix `J = [[0, -I], [I, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticMatrix {
    pub n: usize,
}

impl SymplecticMatrix {
    pub fn new(n: usize) -> Self {
        SymplecticMatrix { n }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(2 * n, 2 * n, |i, j| {
            if i < n && j == i + n {
                -1.0
            } else if i >= n && j + n == i {
                1.0
            } else {
                0.0
            }
        })
    }

    /// `J^-1 g = (g_p, -g_q)`; maps a gradient to the Hamiltonian vector field.
    pub fn apply_inverse(&self, grad: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = Vec::with_capacity(2 * n);
        out.extend_from_slice(&grad[n..2 * n]);
        out.extend(grad[..n].iter().map(|g| -g));
        out
    }
}

/// Lie-algebra element `(M, b)` of `aff(Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GeneratorRecord", into = "GeneratorRecord")]
pub struct AffineGenerator {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Flat on-disk form of a generator: `M` is stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorRecord {
    n: usize,
    #[serde(rename = "M")]
    m: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<GeneratorRecord> for AffineGenerator {
    type Error = Error;

    fn try_from(rec: GeneratorRecord) -> Result<Self> {
        check_dim(rec.n * rec.n, rec.m.len())?;
        check_dim(rec.n, rec.b.len())?;
        Ok(AffineGenerator {
            m: DMatrix::from_row_slice(rec.n, rec.n, &rec.m),
            b: DVector::from_vec(rec.b),
        })
    }
}

impl From<AffineGenerator> for GeneratorRecord {
    fn from(v: AffineGenerator) -> Self {
        let n = v.n();
        GeneratorRecord {
            n,
            m: v.m.transpose().as_slice().to_vec(),
            b: v.b.as_slice().to_vec(),
        }
    }
}

impl AffineGenerator {
    pub fn new(m: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        check_dim(m.nrows(), b.len())?;
        Ok(AffineGenerator { m, b })
    }

    /// Builds a generator from a row-major matrix and a translation.
    pub fn from_rows(n: usize, m_rows: &[f64], b: &[f64]) -> Result<Self> {
        check_dim(n * n, m_rows.len())?;
        check_dim(n, b.len())?;
        Ok(AffineGenerator {
            m: DMatrix::from_row_slice(n, n, m_rows),
            b: DVector::from_column_slice(b),
        })
    }

    pub fn zero(n: usize) -> Self {
        AffineGenerator {
            m: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
        }
    }

    pub fn translation(b: &[f64]) -> Self {
        let n = b.len();
        AffineGenerator {
            m: DMatrix::zeros(n, n),
            b: DVector::from_column_slice(b),
        }
    }

    /// Planar rotation generator `[[0, -1], [1, 0]]`.
    pub fn rotation_2d() -> Self {
        AffineGenerator {
            m: DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
            b: DVector::zeros(2),
        }
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// Number of free parameters, `n^2 + n`.
    pub fn param_len(&self) -> usize {
        let n = self.n();
        n * n + n
    }

    /// Parameters in `[M row-major.., b..]` order.
    pub fn to_params(&self) -> Vec<f64> {
        let mut out = self.m.transpose().as_slice().to_vec();
        out.extend_from_slice(self.b.as_slice());
        out
    }

    pub fn from_params(n: usize, params: &[f64]) -> Result<Self> {
        check_dim(n * n + n, params.len())?;
        Self::from_rows(n, &params[..n * n], &params[n * n..])
    }

    pub fn scaled(&self, s: f64) -> Self {
        AffineGenerator {
            m: &self.m * s,
            b: &self.b * s,
        }
    }

    /// Returns `v / |v|`, or an error for the zero generator.
    pub fn normalized(&self) -> Result<Self> {
        let nv = norm(self);
        if nv == 0.0 {
            return Err(Error::ZeroGenerator);
        }
        Ok(self.scaled(1.0 / nv))
    }

    /// The `(n+1) x (n+1)` matrix `[[M, b], [0, 0]]`.
    pub fn embedding(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut e = DMatrix::zeros(n + 1, n + 1);
        e.view_mut((0, 0), (n, n)).copy_from(&self.m);
        e.view_mut((0, n), (n, 1)).copy_from(&self.b);
        e
    }
}

impl Add for &AffineGenerator {
    type Output = AffineGenerator;

    fn add(self, rhs: &AffineGenerator) -> AffineGenerator {
        AffineGenerator {
            m: &self.m + &rhs.m,
            b: &self.b + &rhs.b,
        }
    }
}

impl Sub for &AffineGenerator {
    type Output = AffineGenerator;

    fn sub(self, rhs: &AffineGenerator) -> AffineGenerator {
        AffineGenerator {
            m: &self.m - &rhs.m,
            b: &self.b - &rhs.b,
        }
    }
}

impl Mul<f64> for &AffineGenerator {
    type Output = AffineGenerator;

    fn mul(self, s: f64) -> AffineGenerator {
        self.scaled(s)
    }
}

/// A group element `(A, c)` acting on `Q` by `q -> A q + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl AffineMap {
    pub fn identity(n: usize) -> Self {
        AffineMap {
            a: DMatrix::identity(n, n),
            c: DVector::zeros(n),
        }
    }

    /// Group inverse `(A^-1, -A^-1 c)`.
    pub fn inverse(&self) -> Result<Self> {
        let a_inv = self.a.clone().try_inverse().ok_or(Error::SingularMatrix)?;
        let c = -(&a_inv * &self.c);
        Ok(AffineMap { a: a_inv, c })
    }
}

/// Frobenius inner product of the matrices plus Euclidean inner product of
/// the translations.
pub fn inner_product(v1: &AffineGenerator, v2: &AffineGenerator) -> Result<f64> {
    check_dim(v1.n(), v2.n())?;
    Ok(v1.m.dot(&v2.m) + v1.b.dot(&v2.b))
}

pub fn norm(v: &AffineGenerator) -> f64 {
    (v.m.norm_squared() + v.b.norm_squared()).sqrt()
}

/// Fundamental vector field `(-M q - b, M^T p)` of `v` at `z`.
pub fn fundamental_vector_field(v: &AffineGenerator, z: &PhasePoint) -> Result<Vec<f64>> {
    let n = v.n();
    check_dim(n, z.n())?;
    let (q, p) = (z.q(), z.p());
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let mut dq = -v.b[i];
        let mut dp = 0.0;
        for j in 0..n {
            dq -= v.m[(i, j)] * q[j];
            dp += v.m[(j, i)] * p[j];
        }
        out[i] = dq;
        out[n + i] = dp;
    }
    Ok(out)
}

/// Lie derivative of `H` along the fundamental field of `v`, given
/// `grad_h = (grad_q H, grad_p H)` at `z`.
pub fn directional_derivative(v: &AffineGenerator, grad_h: &[f64], z: &PhasePoint) -> Result<f64> {
    check_dim(2 * v.n(), grad_h.len())?;
    let field = fundamental_vector_field(v, z)?;
    Ok(field.iter().zip(grad_h).map(|(f, g)| f * g).sum())
}

/// Gradient of [`directional_derivative`] with respect to the generator
/// entries, returned as a generator-shaped tangent.
pub fn directional_derivative_generator_gradient(
    grad_h: &[f64],
    z: &PhasePoint,
) -> Result<AffineGenerator> {
    let n = z.n();
    check_dim(2 * n, grad_h.len())?;
    let (q, p) = (z.q(), z.p());
    let (gq, gp) = grad_h.split_at(n);
    let m = DMatrix::from_fn(n, n, |i, j| -gq[i] * q[j] + p[i] * gp[j]);
    let b = DVector::from_fn(n, |i, _| -gq[i]);
    Ok(AffineGenerator { m, b })
}

/// Bracket of the `(n+1) x (n+1)` embeddings: `(M1 M2 - M2 M1, M1 b2 - M2 b1)`.
pub fn lie_bracket(v1: &AffineGenerator, v2: &AffineGenerator) -> Result<AffineGenerator> {
    check_dim(v1.n(), v2.n())?;
    Ok(AffineGenerator {
        m: &v1.m * &v2.m - &v2.m * &v1.m,
        b: &v1.m * &v2.b - &v2.m * &v1.b,
    })
}

const EXP_TAYLOR_ORDER: usize = 18;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn matrix_exp(x: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = x.nrows();
    // 1-norm (max column sum) bounds the spectral radius
    let norm1 = x
        .column_iter()
        .map(|c| c.iter().map(|e| e.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = x * 0.5f64.powi(squarings);
    let mut term = DMatrix::identity(dim, dim);
    let mut sum = DMatrix::identity(dim, dim);
    for k in 1..=EXP_TAYLOR_ORDER {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `exp(t v)` as an affine map `(A, c)`.
pub fn exp_generator(v: &AffineGenerator, t: f64) -> AffineMap {
    let n = v.n();
    let e = matrix_exp(&(v.embedding() * t));
    AffineMap {
        a: e.view((0, 0), (n, n)).into_owned(),
        c: e.view((0, n), (n, 1)).column(0).into_owned(),
    }
}

/// Cotangent lift `(q, p) -> (A^-1 (q - c), A^T p)`.
pub fn cotangent_lift(g: &AffineMap, z: &PhasePoint) -> Result<PhasePoint> {
    let n = g.c.len();
    check_dim(n, z.n())?;
    let lu = g.a.clone().lu();
    let shifted = DVector::from_column_slice(z.q()) - &g.c;
    let q = lu.solve(&shifted).ok_or(Error::SingularMatrix)?;
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    let p = g.a.transpose() * DVector::from_column_slice(z.p());
    PhasePoint::new(q.as_slice(), p.as_slice())
}

/// Noether quantity `I(q, p) = p^T (-M q - b)` associated with `v`.
pub fn conserved_quantity(v: &AffineGenerator, z: &PhasePoint) -> Result<f64> {
    let field = fundamental_vector_field(v, z)?;
    let n = v.n();
    Ok(z.p().iter().zip(&field[..n]).map(|(p, f)| p * f).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rot() -> AffineGenerator {
        AffineGenerator::rotation_2d()
    }

    fn gen_strategy() -> impl Strategy<Value = AffineGenerator> {
        proptest::collection::vec(-2.0f64..2.0, 6)
            .prop_map(|x| AffineGenerator::from_params(2, &x).unwrap())
    }

    #[test]
    fn inner_product_examples() {
        let id = AffineGenerator::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(inner_product(&id, &id).unwrap(), 2.0);

        let ex = AffineGenerator::translation(&[1.0, 0.0]);
        let ey = AffineGenerator::translation(&[0.0, 1.0]);
        assert_eq!(inner_product(&ex, &ey).unwrap(), 0.0);

        let a = AffineGenerator::from_rows(2, &[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0]).unwrap();
        let b = AffineGenerator::from_rows(2, &[1.0, 0.0, 0.0, 1.0], &[2.0, 0.0]).unwrap();
        assert_eq!(inner_product(&a, &b).unwrap(), 7.0);
    }

    #[test]
    fn inner_product_rejects_mixed_dimensions() {
        let a = AffineGenerator::zero(2);
        let b = AffineGenerator::zero(3);
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&AffineGenerator::translation(&[1.0, 0.0])), 1.0);
        assert_eq!(norm(&AffineGenerator::zero(2)), 0.0);
        assert_abs_diff_eq!(norm(&rot()), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn fundamental_field_examples() {
        let z = PhasePoint::new(&[3.0, 4.0], &[5.0, 6.0]).unwrap();
        let f = fundamental_vector_field(&AffineGenerator::translation(&[1.0, 0.0]), &z).unwrap();
        assert_eq!(f, vec![-1.0, 0.0, 0.0, 0.0]);

        let z = PhasePoint::new(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let f = fundamental_vector_field(&rot(), &z).unwrap();
        assert_eq!(f, vec![0.0, -1.0, 1.0, 0.0]);

        let f = fundamental_vector_field(&AffineGenerator::zero(2), &z).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn directional_derivative_examples() {
        let z = PhasePoint::new(&[0.3, -1.2], &[2.0, 0.5]).unwrap();
        let tx = AffineGenerator::translation(&[1.0, 0.0]);
        assert_eq!(directional_derivative(&tx, &[0.0, 3.5, 1.0, -2.0], &z).unwrap(), 0.0);
        let zero = AffineGenerator::zero(2);
        assert_eq!(directional_derivative(&zero, &[1.0, 2.0, 3.0, 4.0], &z).unwrap(), 0.0);
        assert!(directional_derivative(&tx, &[1.0, 2.0], &z).is_err());
    }

    #[test]
    fn bracket_examples() {
        let t1 = AffineGenerator::translation(&[1.0, 2.0]);
        let t2 = AffineGenerator::translation(&[-3.0, 0.5]);
        assert_eq!(lie_bracket(&t1, &t2).unwrap(), AffineGenerator::zero(2));

        let ex = AffineGenerator::translation(&[1.0, 0.0]);
        let br = lie_bracket(&rot(), &ex).unwrap();
        assert_eq!(br, AffineGenerator::translation(&[0.0, 1.0]));

        let v = AffineGenerator::from_rows(2, &[1.0, 2.0, -1.0, 0.5], &[0.2, 0.3]).unwrap();
        assert_eq!(norm(&lie_bracket(&v, &v).unwrap()), 0.0);
    }

    #[test]
    fn exp_examples() {
        let g = exp_generator(&AffineGenerator::translation(&[2.0, -1.0]), 1.0);
        assert_abs_diff_eq!(g.a, DMatrix::identity(2, 2), epsilon = 1e-15);
        assert_abs_diff_eq!(g.c, DVector::from_vec(vec![2.0, -1.0]), epsilon = 1e-15);

        let g = exp_generator(&rot(), std::f64::consts::FRAC_PI_2);
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(g.a, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(g.c.norm(), 0.0, epsilon = 1e-15);

        let v = AffineGenerator::from_rows(2, &[0.4, -3.0, 1.0, 2.0], &[5.0, 1.0]).unwrap();
        let g = exp_generator(&v, 0.0);
        assert_eq!(g, AffineMap::identity(2));
    }

    #[test]
    fn exp_of_large_generator_matches_rotation_closed_form() {
        let t = 7.3;
        let g = exp_generator(&rot(), t);
        let expected = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        assert_abs_diff_eq!(g.a, expected, epsilon = 1e-12);
    }

    #[test]
    fn cotangent_lift_examples() {
        let z = PhasePoint::new(&[1.5, -2.0], &[0.25, 4.0]).unwrap();
        let shift = AffineMap {
            a: DMatrix::identity(2, 2),
            c: DVector::from_vec(vec![0.5, 1.0]),
        };
        let out = cotangent_lift(&shift, &z).unwrap();
        assert_eq!(out.as_slice(), &[1.0, -3.0, 0.25, 4.0]);

        let a = AffineMap {
            a: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -0.5, 3.0]),
            c: DVector::zeros(2),
        };
        let back = AffineMap {
            a: a.a.clone().try_inverse().unwrap(),
            c: DVector::zeros(2),
        };
        let round = cotangent_lift(&back, &cotangent_lift(&a, &z).unwrap()).unwrap();
        for (x, y) in round.as_slice().iter().zip(z.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }

        let singular = AffineMap {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]),
            c: DVector::zeros(2),
        };
        assert!(matches!(
            cotangent_lift(&singular, &z),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn conserved_quantity_examples() {
        let z = PhasePoint::new(&[0.7, 1.1], &[-0.4, 2.5]).unwrap();
        let tx = AffineGenerator::translation(&[1.0, 0.0]);
        assert_eq!(conserved_quantity(&tx, &z).unwrap(), 0.4);

        let z = PhasePoint::new(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(conserved_quantity(&rot(), &z).unwrap(), -1.0);
        assert_eq!(conserved_quantity(&AffineGenerator::zero(2), &z).unwrap(), 0.0);
    }

    #[test]
    fn generator_record_is_row_major() {
        let v = AffineGenerator::from_rows(2, &[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0]).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"n":2,"M":[1.0,2.0,3.0,4.0],"b":[5.0,6.0]}"#);
        let back: AffineGenerator = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<AffineGenerator>(r#"{"n":2,"M":[1.0],"b":[5.0,6.0]}"#).is_err());
    }

    #[test]
    fn symplectic_matrix_identities() {
        let j = SymplecticMatrix::new(3).to_matrix();
        assert_eq!(&j + j.transpose(), DMatrix::zeros(6, 6));
        assert_eq!(&j * &j, -DMatrix::<f64>::identity(6, 6));
        let g = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let via_matrix = -(&j * DVector::from_column_slice(&g));
        assert_eq!(SymplecticMatrix::new(3).apply_inverse(&g), via_matrix.as_slice());
    }

    proptest! {
        #[test]
        fn inner_product_symmetric_bilinear(
            a in gen_strategy(), b in gen_strategy(), c in gen_strategy(), s in -3.0f64..3.0
        ) {
            let ab = inner_product(&a, &b).unwrap();
            prop_assert!((ab - inner_product(&b, &a).unwrap()).abs() < 1e-12);
            let lhs = inner_product(&(&(&a * s) + &c), &b).unwrap();
            let rhs = s * ab + inner_product(&c, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert!(norm(&(&a + &b)) <= norm(&a) + norm(&b) + 1e-12);
        }

        #[test]
        fn bracket_antisymmetric_and_jacobi(
            a in gen_strategy(), b in gen_strategy(), c in gen_strategy()
        ) {
            let ab = lie_bracket(&a, &b).unwrap();
            let ba = lie_bracket(&b, &a).unwrap();
            prop_assert!(norm(&(&ab + &ba)) < 1e-12);
            let jac = &(&lie_bracket(&a, &lie_bracket(&b, &c).unwrap()).unwrap()
                + &lie_bracket(&b, &lie_bracket(&c, &a).unwrap()).unwrap())
                + &lie_bracket(&c, &lie_bracket(&a, &b).unwrap()).unwrap();
            prop_assert!(norm(&jac) < 1e-12);
        }

        #[test]
        fn bracket_matches_embedding_commutator(a in gen_strategy(), b in gen_strategy()) {
            let (ea, eb) = (a.embedding(), b.embedding());
            let comm = &ea * &eb - &eb * &ea;
            let br = lie_bracket(&a, &b).unwrap().embedding();
            prop_assert!((comm - br).abs().max() < 1e-12);
        }

        #[test]
        fn field_is_linear_in_generator(
            a in gen_strategy(), b in gen_strategy(),
            s in -2.0f64..2.0, t in -2.0f64..2.0,
            z in proptest::collection::vec(-3.0f64..3.0, 4)
        ) {
            let z = PhasePoint::from_vec(z).unwrap();
            let combo = &(&a * s) + &(&b * t);
            let lhs = fundamental_vector_field(&combo, &z).unwrap();
            let fa = fundamental_vector_field(&a, &z).unwrap();
            let fb = fundamental_vector_field(&b, &z).unwrap();
            for i in 0..4 {
                prop_assert!((lhs[i] - (s * fa[i] + t * fb[i])).abs() < 1e-12);
            }
        }

        #[test]
        fn generator_gradient_matches_linear_form(
            a in gen_strategy(),
            z in proptest::collection::vec(-3.0f64..3.0, 4),
            g in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            // d is linear in v, so <grad_v d, v> = d
            let z = PhasePoint::from_vec(z).unwrap();
            let d = directional_derivative(&a, &g, &z).unwrap();
            let grad = directional_derivative_generator_gradient(&g, &z).unwrap();
            prop_assert!((inner_product(&grad, &a).unwrap() - d).abs() < 1e-10);
        }
    }
}
