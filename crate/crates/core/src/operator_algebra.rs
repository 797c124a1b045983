//! Dense complex operators, Hilbert–Schmidt orthonormal operator bases and the
//! density-matrix ↔ coherence-vector isomorphism.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub(crate) const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub(crate) const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub(crate) const I: C64 = C64 { re: 0.0, im: 1.0 };

/// A dense `D x D` complex matrix: a state, a Hamiltonian or a jump operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch { expected: m.nrows(), found: m.ncols() });
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { what: "operator" });
        }
        Ok(Operator(m))
    }

    /// Wraps a matrix produced by internal arithmetic (square by construction).
    pub(crate) fn from_matrix(m: DMatrix<C64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        Operator(m)
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let d = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        Operator::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> =
            rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Operator::from_rows(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Operator(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Operator(DMatrix::zeros(dim, dim))
    }

    /// `|ket><bra|` for two state vectors.
    pub fn outer(ket: &DVector<C64>, bra: &DVector<C64>) -> Self {
        Operator(ket * bra.adjoint())
    }

    /// Projector onto a (not necessarily normalized) state vector.
    pub fn projector(psi: &DVector<C64>) -> Self {
        let n = psi.norm();
        let psi = psi / C64::new(n, 0.0);
        Operator::outer(&psi, &psi)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn adjoint(&self) -> Self {
        Operator(self.0.adjoint())
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scale(&self, z: C64) -> Self {
        Operator(&self.0 * z)
    }

    pub fn scale_real(&self, x: f64) -> Self {
        self.scale(C64::new(x, 0.0))
    }

    /// Frobenius norm of `A - A†`.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.0 - self.0.adjoint()).norm()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// `(A + A†) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Operator((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// Hilbert–Schmidt inner product `Tr[A† B]`.
    pub fn hs_inner(&self, other: &Operator) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn distance(&self, other: &Operator) -> f64 {
        (&self.0 - &other.0).norm()
    }

    fn check_same_dim(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(())
    }

    /// Real eigenvalues of the hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let eig = self.hermitian_part().0.symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim())
                .map(|j| {
                    let z = self.0[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl<'a> Add<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn add(self, rhs: &'a Operator) -> Operator {
        Operator(&self.0 + &rhs.0)
    }
}

impl<'a> Sub<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn sub(self, rhs: &'a Operator) -> Operator {
        Operator(&self.0 - &rhs.0)
    }
}

impl<'a> Mul<&'a Operator> for &'a Operator {
    type Output = Operator;
    fn mul(self, rhs: &'a Operator) -> Operator {
        Operator(&self.0 * &rhs.0)
    }
}

impl Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator(-&self.0)
    }
}

#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    dim: usize,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

pub(crate) fn split_re_im(m: &DMatrix<C64>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let re = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect()).collect();
    let im = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect()).collect();
    (re, im)
}

pub(crate) fn join_re_im(dim: usize, re: &[Vec<f64>], im: &[Vec<f64>]) -> Option<DMatrix<C64>> {
    let shape_ok = |a: &[Vec<f64>]| a.len() == dim && a.iter().all(|r| r.len() == dim);
    if !shape_ok(re) || !shape_ok(im) {
        return None;
    }
    Some(DMatrix::from_fn(dim, dim, |i, j| C64::new(re[i][j], im[i][j])))
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (re, im) = split_re_im(&self.0);
        OperatorRepr { dim: self.dim(), re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = OperatorRepr::deserialize(d)?;
        let m = join_re_im(r.dim, &r.re, &r.im)
            .ok_or_else(|| serde::de::Error::custom("operator re/im arrays do not match dim"))?;
        Operator::new(m).map_err(serde::de::Error::custom)
    }
}

/// Pauli matrices and qubit ladder operators in the `(|↑>, |↓>)` = `(|0>, |1>)` ordering.
pub mod pauli {
    use super::*;

    pub fn sigma_x() -> Operator {
        Operator::from_matrix(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
    }

    pub fn sigma_y() -> Operator {
        Operator::from_matrix(DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]))
    }

    pub fn sigma_z() -> Operator {
        Operator::from_matrix(DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]))
    }

    /// `σ⁺ = |↑><↓|`.
    pub fn sigma_plus() -> Operator {
        Operator::from_matrix(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]))
    }

    /// `σ⁻ = |↓><↑|`.
    pub fn sigma_minus() -> Operator {
        Operator::from_matrix(DMatrix::from_row_slice(2, 2, &[ZERO, ZERO, ONE, ZERO]))
    }

    /// `v · σ` for a real 3-vector.
    pub fn dot_sigma(v: [f64; 3]) -> Operator {
        let x = sigma_x().scale_real(v[0]);
        let y = sigma_y().scale_real(v[1]);
        let z = sigma_z().scale_real(v[2]);
        &(&x + &y) + &z
    }

    /// Single-site operator for each letter of `IXYZ`.
    pub(crate) fn letter(k: usize) -> Operator {
        match k {
            0 => Operator::identity(2),
            1 => sigma_x(),
            2 => sigma_y(),
            _ => sigma_z(),
        }
    }
}

/// Tensor product `a ⊗ b`.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    Operator::from_matrix(a.0.kronecker(&b.0))
}

/// `[a, b] = ab - ba`.
pub fn commutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.check_same_dim(b)?;
    Ok(Operator(&a.0 * &b.0 - &b.0 * &a.0))
}

/// `{a, b} = ab + ba`.
pub fn anticommutator(a: &Operator, b: &Operator) -> Result<Operator> {
    a.check_same_dim(b)?;
    Ok(Operator(&a.0 * &b.0 + &b.0 * &a.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// Normalized Pauli strings `P / √D`, identity first.
    Pauli,
    /// Matrix units `|i><j|` in row-major order.
    Units,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pauli" => Ok(BasisKind::Pauli),
            "units" => Ok(BasisKind::Units),
            other => Err(Error::Config(format!("unknown basis kind `{other}`"))),
        }
    }
}

/// An ordered Hilbert–Schmidt orthonormal basis of `D x D` operators.
#[derive(Clone, Debug)]
pub struct HermitianBasis {
    dim: usize,
    kind: BasisKind,
    elements: Vec<Operator>,
}

impl HermitianBasis {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dim2(&self) -> usize {
        self.dim * self.dim
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn elements(&self) -> &[Operator] {
        &self.elements
    }

    pub fn element(&self, j: usize) -> &Operator {
        &self.elements[j]
    }

    /// Largest deviation of the Gram matrix `Tr[σ_i† σ_j]` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.elements.iter().enumerate() {
            for (j, b) in self.elements.iter().enumerate() {
                let target = if i == j { ONE } else { ZERO };
                worst = worst.max((a.hs_inner(b) - target).norm());
            }
        }
        worst
    }

    /// Coherence vector of the identity operator (trace functional direction).
    pub(crate) fn identity_vector(&self) -> DVector<C64> {
        vectorize_unchecked(&Operator::identity(self.dim), self)
    }
}

/// Builds the operator basis of the requested kind.
///
/// Pauli bases require `dim` to be a power of two; strings are ordered
/// lexicographically with `I < X < Y < Z` and the first site most significant.
pub fn build_basis(dim: usize, kind: BasisKind) -> Result<HermitianBasis> {
    if dim < 2 {
        return Err(Error::UnsupportedDimension { dim, reason: "dimension must be at least 2" });
    }
    let elements = match kind {
        BasisKind::Units => {
            let mut els = Vec::with_capacity(dim * dim);
            for i in 0..dim {
                for j in 0..dim {
                    let mut m = DMatrix::zeros(dim, dim);
                    m[(i, j)] = ONE;
                    els.push(Operator(m));
                }
            }
            els
        }
        BasisKind::Pauli => {
            if !dim.is_power_of_two() {
                return Err(Error::UnsupportedDimension {
                    dim,
                    reason: "pauli basis requires a power-of-two dimension",
                });
            }
            let sites = dim.trailing_zeros() as usize;
            let norm = 1.0 / (dim as f64).sqrt();
            (0..dim * dim)
                .map(|code| {
                    let mut op = Operator::identity(1);
                    for site in 0..sites {
                        let letter = (code >> (2 * (sites - 1 - site))) & 3;
                        op = kron(&op, &pauli::letter(letter));
                    }
                    op.scale_real(norm)
                })
                .collect()
        }
    };
    Ok(HermitianBasis { dim, kind, elements })
}

/// Length-`D²` coordinate vector `ρ_j = Tr[σ_j† ρ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceVector(DVector<C64>);

impl CoherenceVector {
    pub fn new(v: DVector<C64>) -> Self {
        CoherenceVector(v)
    }

    pub fn dim2(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<C64> {
        self.0
    }

    pub fn max_imag(&self) -> f64 {
        self.0.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
struct VectorRepr {
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for CoherenceVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VectorRepr { re: self.0.iter().map(|z| z.re).collect(), im: self.0.iter().map(|z| z.im).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoherenceVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = VectorRepr::deserialize(d)?;
        if r.re.len() != r.im.len() {
            return Err(serde::de::Error::custom("coherence vector re/im lengths differ"));
        }
        Ok(CoherenceVector(DVector::from_iterator(
            r.re.len(),
            r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b)),
        )))
    }
}

fn vectorize_unchecked(rho: &Operator, basis: &HermitianBasis) -> DVector<C64> {
    DVector::from_iterator(basis.dim2(), basis.elements.iter().map(|s| s.hs_inner(rho)))
}

pub fn vectorize(rho: &Operator, basis: &HermitianBasis) -> Result<CoherenceVector> {
    if rho.dim() != basis.dim {
        return Err(Error::DimensionMismatch { expected: basis.dim, found: rho.dim() });
    }
    Ok(CoherenceVector(vectorize_unchecked(rho, basis)))
}

/// `ρ = Σ_j v_j σ_j`.
pub fn devectorize(v: &CoherenceVector, basis: &HermitianBasis) -> Result<Operator> {
    devectorize_slice(&v.0, basis)
}

pub(crate) fn devectorize_slice(v: &DVector<C64>, basis: &HermitianBasis) -> Result<Operator> {
    if v.len() != basis.dim2() {
        return Err(Error::DimensionMismatch { expected: basis.dim2(), found: v.len() });
    }
    let mut m = DMatrix::zeros(basis.dim, basis.dim);
    for (c, s) in v.iter().zip(&basis.elements) {
        if *c != ZERO {
            m += &s.0 * *c;
        }
    }
    Ok(Operator(m))
}
