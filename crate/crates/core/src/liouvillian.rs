//! Lindblad generators, their supermatrix representation in an operator basis,
//! and time-dependent driving protocols.

mod protocol;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::operator_algebra::{
    anticommutator, commutator, join_re_im, split_re_im, BasisKind, HermitianBasis, Operator, I,
};

pub use protocol::{
    DrivingProtocol, JumpSample, ProtocolConfig, ProtocolKind, TabulatedSample,
    TabulatedSchedule,
};

/// Tolerance on the anti-hermitian part of a Hamiltonian, relative to its norm.
const HERMITIAN_TOL: f64 = 1e-12;

/// One dissipative channel `γ (Γ ρ Γ† - ½{Γ†Γ, ρ})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpChannel {
    pub operator: Operator,
    pub rate: f64,
}

/// Hamiltonian (angular-frequency units, ħ = 1) plus jump channels with
/// explicit non-negative rates.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    hamiltonian: Operator,
    jumps: Vec<JumpChannel>,
}

impl GeneratorSpec {
    pub fn new(hamiltonian: Operator, jumps: Vec<JumpChannel>) -> Result<Self> {
        let d = hamiltonian.dim();
        let asym = hamiltonian.hermiticity_error();
        if asym > HERMITIAN_TOL * hamiltonian.frobenius_norm().max(1.0) {
            return Err(Error::NonHermitianHamiltonian { asymmetry: asym });
        }
        for (k, j) in jumps.iter().enumerate() {
            if j.operator.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: j.operator.dim() });
            }
            if !(j.rate >= 0.0) || !j.rate.is_finite() {
                return Err(Error::NegativeRate { channel: k, rate: j.rate });
            }
        }
        Ok(GeneratorSpec { hamiltonian, jumps })
    }

    /// Purely Hamiltonian generator `-i[H, ·]`.
    pub fn hamiltonian_only(hamiltonian: Operator) -> Result<Self> {
        GeneratorSpec::new(hamiltonian, Vec::new())
    }

    /// Purely dissipative generator.
    pub fn dissipative(dim: usize, jumps: Vec<JumpChannel>) -> Result<Self> {
        GeneratorSpec::new(Operator::zeros(dim), jumps)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[JumpChannel] {
        &self.jumps
    }

    /// Adds `extra` to the Hamiltonian part (used for Hamiltonian corrections).
    pub fn with_extra_hamiltonian(&self, extra: &Operator) -> Result<Self> {
        GeneratorSpec::new(&self.hamiltonian + extra, self.jumps.clone())
    }
}

/// Applies the Lindblad superoperator to an arbitrary operator.
pub fn apply_lindblad(gen: &GeneratorSpec, rho: &Operator) -> Result<Operator> {
    if rho.dim() != gen.dim() {
        return Err(Error::DimensionMismatch { expected: gen.dim(), found: rho.dim() });
    }
    let mut out = commutator(&gen.hamiltonian, rho)?.scale(-I);
    for (k, ch) in gen.jumps.iter().enumerate() {
        if ch.rate < 0.0 {
            return Err(Error::NegativeRate { channel: k, rate: ch.rate });
        }
        if ch.rate == 0.0 {
            continue;
        }
        let g = &ch.operator;
        let gd = g.adjoint();
        let sandwich = &(g * rho) * &gd;
        let anti = anticommutator(&(&gd * g), rho)?;
        let term = &sandwich - &anti.scale_real(0.5);
        out = &out + &term.scale_real(ch.rate);
    }
    Ok(out)
}

/// Dense `D² x D²` matrix of a superoperator in a fixed operator basis.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperMatrix {
    matrix: DMatrix<C64>,
    basis: Option<BasisKind>,
}

impl SuperMatrix {
    /// Wraps a raw square matrix (no operator basis attached).
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: matrix.ncols() });
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { what: "supermatrix" });
        }
        Ok(SuperMatrix { matrix, basis: None })
    }

    pub(crate) fn with_basis(matrix: DMatrix<C64>, basis: Option<BasisKind>) -> Self {
        SuperMatrix { matrix, basis }
    }

    pub fn zeros(dim2: usize, basis: Option<BasisKind>) -> Self {
        SuperMatrix { matrix: DMatrix::zeros(dim2, dim2), basis }
    }

    pub fn dim2(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn basis_kind(&self) -> Option<BasisKind> {
        self.basis
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }

    pub fn distance(&self, other: &SuperMatrix) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }

    pub fn add(&self, other: &SuperMatrix) -> SuperMatrix {
        SuperMatrix { matrix: &self.matrix + &other.matrix, basis: self.basis.or(other.basis) }
    }

    pub fn scale(&self, x: f64) -> SuperMatrix {
        SuperMatrix { matrix: &self.matrix * C64::new(x, 0.0), basis: self.basis }
    }

    /// Largest modulus in the first row (the trace direction in a pauli basis).
    pub fn first_row_norm(&self) -> f64 {
        self.matrix.row(0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[derive(Serialize, Deserialize)]
struct SuperMatrixRepr {
    dim2: usize,
    basis_kind: Option<BasisKind>,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl Serialize for SuperMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let (re, im) = split_re_im(&self.matrix);
        SuperMatrixRepr { dim2: self.dim2(), basis_kind: self.basis, re, im }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SuperMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SuperMatrixRepr::deserialize(d)?;
        let m = join_re_im(r.dim2, &r.re, &r.im)
            .ok_or_else(|| serde::de::Error::custom("supermatrix re/im arrays do not match dim2"))?;
        Ok(SuperMatrix { matrix: m, basis: r.basis_kind })
    }
}

/// Matrix `M_jk = Tr[σ_j† F(σ_k)]` of an arbitrary linear map `F`.
pub fn superoperator_matrix<F>(basis: &HermitianBasis, map: F) -> Result<SuperMatrix>
where
    F: Fn(&Operator) -> Result<Operator>,
{
    let n = basis.dim2();
    let mut m = DMatrix::zeros(n, n);
    for (k, sk) in basis.elements().iter().enumerate() {
        let image = map(sk)?;
        if image.dim() != basis.dim() {
            return Err(Error::DimensionMismatch { expected: basis.dim(), found: image.dim() });
        }
        for (j, sj) in basis.elements().iter().enumerate() {
            m[(j, k)] = sj.hs_inner(&image);
        }
    }
    Ok(SuperMatrix { matrix: m, basis: Some(basis.kind()) })
}

/// Supermatrix `L_jk = Tr[σ_j† 𝓛(σ_k)]` of a Lindblad generator.
pub fn supermatrix(gen: &GeneratorSpec, basis: &HermitianBasis) -> Result<SuperMatrix> {
    if gen.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: gen.dim() });
    }
    superoperator_matrix(basis, |s| apply_lindblad(gen, s))
}

/// Supermatrix of `ρ ↦ -i[H, ρ]`; `H` need not be exactly hermitian.
pub fn hamiltonian_superoperator(h: &Operator, basis: &HermitianBasis) -> Result<SuperMatrix> {
    if h.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: h.dim() });
    }
    superoperator_matrix(basis, |s| Ok(commutator(h, s)?.scale(-I)))
}

/// Samples the protocol's generator at time `t`.
pub fn generator_at(protocol: &DrivingProtocol, t: f64) -> Result<GeneratorSpec> {
    protocol.generator_at(t)
}

/// Central difference `(L(t+h) - L(t-h)) / 2h`.
pub fn supermatrix_derivative(
    protocol: &DrivingProtocol,
    t: f64,
    basis: &HermitianBasis,
    h: f64,
) -> Result<SuperMatrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter { name: "h", reason: "step must be positive".into() });
    }
    let (lo, hi) = (t - h, t + h);
    if lo < protocol.t_start() || hi > protocol.t_end() {
        return Err(Error::StencilOutOfRange {
            lo,
            hi,
            t_start: protocol.t_start(),
            t_end: protocol.t_end(),
        });
    }
    let plus = protocol.supermatrix_at(hi, basis)?;
    let minus = protocol.supermatrix_at(lo, basis)?;
    let m = (&plus.matrix - &minus.matrix) * C64::new(0.5 / h, 0.0);
    Ok(SuperMatrix { matrix: m, basis: Some(basis.kind()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::operator_algebra::{build_basis, pauli::*, vectorize};
    use crate::scenarios::{rotating_dissipation, RotatingDissipationParams};

    fn decay(gamma: f64) -> GeneratorSpec {
        GeneratorSpec::dissipative(2, vec![JumpChannel { operator: sigma_minus(), rate: gamma }]).unwrap()
    }

    fn up() -> Operator {
        Operator::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
    }

    fn down() -> Operator {
        Operator::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn amplitude_damping_on_excited_state() {
        let g = 0.7;
        let out = apply_lindblad(&decay(g), &up()).unwrap();
        let want = (&down() - &up()).scale_real(g);
        assert!(out.distance(&want) < 1e-15);
        assert!(apply_lindblad(&decay(g), &down()).unwrap().frobenius_norm() < 1e-15);
    }

    #[test]
    fn precession_of_sigma_x() {
        let omega = 1.3;
        let gen = GeneratorSpec::hamiltonian_only(sigma_z().scale_real(omega / 2.0)).unwrap();
        let out = apply_lindblad(&gen, &sigma_x()).unwrap();
        assert!(out.distance(&sigma_y().scale_real(omega)) < 1e-15);
    }

    #[test]
    fn invalid_generators_rejected() {
        let bad_rate = vec![JumpChannel { operator: sigma_minus(), rate: -1.0 }];
        assert_eq!(GeneratorSpec::dissipative(2, bad_rate).unwrap_err().kind(), "negative_rate");
        let non_herm = GeneratorSpec::hamiltonian_only(sigma_plus());
        assert!(non_herm.is_err());
        let wrong_dim = vec![JumpChannel { operator: Operator::identity(4), rate: 1.0 }];
        assert!(GeneratorSpec::dissipative(2, wrong_dim).is_err());
        assert!(apply_lindblad(&decay(1.0), &Operator::identity(4)).is_err());
    }

    #[test]
    fn dephasing_supermatrix_is_diagonal() {
        let g = 0.4;
        let gen = GeneratorSpec::dissipative(2, vec![JumpChannel { operator: sigma_z(), rate: g }]).unwrap();
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let l = supermatrix(&gen, &b).unwrap();
        let diag = [0.0, -2.0 * g, -2.0 * g, 0.0];
        for (i, &d) in diag.iter().enumerate() {
            for j in 0..4 {
                let want = if i == j { d } else { 0.0 };
                assert!((l.matrix()[(i, j)] - C64::new(want, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn bloch_precession_generator() {
        let omega = 2.5;
        let gen = GeneratorSpec::hamiltonian_only(sigma_z().scale_real(omega / 2.0)).unwrap();
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let l = supermatrix(&gen, &b).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = match (i, j) {
                    (2, 1) => omega,
                    (1, 2) => -omega,
                    _ => 0.0,
                };
                assert!((l.matrix()[(i, j)] - C64::new(want, 0.0)).norm() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn amplitude_damping_spectrum() {
        let g = 1.7;
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let l = supermatrix(&decay(g), &b).unwrap();
        let mut ev = linalg::eigenvalues(l.matrix()).unwrap();
        ev.sort_by(|a, b| b.re.total_cmp(&a.re));
        let want = [0.0, -g / 2.0, -g / 2.0, -g];
        for (z, w) in ev.iter().zip(want) {
            assert!((z - C64::new(w, 0.0)).norm() < 1e-12, "{z} vs {w}");
        }
        assert!(l.first_row_norm() < 1e-15);
    }

    #[test]
    fn supermatrix_matches_action() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let gen = GeneratorSpec::new(
            sigma_x().scale_real(0.3),
            vec![
                JumpChannel { operator: sigma_minus(), rate: 0.8 },
                JumpChannel { operator: sigma_z(), rate: 0.2 },
            ],
        )
        .unwrap();
        let l = supermatrix(&gen, &b).unwrap();
        let rho = Operator::from_rows(&[
            vec![C64::new(0.6, 0.0), C64::new(0.1, 0.2)],
            vec![C64::new(0.1, -0.2), C64::new(0.4, 0.0)],
        ])
        .unwrap();
        let lhs = vectorize(&apply_lindblad(&gen, &rho).unwrap(), &b).unwrap();
        let rhs = l.matrix() * vectorize(&rho, &b).unwrap().components();
        assert!((lhs.components() - rhs).norm() < 1e-14);
    }

    #[test]
    fn derivative_of_static_protocol_vanishes() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = DrivingProtocol::constant(decay(1.0), 0.0, 1.0).unwrap();
        let d = supermatrix_derivative(&p, 0.5, &b, 1e-6).unwrap();
        assert!(d.frobenius_norm() < 1e-9);
        let err = supermatrix_derivative(&p, 0.0, &b, 1e-6).unwrap_err();
        assert_eq!(err.kind(), "stencil_out_of_range");
    }

    #[test]
    fn rotating_derivative_norm_is_constant() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = rotating_dissipation(RotatingDissipationParams { theta0: 1.0, omega: 2.0, gamma: 1.0 }).unwrap();
        let h = 1e-6 * (p.t_end() - p.t_start());
        let norms: Vec<f64> = [0.3, 1.1, 2.0, 2.9]
            .iter()
            .map(|&t| supermatrix_derivative(&p, t, &b, h).unwrap().frobenius_norm())
            .collect();
        for n in &norms {
            assert!((n - norms[0]).abs() < 1e-6, "{norms:?}");
        }
    }

    #[test]
    fn central_difference_is_second_order() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = rotating_dissipation(RotatingDissipationParams { theta0: 0.8, omega: 3.0, gamma: 1.0 }).unwrap();
        let t = 1.0;
        let exact = p.analytic_supermatrix_derivative(t, &b).unwrap().unwrap();
        let e1 = supermatrix_derivative(&p, t, &b, 1e-2).unwrap().distance(&exact);
        let e2 = supermatrix_derivative(&p, t, &b, 5e-3).unwrap().distance(&exact);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn supermatrix_json_round_trip() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let l = supermatrix(&decay(1.0), &b).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        let back: SuperMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
    }
}
