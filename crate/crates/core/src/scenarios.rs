//! Built-in driving protocols with closed-form generators, frames, targets and
//! counterdiabatic corrections.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liouvillian::{DrivingProtocol, GeneratorSpec, JumpChannel};
use crate::operator_algebra::{kron, pauli, Operator, I, ZERO};

/// Unit vector `(sin θ cos φ, sin θ sin φ, cos θ)`.
pub fn bloch_direction(theta: f64, phi: f64) -> [f64; 3] {
    [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Spin-up and spin-down kets along `n(θ, φ)`.
pub fn spin_kets(theta: f64, phi: f64) -> (DVector<C64>, DVector<C64>) {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let e = C64::from_polar(1.0, phi);
    let up = DVector::from_vec(vec![C64::new(c, 0.0), e * s]);
    let down = DVector::from_vec(vec![-e.conj() * s, C64::new(c, 0.0)]);
    (up, down)
}

/// Lowering operator `|↓⟩_n⟨↑|_n` built from the eigenvectors of `n·σ`.
pub fn lowering_along(theta: f64, phi: f64) -> Operator {
    let (up, down) = spin_kets(theta, phi);
    Operator::outer(&down, &up)
}

/// `W(t) = exp(-iωtσz/2)` and its time derivative.
pub(crate) fn z_rotation_frame(omega: f64, t: f64) -> (Operator, Operator) {
    let a = C64::from_polar(1.0, -omega * t / 2.0);
    let w = Operator::from_rows(&[vec![a, ZERO], vec![ZERO, a.conj()]]).unwrap();
    let wdot = (&pauli::sigma_z() * &w).scale(-I * (omega / 2.0));
    (w, wdot)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatingDissipationParams {
    pub theta0: f64,
    pub omega: f64,
    pub gamma: f64,
}

impl Default for RotatingDissipationParams {
    fn default() -> Self {
        RotatingDissipationParams { theta0: PI / 3.0, omega: 5.0, gamma: 1.0 }
    }
}

impl RotatingDissipationParams {
    pub fn direction(&self, t: f64) -> [f64; 3] {
        bloch_direction(self.theta0, self.omega * t)
    }

    pub fn direction_dot(&self, t: f64) -> [f64; 3] {
        let phi = self.omega * t;
        let s = self.theta0.sin();
        [-self.omega * s * phi.sin(), self.omega * s * phi.cos(), 0.0]
    }
}

fn check_finite(name: &'static str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: "must be finite".into() })
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be positive, got {x}") })
    }
}

fn check_polar(x: f64) -> Result<()> {
    if (0.0..=PI).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "theta0", reason: format!("must lie in [0, π], got {x}") })
    }
}

/// Damping along a direction precessing about z; the span is one period.
pub fn rotating_dissipation(p: RotatingDissipationParams) -> Result<DrivingProtocol> {
    check_positive("gamma", p.gamma)?;
    check_finite("omega", p.omega)?;
    check_polar(p.theta0)?;
    let t_end = if p.omega == 0.0 { 1.0 / p.gamma } else { 2.0 * PI / p.omega.abs() };
    DrivingProtocol::rotating(p, 0.0, t_end)
}

pub(crate) fn rotating_generator(p: &RotatingDissipationParams, t: f64) -> GeneratorSpec {
    let jump = JumpChannel { operator: lowering_along(p.theta0, p.omega * t), rate: p.gamma };
    GeneratorSpec::dissipative(2, vec![jump]).expect("valid rotating generator")
}

pub(crate) fn rotating_reference(p: &RotatingDissipationParams) -> GeneratorSpec {
    rotating_generator(&RotatingDissipationParams { omega: 0.0, ..*p }, 0.0)
}

/// Dark state `½(1 - n·σ)`.
pub(crate) fn rotating_dark_state(p: &RotatingDissipationParams, t: f64) -> Operator {
    let n = p.direction(t);
    (&Operator::identity(2) - &pauli::dot_sigma(n)).scale_real(0.5)
}

/// Counterdiabatic Hamiltonian `½(n × ṅ)·σ` for the rotating damping axis.
pub fn analytic_htqd_rotating(p: &RotatingDissipationParams, t: f64) -> Operator {
    let v = cross(p.direction(t), p.direction_dot(t));
    pauli::dot_sigma([0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
}

/// `(n × ṅ)·σ` without the one-half prefactor.
pub fn full_cross_product_hamiltonian(p: &RotatingDissipationParams, t: f64) -> Operator {
    pauli::dot_sigma(cross(p.direction(t), p.direction_dot(t)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellDraggingParams {
    pub gamma: f64,
    pub theta_f: f64,
    #[serde(rename = "T")]
    pub duration: f64,
}

impl Default for BellDraggingParams {
    fn default() -> Self {
        BellDraggingParams { gamma: 1.0, theta_f: FRAC_PI_2, duration: 1.0 }
    }
}

impl BellDraggingParams {
    /// `θ(t) = π/4 + (θ_f - π/4) sin²(πt / 2T)`.
    pub fn theta(&self, t: f64) -> f64 {
        let s = (PI * t / (2.0 * self.duration)).sin();
        FRAC_PI_4 + (self.theta_f - FRAC_PI_4) * s * s
    }

    pub fn theta_dot(&self, t: f64) -> f64 {
        let x = PI * t / self.duration;
        (self.theta_f - FRAC_PI_4) * PI / (2.0 * self.duration) * x.sin()
    }
}

/// Hadamard on the first qubit followed by a C-NOT.
pub fn entangling_unitary() -> Operator {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    Operator::from_real_rows(&[
        vec![r, 0.0, r, 0.0],
        vec![0.0, r, 0.0, r],
        vec![0.0, r, 0.0, -r],
        vec![r, 0.0, -r, 0.0],
    ])
    .unwrap()
}

/// Rotation by `(θ, φ)` on the first qubit followed by a C-NOT.
pub fn bell_unitary(theta: f64, phi: f64) -> Operator {
    let (c, s) = (C64::new(theta.cos(), 0.0), theta.sin());
    let em = C64::from_polar(s, -phi);
    let ep = C64::from_polar(s, phi);
    Operator::from_rows(&[
        vec![c, ZERO, em, ZERO],
        vec![ZERO, c, ZERO, em],
        vec![ZERO, ep, ZERO, -c],
        vec![ep, ZERO, -c, ZERO],
    ])
    .unwrap()
}

fn bell_unitary_theta_derivative(theta: f64) -> Operator {
    let (c, s) = (theta.cos(), theta.sin());
    Operator::from_real_rows(&[
        vec![-s, 0.0, c, 0.0],
        vec![0.0, -s, 0.0, c],
        vec![0.0, c, 0.0, s],
        vec![c, 0.0, s, 0.0],
    ])
    .unwrap()
}

fn bare_bell_jumps() -> [Operator; 2] {
    let id = Operator::identity(2);
    let lower = pauli::sigma_plus();
    [kron(&lower, &id), kron(&id, &lower)]
}

/// Two-qubit damping whose fixed point is dragged along `cos θ|00⟩ + sin θ|11⟩`.
pub fn bell_dragging(p: BellDraggingParams) -> Result<DrivingProtocol> {
    check_positive("gamma", p.gamma)?;
    check_positive("T", p.duration)?;
    check_finite("theta_f", p.theta_f)?;
    DrivingProtocol::bell(p, 0.0, p.duration)
}

pub(crate) fn bell_frame(p: &BellDraggingParams, t: f64) -> (Operator, Operator) {
    let theta = p.theta(t);
    (bell_unitary(theta, 0.0), bell_unitary_theta_derivative(theta).scale_real(p.theta_dot(t)))
}

pub(crate) fn bell_generator(p: &BellDraggingParams, t: f64) -> GeneratorSpec {
    let u = bell_unitary(p.theta(t), 0.0);
    let ud = u.adjoint();
    let jumps = bare_bell_jumps()
        .iter()
        .map(|g| JumpChannel { operator: &(&u * g) * &ud, rate: p.gamma })
        .collect();
    GeneratorSpec::dissipative(4, jumps).expect("valid bell generator")
}

pub(crate) fn bell_reference(p: &BellDraggingParams) -> GeneratorSpec {
    let jumps = bare_bell_jumps()
        .into_iter()
        .map(|operator| JumpChannel { operator, rate: p.gamma })
        .collect();
    GeneratorSpec::dissipative(4, jumps).expect("valid bell generator")
}

/// Projector onto `cos θ|00⟩ + sin θ|11⟩`.
pub fn bell_fixed_point(theta: f64) -> Operator {
    let psi = DVector::from_vec(vec![
        C64::new(theta.cos(), 0.0),
        ZERO,
        ZERO,
        C64::new(theta.sin(), 0.0),
    ]);
    Operator::projector(&psi)
}

/// `-iθ̇(|00⟩⟨11| + |01⟩⟨10|) + h.c.`
pub fn analytic_htqd_bell(theta_dot: f64) -> Operator {
    let m = -I * theta_dot;
    let p = I * theta_dot;
    Operator::from_rows(&[
        vec![ZERO, ZERO, ZERO, m],
        vec![ZERO, ZERO, m, ZERO],
        vec![ZERO, p, ZERO, ZERO],
        vec![p, ZERO, ZERO, ZERO],
    ])
    .unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedSpinParams {
    #[serde(rename = "B")]
    pub field: f64,
    pub theta0: f64,
    pub omega: f64,
}

impl Default for ClosedSpinParams {
    fn default() -> Self {
        ClosedSpinParams { field: 1.0, theta0: PI / 3.0, omega: 2.0 }
    }
}

impl ClosedSpinParams {
    fn as_rotating(&self) -> RotatingDissipationParams {
        RotatingDissipationParams { theta0: self.theta0, omega: self.omega, gamma: 1.0 }
    }

    pub fn direction(&self, t: f64) -> [f64; 3] {
        self.as_rotating().direction(t)
    }
}

/// Spin in a field `(B/2) n(t)·σ` precessing about z; no dissipation.
pub fn closed_spin(p: ClosedSpinParams) -> Result<DrivingProtocol> {
    check_positive("B", p.field)?;
    check_finite("omega", p.omega)?;
    check_polar(p.theta0)?;
    let t_end = if p.omega == 0.0 { 2.0 * PI / p.field } else { 2.0 * PI / p.omega.abs() };
    DrivingProtocol::closed_spin(p, 0.0, t_end)
}

pub(crate) fn closed_spin_generator(p: &ClosedSpinParams, t: f64) -> GeneratorSpec {
    let n = p.direction(t);
    let h = pauli::dot_sigma(n).scale_real(p.field / 2.0);
    GeneratorSpec::hamiltonian_only(h).expect("hermitian field hamiltonian")
}

pub(crate) fn closed_spin_reference(p: &ClosedSpinParams) -> GeneratorSpec {
    closed_spin_generator(&ClosedSpinParams { omega: 0.0, ..*p }, 0.0)
}

pub(crate) fn closed_spin_ground_state(p: &ClosedSpinParams, t: f64) -> Operator {
    rotating_dark_state(&p.as_rotating(), t)
}

/// `½(n × ṅ)·σ`, independent of the field strength.
pub(crate) fn analytic_htqd_closed_spin(p: &ClosedSpinParams, t: f64) -> Operator {
    analytic_htqd_rotating(&p.as_rotating(), t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::apply_lindblad;

    fn unitarity_error(u: &Operator) -> f64 {
        (&(u * &u.adjoint()) - &Operator::identity(u.dim())).frobenius_norm()
    }

    #[test]
    fn polar_axis_is_static() {
        let p = rotating_dissipation(RotatingDissipationParams { theta0: 0.0, omega: 3.0, gamma: 1.0 }).unwrap();
        let g0 = p.generator_at(0.0).unwrap();
        let g1 = p.generator_at(1.3).unwrap();
        assert!(g0.jumps()[0].operator.distance(&g1.jumps()[0].operator) < 1e-15);
        assert!(g0.jumps()[0].operator.distance(&pauli::sigma_minus()) < 1e-15);
    }

    #[test]
    fn equatorial_lowering_operator() {
        let l = lowering_along(FRAC_PI_2, 0.0);
        // |↓_x⟩⟨↑_x| = -½(σz + iσy); the overall sign is the phase of |↓_x⟩
        let want = (&pauli::sigma_z() + &pauli::sigma_y().scale(I)).scale_real(-0.5);
        assert!(l.distance(&want) < 1e-15, "{l}");
    }

    #[test]
    fn rotating_dark_state_is_fixed_point() {
        let p = RotatingDissipationParams { theta0: 1.1, omega: 2.0, gamma: 0.7 };
        let proto = rotating_dissipation(p).unwrap();
        for k in 0..10 {
            let t = proto.t_end() * k as f64 / 9.0;
            let g = proto.generator_at(t).unwrap();
            let rho = proto.analytic_target(t).unwrap();
            assert!(apply_lindblad(&g, &rho).unwrap().frobenius_norm() < 1e-14);
        }
    }

    #[test]
    fn rotating_frame_conjugates_reference_jump() {
        let p = RotatingDissipationParams { theta0: 0.9, omega: 1.7, gamma: 1.0 };
        let g0 = rotating_reference(&p).jumps()[0].operator.clone();
        for t in [0.0, 0.4, 2.2] {
            let (w, _) = z_rotation_frame(p.omega, t);
            let moved = &(&w * &g0) * &w.adjoint();
            let direct = rotating_generator(&p, t).jumps()[0].operator.clone();
            // equal up to a global phase
            let ph = moved.hs_inner(&direct) / moved.hs_inner(&moved);
            assert!((ph.norm() - 1.0).abs() < 1e-14);
            assert!(moved.scale(ph).distance(&direct) < 1e-14);
        }
    }

    #[test]
    fn rotating_correction_values() {
        let p = RotatingDissipationParams { theta0: FRAC_PI_2, omega: 1.5, gamma: 1.0 };
        // at the equator n × ṅ = ω ẑ
        let h = full_cross_product_hamiltonian(&p, 0.37);
        assert!(h.distance(&pauli::sigma_z().scale_real(1.5)) < 1e-14);
        let h = analytic_htqd_rotating(&p, 0.37);
        assert!(h.distance(&pauli::sigma_z().scale_real(0.75)) < 1e-14);
        let still = RotatingDissipationParams { omega: 0.0, ..p };
        assert!(analytic_htqd_rotating(&still, 1.0).frobenius_norm() == 0.0);
        let p = RotatingDissipationParams { theta0: 0.7, omega: 2.0, gamma: 1.0 };
        let t = 0.8;
        let (s, c, phi) = (p.theta0.sin(), p.theta0.cos(), p.omega * t);
        let v = [-p.omega * s * c * phi.cos(), -p.omega * s * c * phi.sin(), p.omega * s * s];
        assert!(full_cross_product_hamiltonian(&p, t).distance(&pauli::dot_sigma(v)) < 1e-14);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(rotating_dissipation(RotatingDissipationParams { gamma: 0.0, ..Default::default() }).is_err());
        assert!(rotating_dissipation(RotatingDissipationParams { theta0: 4.0, ..Default::default() }).is_err());
        assert!(bell_dragging(BellDraggingParams { duration: -1.0, ..Default::default() }).is_err());
        assert!(closed_spin(ClosedSpinParams { field: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn bell_unitary_is_unitary_and_generalizes_entangler() {
        for theta in [0.0, 0.3, FRAC_PI_4, 1.2, 2.9] {
            for phi in [0.0, 0.8] {
                assert!(unitarity_error(&bell_unitary(theta, phi)) < 1e-14);
            }
        }
        assert!(bell_unitary(FRAC_PI_4, 0.0).distance(&entangling_unitary()) < 1e-15);
        // the entangler maps |00⟩ to the Bell state
        let col: Vec<C64> = (0..4).map(|i| entangling_unitary().get(i, 0)).collect();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((col[0].re - r).abs() < 1e-15 && (col[3].re - r).abs() < 1e-15);
    }

    #[test]
    fn bell_fixed_points() {
        let p = BellDraggingParams::default();
        let proto = bell_dragging(p).unwrap();
        for t in [0.0, 0.3, 0.7, 1.0] {
            let g = proto.generator_at(t).unwrap();
            let rho = bell_fixed_point(p.theta(t));
            assert!(apply_lindblad(&g, &rho).unwrap().frobenius_norm() < 1e-14);
        }
        let bell = bell_fixed_point(FRAC_PI_4);
        assert!((bell.get(0, 3).re - 0.5).abs() < 1e-15);
        // θ = 0 leaves |00⟩ fixed
        let p0 = BellDraggingParams { theta_f: 0.0, duration: 1.0, gamma: 1.0 };
        let g = bell_generator(&p0, 1.0);
        let zz = bell_fixed_point(0.0);
        assert!(apply_lindblad(&g, &zz).unwrap().frobenius_norm() < 1e-14);
        assert!((zz.get(0, 0).re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bell_schedule_endpoints() {
        let p = BellDraggingParams { gamma: 1.0, theta_f: 1.3, duration: 2.0 };
        assert!((p.theta(0.0) - FRAC_PI_4).abs() < 1e-15);
        assert!((p.theta(2.0) - 1.3).abs() < 1e-15);
        assert!(p.theta_dot(0.0).abs() < 1e-15 && p.theta_dot(2.0).abs() < 1e-14);
        let h = 1e-5;
        let fd = (p.theta(0.7 + h) - p.theta(0.7 - h)) / (2.0 * h);
        assert!((fd - p.theta_dot(0.7)).abs() < 1e-9);
    }

    #[test]
    fn bell_correction_pattern() {
        assert_eq!(analytic_htqd_bell(0.0).frobenius_norm(), 0.0);
        let h = analytic_htqd_bell(1.0);
        for i in 0..4 {
            for j in 0..4 {
                let want = match (i, j) {
                    (0, 3) | (1, 2) => -I,
                    (2, 1) | (3, 0) => I,
                    _ => ZERO,
                };
                assert_eq!(h.get(i, j), want, "({i},{j})");
            }
        }
        assert!(h.is_hermitian(0.0));
    }

    #[test]
    fn bell_frame_derivative_matches_finite_difference() {
        let p = BellDraggingParams::default();
        let t = 0.4;
        let (w, wdot) = bell_frame(&p, t);
        let e = 1e-5;
        let fd = (&bell_frame(&p, t + e).0 - &bell_frame(&p, t - e).0).scale_real(0.5 / e);
        assert!(fd.distance(&wdot) < 1e-8);
        let h = (&wdot * &w.adjoint()).scale(I);
        assert!(h.distance(&analytic_htqd_bell(p.theta_dot(t))) < 1e-14);
    }

    #[test]
    fn closed_spin_ground_state() {
        let p = ClosedSpinParams { field: 2.0, theta0: 0.6, omega: 1.0 };
        let proto = closed_spin(p).unwrap();
        let t = 0.9;
        let g = proto.generator_at(t).unwrap();
        assert!(g.jumps().is_empty());
        let rho = proto.analytic_target(t).unwrap();
        let hr = g.hamiltonian() * &rho;
        // H ρ = -(B/2) ρ for the ground state
        assert!(hr.distance(&rho.scale_real(-1.0)) < 1e-14);
    }
}
