//! Time integration of the vectorized master equation and tracking metrics.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::correction::{
    analytic_correction, closed_system_htqd_for, default_frame_step, general_correction_at, general_l_tqd_at,
    protocol_frame_correction, CorrectionTerm,
};
use crate::error::{Error, Result};
use crate::liouvillian::{hamiltonian_superoperator, DrivingProtocol, SuperMatrix};
use crate::linalg;
use crate::operator_algebra::{devectorize_slice, vectorize, BasisKind, CoherenceVector, HermitianBasis, Operator};
use crate::spectral::{steady_state, DEFAULT_CLUSTER_TOL};

const STATE_TOL: f64 = 1e-10;
const METRIC_TOL: f64 = 1e-8;
const RENORMALIZE_ABOVE: f64 = 1e-12;
const CACHE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4Fixed,
    Rk45Adaptive,
}

/// Which correction is added to `L(t)` during integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    None,
    General,
    UnitaryFrame,
    Analytic,
    ClosedSystem,
}

impl CorrectionMode {
    pub const ALL: [CorrectionMode; 5] = [
        CorrectionMode::None,
        CorrectionMode::General,
        CorrectionMode::UnitaryFrame,
        CorrectionMode::Analytic,
        CorrectionMode::ClosedSystem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorrectionMode::None => "none",
            CorrectionMode::General => "general",
            CorrectionMode::UnitaryFrame => "unitary_frame",
            CorrectionMode::Analytic => "analytic",
            CorrectionMode::ClosedSystem => "closed_system",
        }
    }
}

impl std::str::FromStr for CorrectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        CorrectionMode::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown correction mode '{s}'")))
    }
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step of the fixed-step method.
    pub dt: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Largest adaptive step; defaults to 1/100 of the span.
    pub max_step: Option<f64>,
    pub correction_mode: CorrectionMode,
    pub cluster_tol: f64,
    /// Frame-derivative step for the general correction; defaults to 1e-3 of the span.
    pub frame_step: Option<f64>,
    /// Record a uniform grid of this many points instead of every step.
    pub output_points: Option<usize>,
    /// Stop before the end of the protocol span.
    pub t_final: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::Rk45Adaptive,
            dt: 1e-3,
            rtol: 1e-9,
            atol: 1e-12,
            max_step: None,
            correction_mode: CorrectionMode::None,
            cluster_tol: DEFAULT_CLUSTER_TOL,
            frame_step: None,
            output_points: None,
            t_final: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_correction(mut self, mode: CorrectionMode) -> Self {
        self.correction_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter { name, reason: format!("must be positive, got {x}") })
            }
        };
        positive("dt", self.dt)?;
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("cluster_tol", self.cluster_tol)?;
        if let Some(h) = self.max_step {
            positive("max_step", h)?;
        }
        if let Some(h) = self.frame_step {
            positive("frame_step", h)?;
        }
        if let Some(n) = self.output_points {
            if n < 2 {
                return Err(Error::InvalidParameter { name: "output_points", reason: "need at least 2".into() });
            }
        }
        Ok(())
    }
}

/// States and tracking diagnostics at the recorded times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub basis_kind: BasisKind,
    pub correction_mode: CorrectionMode,
    pub times: Vec<f64>,
    pub states: Vec<CoherenceVector>,
    pub fidelities: Vec<f64>,
    pub trace_distances: Vec<f64>,
    /// `|Tr ρ - 1|` before any renormalization.
    pub trace_errors: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
    pub hermiticity_errors: Vec<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub renormalizations: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_tracking_error(&self) -> f64 {
        self.trace_distances.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_fidelity(&self) -> f64 {
        self.fidelities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn final_fidelity(&self) -> f64 {
        self.fidelities.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_trace_error(&self) -> f64 {
        self.trace_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_hermiticity_error(&self) -> f64 {
        self.hermiticity_errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn density(&self, k: usize, basis: &HermitianBasis) -> Result<Operator> {
        devectorize_slice(self.states[k].components(), basis)
    }

    /// CSV with header `t,fidelity,trace_distance,trace_error,min_eig`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,fidelity,trace_distance,trace_error,min_eig\n");
        for k in 0..self.len() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.times[k], self.fidelities[k], self.trace_distances[k], self.trace_errors[k], self.min_eigenvalues[k]
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }
}

fn check_density(rho: &Operator, tol: f64) -> Result<()> {
    let herm = rho.hermiticity_error();
    if !(herm <= tol) {
        return Err(Error::InvalidState { reason: format!("not hermitian (deviation {herm:.3e})") });
    }
    let tr = rho.trace();
    if !((tr - C64::new(1.0, 0.0)).norm() <= tol) {
        return Err(Error::InvalidState { reason: format!("trace {tr} is not 1") });
    }
    let min = rho.hermitian_eigenvalues().first().copied().unwrap_or(0.0);
    if !(min >= -tol) {
        return Err(Error::InvalidState { reason: format!("negative eigenvalue {min:.3e}") });
    }
    Ok(())
}

fn psd_sqrt(rho: &Operator) -> DMatrix<C64> {
    let (vals, vecs) = linalg::hermitian_eigh(rho.hermitian_part().matrix());
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| C64::new(x.max(0.0).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

/// Pure state vector if `sigma` is a rank-one projector.
fn pure_vector(sigma: &Operator) -> Option<DVector<C64>> {
    let (vals, vecs) = linalg::hermitian_eigh(sigma.hermitian_part().matrix());
    let n = vals.len();
    let top = vals[n - 1];
    let rest: f64 = vals[..n - 1].iter().map(|x| x.abs()).sum();
    ((top - 1.0).abs() <= 1e-12 && rest <= 1e-12).then(|| vecs.column(n - 1).into_owned())
}

fn fidelity_unchecked(rho: &Operator, sigma: &Operator) -> f64 {
    if let Some(psi) = pure_vector(sigma) {
        return (psi.adjoint() * rho.matrix() * &psi)[(0, 0)].re.max(0.0);
    }
    if let Some(psi) = pure_vector(rho) {
        return (psi.adjoint() * sigma.matrix() * &psi)[(0, 0)].re.max(0.0);
    }
    let s = psd_sqrt(rho);
    let m = Operator::from_matrix(&s * sigma.matrix() * &s);
    let root: f64 = m.hermitian_eigenvalues().iter().map(|x| x.max(0.0).sqrt()).sum();
    root * root
}

fn trace_distance_unchecked(rho: &Operator, sigma: &Operator) -> f64 {
    let diff = (rho - sigma).hermitian_part();
    0.5 * diff.hermitian_eigenvalues().iter().map(|x| x.abs()).sum::<f64>()
}

/// Uhlmann fidelity `(Tr√(√ρ σ √ρ))²`, `⟨ψ|ρ|ψ⟩` when one argument is pure.
pub fn fidelity(rho: &Operator, sigma: &Operator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    check_density(rho, METRIC_TOL)?;
    check_density(sigma, METRIC_TOL)?;
    Ok(fidelity_unchecked(rho, sigma))
}

/// `½‖ρ - σ‖₁`.
pub fn trace_distance(rho: &Operator, sigma: &Operator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    Ok(trace_distance_unchecked(rho, sigma))
}

/// State the protocol is meant to hold at `t`: the closed-form fixed point or
/// ground state when known, otherwise the unique steady state of `L(t)`
/// (or the ground state of `H(t)` when there are no jumps).
pub fn instantaneous_target(protocol: &DrivingProtocol, t: f64, basis: &HermitianBasis) -> Result<Operator> {
    let gen = protocol.generator_at(t)?;
    if let Some(target) = protocol.analytic_target(t) {
        return Ok(target);
    }
    if gen.jumps().is_empty() {
        let h = gen.hamiltonian();
        let (vals, vecs) = linalg::hermitian_eigh(h.matrix());
        let tol = 1e-8 * h.frobenius_norm().max(1.0);
        if vals.len() > 1 && vals[1] - vals[0] < tol {
            return Err(Error::SpectralDegeneracy { gap: vals[1] - vals[0], tol });
        }
        return Ok(Operator::projector(&vecs.column(0).into_owned()));
    }
    steady_state(&protocol.supermatrix_at(t, basis)?, basis)
}

/// The correction `mode` adds at time `t`, or `None` for uncorrected runs.
pub fn correction_term(
    protocol: &DrivingProtocol,
    t: f64,
    basis: &HermitianBasis,
    mode: CorrectionMode,
    cluster_tol: f64,
    frame_step: f64,
) -> Result<Option<CorrectionTerm>> {
    Ok(Some(match mode {
        CorrectionMode::None => return Ok(None),
        CorrectionMode::General => general_correction_at(protocol, t, basis, cluster_tol, frame_step)?,
        CorrectionMode::UnitaryFrame => protocol_frame_correction(protocol, t, basis)?,
        CorrectionMode::Analytic => analytic_correction(protocol, t, basis)?,
        CorrectionMode::ClosedSystem => closed_system_htqd_for(protocol, t, frame_step, basis)?,
    }))
}

struct Rhs<'a> {
    protocol: &'a DrivingProtocol,
    basis: &'a HermitianBasis,
    cfg: &'a IntegratorConfig,
    frame_step: f64,
    cache: HashMap<u64, DMatrix<C64>>,
}

impl Rhs<'_> {
    fn matrix(&mut self, t: f64) -> Result<&DMatrix<C64>> {
        let key = t.to_bits();
        if !self.cache.contains_key(&key) {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            let m = self.build(t)?;
            self.cache.insert(key, m);
        }
        Ok(&self.cache[&key])
    }

    fn build(&self, t: f64) -> Result<DMatrix<C64>> {
        let (p, b) = (self.protocol, self.basis);
        let base = p.supermatrix_at(t, b)?;
        let extra: Option<SuperMatrix> = match self.cfg.correction_mode {
            CorrectionMode::None => None,
            CorrectionMode::General => Some(general_l_tqd_at(p, t, b, self.cfg.cluster_tol, self.frame_step)?),
            CorrectionMode::UnitaryFrame => Some(protocol_frame_correction(p, t, b)?.supermatrix),
            CorrectionMode::Analytic => Some(hamiltonian_superoperator(&p.analytic_correction(t)?, b)?),
            CorrectionMode::ClosedSystem => Some(closed_system_htqd_for(p, t, self.frame_step, b)?.supermatrix),
        };
        Ok(match extra {
            Some(e) => base.matrix() + e.matrix(),
            None => base.matrix().clone(),
        })
    }

    fn eval(&mut self, t: f64, y: &DVector<C64>) -> Result<DVector<C64>> {
        Ok(self.matrix(t)? * y)
    }
}

struct Recorder<'a> {
    protocol: &'a DrivingProtocol,
    basis: &'a HermitianBasis,
    traj: Trajectory,
}

impl Recorder<'_> {
    fn record(&mut self, t: f64, y: &DVector<C64>, trace_error: f64) -> Result<()> {
        let rho = devectorize_slice(y, self.basis)?;
        let target = instantaneous_target(self.protocol, t, self.basis)?;
        let tr = &mut self.traj;
        tr.times.push(t);
        tr.states.push(CoherenceVector::new(y.clone()));
        tr.fidelities.push(fidelity_unchecked(&rho, &target));
        tr.trace_distances.push(trace_distance_unchecked(&rho, &target));
        tr.trace_errors.push(trace_error);
        tr.min_eigenvalues.push(rho.hermitian_part().hermitian_eigenvalues()[0]);
        tr.hermiticity_errors.push(rho.hermiticity_error());
        Ok(())
    }
}

/// Integrates `d|ρ⟩⟩/dt = (L(t) + L_corr(t))|ρ⟩⟩` over the protocol span.
pub fn integrate(
    protocol: &DrivingProtocol,
    basis: &HermitianBasis,
    rho0: &Operator,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    if rho0.dim() != basis.dim() || protocol.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: rho0.dim() });
    }
    check_density(rho0, STATE_TOL)?;
    let t0 = protocol.t_start();
    let t1 = match cfg.t_final {
        Some(tf) if tf > t0 && tf <= protocol.t_end() => tf,
        Some(tf) => return Err(Error::OutOfRange { t: tf, t_start: t0, t_end: protocol.t_end() }),
        None => protocol.t_end(),
    };
    let span = t1 - t0;
    let mut rhs = Rhs {
        protocol,
        basis,
        cfg,
        frame_step: cfg.frame_step.unwrap_or_else(|| default_frame_step(protocol)),
        cache: HashMap::new(),
    };
    let mut rec = Recorder {
        protocol,
        basis,
        traj: Trajectory {
            basis_kind: basis.kind(),
            correction_mode: cfg.correction_mode,
            times: vec![],
            states: vec![],
            fidelities: vec![],
            trace_distances: vec![],
            trace_errors: vec![],
            min_eigenvalues: vec![],
            hermiticity_errors: vec![],
            accepted_steps: 0,
            rejected_steps: 0,
            renormalizations: 0,
        },
    };
    let trace_dir = basis.identity_vector();
    let mut y = vectorize(rho0, basis)?.into_inner();
    rec.record(t0, &y, (trace_dir.dotc(&y) - C64::new(1.0, 0.0)).norm())?;

    let outputs: Vec<f64> = match cfg.output_points {
        Some(n) => (1..n).map(|k| if k + 1 == n { t1 } else { t0 + span * k as f64 / (n - 1) as f64 }).collect(),
        None => vec![t1],
    };
    let every_step = cfg.output_points.is_none();
    let max_step = cfg.max_step.unwrap_or(span / 100.0);
    let mut h = match cfg.method {
        Method::Rk4Fixed => cfg.dt.min(span),
        Method::Rk45Adaptive => (span * 1e-3).min(max_step),
    };
    let mut t = t0;
    for &stop in &outputs {
        while t < stop {
            let (t_new, y_new) = match cfg.method {
                Method::Rk4Fixed => {
                    let remaining = stop - t;
                    // land on the stop without a sliver step
                    let n = (remaining / cfg.dt - 1e-9).ceil().max(1.0);
                    let step = remaining / n;
                    let y_new = rk4_step(&mut rhs, t, &y, step)?;
                    let t_new = if n == 1.0 { stop } else { t + step };
                    (t_new, y_new)
                }
                Method::Rk45Adaptive => {
                    let (t_new, y_new, h_next) =
                        dopri_step(&mut rhs, t, &y, h.min(max_step), stop, cfg, &mut rec.traj.rejected_steps)?;
                    h = h_next;
                    (t_new, y_new)
                }
            };
            t = t_new;
            y = y_new;
            rec.traj.accepted_steps += 1;
            let tr = trace_dir.dotc(&y);
            let err = (tr - C64::new(1.0, 0.0)).norm();
            if err > RENORMALIZE_ABOVE {
                log::warn!("trace drift {err:.3e} at t = {t:.6}; renormalizing");
                y /= tr;
                rec.traj.renormalizations += 1;
            }
            if every_step || t >= stop {
                rec.record(t, &y, err)?;
            }
        }
    }
    Ok(rec.traj)
}

fn rk4_step(rhs: &mut Rhs, t: f64, y: &DVector<C64>, h: f64) -> Result<DVector<C64>> {
    let hc = C64::new(h, 0.0);
    let half = C64::new(0.5 * h, 0.0);
    let k1 = rhs.eval(t, y)?;
    let k2 = rhs.eval(t + 0.5 * h, &(y + &k1 * half))?;
    let k3 = rhs.eval(t + 0.5 * h, &(y + &k2 * half))?;
    let k4 = rhs.eval(t + h, &(y + &k3 * hc))?;
    Ok(y + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0))
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One accepted Dormand–Prince step from `t`, never past `stop`.
/// Returns the new time, state and the proposed next step.
fn dopri_step(
    rhs: &mut Rhs,
    t: f64,
    y: &DVector<C64>,
    mut h: f64,
    stop: f64,
    cfg: &IntegratorConfig,
    rejected: &mut usize,
) -> Result<(f64, DVector<C64>, f64)> {
    let h_min = 1e-14 * stop.abs().max(1.0);
    loop {
        let last = t + h >= stop - h_min;
        let step = if last { stop - t } else { h };
        let mut k: Vec<DVector<C64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                if A[s][j] != 0.0 {
                    ys += kj * C64::new(step * A[s][j], 0.0);
                }
            }
            let ts = if s >= 5 { t + step } else { t + C[s] * step };
            k.push(rhs.eval(ts, &ys)?);
        }
        let mut y5 = y.clone();
        let mut err = DVector::<C64>::zeros(y.len());
        for s in 0..7 {
            y5 += &k[s] * C64::new(step * B5[s], 0.0);
            err += &k[s] * C64::new(step * (B5[s] - B4[s]), 0.0);
        }
        let norm = (err
            .iter()
            .zip(y.iter().zip(y5.iter()))
            .map(|(e, (a, b))| {
                let sc = cfg.atol + cfg.rtol * a.norm().max(b.norm());
                (e.norm() / sc).powi(2)
            })
            .sum::<f64>()
            / y.len() as f64)
            .sqrt();
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        if norm <= 1.0 {
            let t_new = if last { stop } else { t + step };
            return Ok((t_new, y5, (h * factor).max(h_min)));
        }
        *rejected += 1;
        h = step * factor;
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t, dt: h });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::{supermatrix, GeneratorSpec, JumpChannel};
    use crate::operator_algebra::build_basis;
    use crate::operator_algebra::pauli::*;
    use crate::scenarios::{rotating_dissipation, RotatingDissipationParams};

    fn up() -> Operator {
        Operator::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
    }

    fn down() -> Operator {
        Operator::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn mixed() -> Operator {
        Operator::identity(2).scale_real(0.5)
    }

    fn decay(gamma: f64) -> DrivingProtocol {
        let g = GeneratorSpec::dissipative(2, vec![JumpChannel { operator: sigma_minus(), rate: gamma }]).unwrap();
        DrivingProtocol::constant(g, 0.0, 1.0 / gamma).unwrap()
    }

    #[test]
    fn metric_examples() {
        assert!((fidelity(&up(), &up()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&up(), &down()).unwrap(), 0.0);
        assert!((fidelity(&mixed(), &up()).unwrap() - 0.5).abs() < 1e-15);
        assert!((fidelity(&up(), &mixed()).unwrap() - 0.5).abs() < 1e-15);
        assert!((fidelity(&mixed(), &mixed()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(trace_distance(&up(), &up()).unwrap(), 0.0);
        assert!((trace_distance(&up(), &down()).unwrap() - 1.0).abs() < 1e-15);
        assert!((trace_distance(&mixed(), &up()).unwrap() - 0.5).abs() < 1e-15);
        let bad = Operator::from_real_rows(&[vec![1.5, 0.0], vec![0.0, -0.5]]).unwrap();
        assert_eq!(fidelity(&bad, &up()).unwrap_err().kind(), "invalid_state");
        assert_eq!(trace_distance(&up(), &Operator::identity(4)).unwrap_err().kind(), "dimension_mismatch");
    }

    #[test]
    fn amplitude_damping_decay_law() {
        let gamma = 0.7;
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = decay(gamma);
        let traj = integrate(&p, &b, &up(), &IntegratorConfig::default()).unwrap();
        let rho = traj.density(traj.len() - 1, &b).unwrap();
        assert!((traj.times.last().unwrap() - 1.0 / gamma).abs() < 1e-14);
        assert!((rho.get(0, 0).re - (-1.0f64).exp()).abs() < 1e-6, "{}", rho.get(0, 0));
        assert!(traj.max_trace_error() <= 1e-9);
        assert!(traj.min_eigenvalue() >= -1e-9);
        assert!(traj.max_hermiticity_error() <= 1e-9);
    }

    #[test]
    fn rk4_matches_exponential_with_fourth_order() {
        let b = build_basis(2, BasisKind::Units).unwrap();
        let g = GeneratorSpec::new(
            sigma_x().scale_real(0.8),
            vec![JumpChannel { operator: sigma_minus(), rate: 0.5 }],
        )
        .unwrap();
        let p = DrivingProtocol::constant(g.clone(), 0.0, 2.0).unwrap();
        let l = supermatrix(&g, &b).unwrap();
        let y0 = vectorize(&up(), &b).unwrap().into_inner();
        let exact = (l.matrix() * C64::new(2.0, 0.0)).exp() * &y0;
        let err = |dt: f64| {
            let cfg = IntegratorConfig { method: Method::Rk4Fixed, dt, ..Default::default() };
            let traj = integrate(&p, &b, &up(), &cfg).unwrap();
            (traj.states.last().unwrap().components() - &exact).norm()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
    }

    #[test]
    fn output_grid_and_t_final() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = decay(1.0);
        let cfg = IntegratorConfig { output_points: Some(11), t_final: Some(0.5), ..Default::default() };
        let traj = integrate(&p, &b, &up(), &cfg).unwrap();
        assert_eq!(traj.len(), 11);
        assert!((traj.times[5] - 0.25).abs() < 1e-15);
        assert_eq!(*traj.times.last().unwrap(), 0.5);
        let bad = IntegratorConfig { t_final: Some(2.0), ..Default::default() };
        assert!(integrate(&p, &b, &up(), &bad).is_err());
    }

    #[test]
    fn config_validation() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = decay(1.0);
        for cfg in [
            IntegratorConfig { dt: 0.0, ..Default::default() },
            IntegratorConfig { rtol: -1.0, ..Default::default() },
            IntegratorConfig { atol: f64::NAN, ..Default::default() },
        ] {
            assert_eq!(integrate(&p, &b, &up(), &cfg).unwrap_err().kind(), "invalid_parameter");
        }
        let not_state = Operator::identity(2);
        let err = integrate(&p, &b, &not_state, &IntegratorConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "invalid_state");
        assert_eq!("unitary-frame".parse::<CorrectionMode>().unwrap(), CorrectionMode::UnitaryFrame);
        assert!("bogus".parse::<CorrectionMode>().is_err());
    }

    #[test]
    fn targets() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = decay(1.0);
        let t = instantaneous_target(&p, 0.3, &b).unwrap();
        assert!(t.distance(&down()) < 1e-10);
        let still = GeneratorSpec::hamiltonian_only(sigma_z()).unwrap();
        let q = DrivingProtocol::constant(still, 0.0, 1.0).unwrap();
        assert!(instantaneous_target(&q, 0.5, &b).unwrap().distance(&down()) < 1e-12);
        let flat = DrivingProtocol::constant(GeneratorSpec::hamiltonian_only(Operator::identity(2)).unwrap(), 0.0, 1.0)
            .unwrap();
        assert_eq!(instantaneous_target(&flat, 0.5, &b).unwrap_err().kind(), "spectral_degeneracy");
    }

    #[test]
    fn rotating_tracking_contrast() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let p = rotating_dissipation(RotatingDissipationParams { theta0: std::f64::consts::FRAC_PI_3, omega: 5.0, gamma: 1.0 })
            .unwrap();
        let rho0 = instantaneous_target(&p, 0.0, &b).unwrap();
        let plain = integrate(&p, &b, &rho0, &IntegratorConfig::default()).unwrap();
        assert!(plain.max_tracking_error() >= 1e-2);
        let cfg = IntegratorConfig::default().with_correction(CorrectionMode::Analytic);
        let fixed = integrate(&p, &b, &rho0, &cfg).unwrap();
        assert!(fixed.max_tracking_error() <= 1e-6, "{}", fixed.max_tracking_error());
        assert!(fixed.max_trace_error() <= 1e-9);
    }

    #[test]
    fn csv_layout() {
        let b = build_basis(2, BasisKind::Pauli).unwrap();
        let cfg = IntegratorConfig { output_points: Some(3), ..Default::default() };
        let traj = integrate(&decay(1.0), &b, &up(), &cfg).unwrap();
        let csv = traj.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "t,fidelity,trace_distance,trace_error,min_eig");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
        let back: Trajectory = serde_json::from_str(&traj.to_json()).unwrap();
        assert_eq!(back, traj);
    }
}
