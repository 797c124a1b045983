use std::fmt;

use serde::{Deserialize, Serialize};

use super::{superoperator_matrix, supermatrix, GeneratorSpec, JumpChannel, SuperMatrix};
use crate::error::{Error, Result};
use crate::operator_algebra::{HermitianBasis, Operator};
use crate::scenarios::{
    self, BellDraggingParams, ClosedSpinParams, RotatingDissipationParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    RotatingDissipation,
    BellDragging,
    ClosedSpin,
    Tabulated,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::RotatingDissipation => "rotating_dissipation",
            ProtocolKind::BellDragging => "bell_dragging",
            ProtocolKind::ClosedSpin => "closed_spin",
            ProtocolKind::Tabulated => "tabulated",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One sample of a tabulated protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedSample {
    pub t: f64,
    pub hamiltonian: Operator,
    #[serde(default)]
    pub jumps: Vec<JumpSample>,
}

pub type JumpSample = JumpChannel;

/// Generator samples joined by piecewise-cubic Hermite interpolation
/// (Catmull–Rom slopes, C¹ in time). A single sample is a constant protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedSchedule {
    times: Vec<f64>,
    generators: Vec<GeneratorSpec>,
}

impl TabulatedSchedule {
    pub fn new(samples: Vec<(f64, GeneratorSpec)>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter { name: "samples", reason: "empty table".into() });
        }
        let dim = samples[0].1.dim();
        let channels = samples[0].1.jumps().len();
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidParameter {
                    name: "samples",
                    reason: "sample times must be strictly increasing".into(),
                });
            }
        }
        for (_, g) in &samples {
            if g.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: g.dim() });
            }
            if g.jumps().len() != channels {
                return Err(Error::InvalidParameter {
                    name: "samples",
                    reason: "every sample needs the same number of jump channels".into(),
                });
            }
        }
        let (times, generators) = samples.into_iter().unzip();
        Ok(TabulatedSchedule { times, generators })
    }

    /// Real interpolation weights over the samples at time `t` (clamped to the table).
    fn weights(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        let mut w = vec![0.0; n];
        if n == 1 {
            w[0] = 1.0;
            return w;
        }
        let t = t.clamp(self.times[0], self.times[n - 1]);
        let i = match self.times.iter().rposition(|&ti| ti <= t) {
            Some(i) if i == n - 1 => n - 2,
            Some(i) => i,
            None => 0,
        };
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
        let h10 = s.powi(3) - 2.0 * s * s + s;
        let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
        let h11 = s.powi(3) - s * s;
        w[i] += h00;
        w[i + 1] += h01;
        // slope at sample k as a combination of sample values
        let mut add_slope = |k: usize, coef: f64| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            let span = self.times[b] - self.times[a];
            w[b] += coef / span;
            w[a] -= coef / span;
        };
        add_slope(i, h10 * dt);
        add_slope(i + 1, h11 * dt);
        w
    }

    fn eval(&self, t: f64) -> GeneratorSpec {
        let w = self.weights(t);
        let dim = self.generators[0].dim();
        let mut h = Operator::zeros(dim);
        let channels = self.generators[0].jumps().len();
        let mut ops = vec![Operator::zeros(dim); channels];
        let mut rates = vec![0.0; channels];
        for (wk, g) in w.iter().zip(&self.generators) {
            if *wk == 0.0 {
                continue;
            }
            h = &h + &g.hamiltonian().scale_real(*wk);
            for (c, ch) in g.jumps().iter().enumerate() {
                ops[c] = &ops[c] + &ch.operator.scale_real(*wk);
                rates[c] += wk * ch.rate;
            }
        }
        let jumps = ops
            .into_iter()
            .zip(rates)
            .map(|(operator, rate)| JumpChannel { operator, rate: rate.max(0.0) })
            .collect();
        GeneratorSpec { hamiltonian: h.hermitian_part(), jumps }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Model {
    Rotating(RotatingDissipationParams),
    Bell(BellDraggingParams),
    ClosedSpin(ClosedSpinParams),
    Tabulated(TabulatedSchedule),
}

/// A time-parameterized Lindblad generator over `[t_start, t_end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DrivingProtocol {
    model: Model,
    t_start: f64,
    t_end: f64,
}

impl DrivingProtocol {
    fn build(model: Model, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("span [{t_start}, {t_end}] is empty"),
            });
        }
        Ok(DrivingProtocol { model, t_start, t_end })
    }

    pub(crate) fn rotating(p: RotatingDissipationParams, t_start: f64, t_end: f64) -> Result<Self> {
        Self::build(Model::Rotating(p), t_start, t_end)
    }

    pub(crate) fn bell(p: BellDraggingParams, t_start: f64, t_end: f64) -> Result<Self> {
        Self::build(Model::Bell(p), t_start, t_end)
    }

    pub(crate) fn closed_spin(p: ClosedSpinParams, t_start: f64, t_end: f64) -> Result<Self> {
        Self::build(Model::ClosedSpin(p), t_start, t_end)
    }

    pub fn tabulated(schedule: TabulatedSchedule) -> Result<Self> {
        let t0 = schedule.times[0];
        let t1 = *schedule.times.last().unwrap();
        if schedule.times.len() == 1 {
            return Err(Error::InvalidParameter {
                name: "samples",
                reason: "a single sample needs an explicit span; use `constant`".into(),
            });
        }
        Self::build(Model::Tabulated(schedule), t0, t1)
    }

    /// Time-independent protocol holding `gen` over the span.
    pub fn constant(gen: GeneratorSpec, t_start: f64, t_end: f64) -> Result<Self> {
        let schedule = TabulatedSchedule { times: vec![t_start], generators: vec![gen] };
        Self::build(Model::Tabulated(schedule), t_start, t_end)
    }

    /// Same protocol over a different time span.
    pub fn with_span(mut self, t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_end > t_start) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("span [{t_start}, {t_end}] is empty"),
            });
        }
        self.t_start = t_start;
        self.t_end = t_end;
        Ok(self)
    }

    pub fn kind(&self) -> ProtocolKind {
        match self.model {
            Model::Rotating(_) => ProtocolKind::RotatingDissipation,
            Model::Bell(_) => ProtocolKind::BellDragging,
            Model::ClosedSpin(_) => ProtocolKind::ClosedSpin,
            Model::Tabulated(_) => ProtocolKind::Tabulated,
        }
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn dim(&self) -> usize {
        self.eval(self.t_start).dim()
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }

    /// Default step for `supermatrix_derivative`.
    pub fn default_derivative_step(&self) -> f64 {
        1e-6 * self.span()
    }

    /// Closed-form evaluation, valid for any `t` (tabulated tables clamp).
    pub(crate) fn eval(&self, t: f64) -> GeneratorSpec {
        match &self.model {
            Model::Rotating(p) => scenarios::rotating_generator(p, t),
            Model::Bell(p) => scenarios::bell_generator(p, t),
            Model::ClosedSpin(p) => scenarios::closed_spin_generator(p, t),
            Model::Tabulated(s) => s.eval(t),
        }
    }

    pub fn generator_at(&self, t: f64) -> Result<GeneratorSpec> {
        if !self.contains(t) {
            return Err(Error::OutOfRange { t, t_start: self.t_start, t_end: self.t_end });
        }
        Ok(self.eval(t))
    }

    pub fn supermatrix_at(&self, t: f64, basis: &HermitianBasis) -> Result<SuperMatrix> {
        supermatrix(&self.generator_at(t)?, basis)
    }

    /// Declared unitary frame `W(t)` and its derivative, with jump operators
    /// (and Hamiltonian) satisfying `X(t) = W(t) X_ref W(t)†` up to phases.
    pub fn unitary_frame(&self, t: f64) -> Option<(Operator, Operator)> {
        match &self.model {
            Model::Rotating(p) => Some(scenarios::z_rotation_frame(p.omega, t)),
            Model::ClosedSpin(p) => Some(scenarios::z_rotation_frame(p.omega, t)),
            Model::Bell(p) => Some(scenarios::bell_frame(p, t)),
            Model::Tabulated(_) => None,
        }
    }

    /// Time-independent generator the frame conjugates.
    pub fn reference_generator(&self) -> Option<GeneratorSpec> {
        match &self.model {
            Model::Rotating(p) => Some(scenarios::rotating_reference(p)),
            Model::ClosedSpin(p) => Some(scenarios::closed_spin_reference(p)),
            Model::Bell(p) => Some(scenarios::bell_reference(p)),
            Model::Tabulated(_) => None,
        }
    }

    /// Closed-form counterdiabatic Hamiltonian for the built-in scenarios.
    pub fn analytic_correction(&self, t: f64) -> Result<Operator> {
        match &self.model {
            Model::Rotating(p) => Ok(scenarios::analytic_htqd_rotating(p, t)),
            Model::ClosedSpin(p) => Ok(scenarios::analytic_htqd_closed_spin(p, t)),
            Model::Bell(p) => Ok(scenarios::analytic_htqd_bell(p.theta_dot(t))),
            Model::Tabulated(_) => Err(Error::NoAnalyticCorrection { kind: "tabulated" }),
        }
    }

    /// Closed-form instantaneous target state for the built-in scenarios.
    pub fn analytic_target(&self, t: f64) -> Option<Operator> {
        match &self.model {
            Model::Rotating(p) => Some(scenarios::rotating_dark_state(p, t)),
            Model::ClosedSpin(p) => Some(scenarios::closed_spin_ground_state(p, t)),
            Model::Bell(p) => Some(scenarios::bell_fixed_point(p.theta(t))),
            Model::Tabulated(_) => None,
        }
    }

    /// Exact `L̇ = [S, L]` for framed protocols, where `S ρ = [Ẇ W†, ρ]`.
    pub fn analytic_supermatrix_derivative(
        &self,
        t: f64,
        basis: &HermitianBasis,
    ) -> Result<Option<SuperMatrix>> {
        let Some((w, wdot)) = self.unitary_frame(t) else {
            return Ok(None);
        };
        let gen = &wdot * &w.adjoint();
        let s = superoperator_matrix(basis, |rho| crate::operator_algebra::commutator(&gen, rho))?;
        let l = self.supermatrix_at(t, basis)?;
        let m = s.matrix() * l.matrix() - l.matrix() * s.matrix();
        Ok(Some(SuperMatrix::with_basis(m, Some(basis.kind()))))
    }
}

/// Config block describing a protocol (JSON or TOML).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub kind: Option<ProtocolKind>,
    pub theta0: Option<f64>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub theta_f: Option<f64>,
    #[serde(rename = "T")]
    pub duration: Option<f64>,
    #[serde(rename = "B")]
    pub field: Option<f64>,
    pub t_start: Option<f64>,
    pub t_end: Option<f64>,
    pub samples: Option<Vec<TabulatedSample>>,
}

impl ProtocolConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the protocol; unset scenario parameters take their defaults.
    pub fn build(&self) -> Result<DrivingProtocol> {
        let kind = self.kind.ok_or_else(|| Error::Config("missing `kind`".into()))?;
        let forbid = |name: &str, present: bool| -> Result<()> {
            if present {
                Err(Error::Config(format!("key `{name}` does not apply to protocol `{kind}`")))
            } else {
                Ok(())
            }
        };
        let protocol = match kind {
            ProtocolKind::RotatingDissipation => {
                forbid("theta_f", self.theta_f.is_some())?;
                forbid("T", self.duration.is_some())?;
                forbid("B", self.field.is_some())?;
                forbid("samples", self.samples.is_some())?;
                let d = RotatingDissipationParams::default();
                scenarios::rotating_dissipation(RotatingDissipationParams {
                    theta0: self.theta0.unwrap_or(d.theta0),
                    omega: self.omega.unwrap_or(d.omega),
                    gamma: self.gamma.unwrap_or(d.gamma),
                })?
            }
            ProtocolKind::BellDragging => {
                forbid("theta0", self.theta0.is_some())?;
                forbid("omega", self.omega.is_some())?;
                forbid("B", self.field.is_some())?;
                forbid("samples", self.samples.is_some())?;
                let d = BellDraggingParams::default();
                scenarios::bell_dragging(BellDraggingParams {
                    gamma: self.gamma.unwrap_or(d.gamma),
                    theta_f: self.theta_f.unwrap_or(d.theta_f),
                    duration: self.duration.unwrap_or(d.duration),
                })?
            }
            ProtocolKind::ClosedSpin => {
                forbid("gamma", self.gamma.is_some())?;
                forbid("theta_f", self.theta_f.is_some())?;
                forbid("T", self.duration.is_some())?;
                forbid("samples", self.samples.is_some())?;
                let d = ClosedSpinParams::default();
                scenarios::closed_spin(ClosedSpinParams {
                    field: self.field.unwrap_or(d.field),
                    theta0: self.theta0.unwrap_or(d.theta0),
                    omega: self.omega.unwrap_or(d.omega),
                })?
            }
            ProtocolKind::Tabulated => {
                let samples = self
                    .samples
                    .as_ref()
                    .ok_or_else(|| Error::Config("tabulated protocol needs `samples`".into()))?;
                let mut table = Vec::with_capacity(samples.len());
                for s in samples {
                    table.push((s.t, GeneratorSpec::new(s.hamiltonian.clone(), s.jumps.clone())?));
                }
                if table.len() == 1 {
                    let (t0, g) = table.pop().unwrap();
                    let t1 = self
                        .t_end
                        .ok_or_else(|| Error::Config("single-sample table needs `t_end`".into()))?;
                    return DrivingProtocol::constant(g, self.t_start.unwrap_or(t0), t1);
                }
                DrivingProtocol::tabulated(TabulatedSchedule::new(table)?)?
            }
        };
        let t0 = self.t_start.unwrap_or(protocol.t_start());
        let t1 = self.t_end.unwrap_or(protocol.t_end());
        protocol.with_span(t0, t1)
    }
}
