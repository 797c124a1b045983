use thiserror::Error;

/// Errors raised by the superadiabatic toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: &'static str },

    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("negative rate {rate} on jump channel {channel}")]
    NegativeRate { channel: usize, rate: f64 },

    #[error("hamiltonian is not hermitian (asymmetry {asymmetry:.3e})")]
    NonHermitianHamiltonian { asymmetry: f64 },

    #[error("time {t} outside protocol span [{t_start}, {t_end}]")]
    OutOfRange { t: f64, t_start: f64, t_end: f64 },

    #[error("finite-difference stencil [{lo}, {hi}] leaves protocol span [{t_start}, {t_end}]")]
    StencilOutOfRange { lo: f64, hi: f64, t_start: f64, t_end: f64 },

    #[error("eigen-solver failed to converge")]
    EigenSolverFailed,

    #[error("jordan chain for cluster {cluster} (eigenvalue {eigenvalue}) has residual {residual:.3e}")]
    DefectiveBeyondTolerance { cluster: usize, eigenvalue: String, residual: f64 },

    #[error("similarity transform is singular (condition number {condition:.3e})")]
    FrameSingular { condition: f64 },

    #[error("frame tracking lost at t = {t}: overlap {overlap:.4} on index {index}")]
    TrackingLost { t: f64, index: usize, overlap: f64 },

    #[error("eigenvalue clusters merge or split near t = {t}")]
    DegeneracyCrossing { t: f64 },

    #[error("grid index {index} lies on the frame path boundary (len {len})")]
    BoundaryIndex { index: usize, len: usize },

    #[error("steady state is not unique ({count} zero modes)")]
    NonUniqueSteadyState { count: usize },

    #[error("supermatrix has no zero eigenvalue (smallest singular value {smallest:.3e})")]
    NotAGenerator { smallest: f64 },

    #[error("eigenvalue gap {gap:.3e} between indices {i} and {j} is below tolerance {tol:.3e}")]
    NearDegenerate { i: usize, j: usize, gap: f64, tol: f64 },

    #[error("operation requires a diagonalizable frame (found a {size}x{size} jordan block)")]
    UnsupportedDefective { size: usize },

    #[error("operator is not unitary (deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("hamiltonian spectrum is degenerate (gap {gap:.3e} below {tol:.3e})")]
    SpectralDegeneracy { gap: f64, tol: f64 },

    #[error("generator is not trace preserving (violation {violation:.3e})")]
    NotTracePreserving { violation: f64 },

    #[error("generator is not hermiticity preserving (violation {violation:.3e})")]
    NotHermiticityPreserving { violation: f64 },

    #[error("invalid initial state: {reason}")]
    InvalidState { reason: String },

    #[error("step size underflow at t = {t} (dt = {dt:.3e})")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("protocol `{kind}` declares no unitary frame")]
    NoUnitaryFrame { kind: &'static str },

    #[error("protocol `{kind}` has no analytic correction")]
    NoAnalyticCorrection { kind: &'static str },

    #[error("inconsistent block sizes: sum {sum} != dimension {dim}")]
    InconsistentBlocks { sum: usize, dim: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Short machine-readable tag for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnsupportedDimension { .. } => "unsupported_dimension",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NegativeRate { .. } => "negative_rate",
            Error::NonHermitianHamiltonian { .. } => "non_hermitian_hamiltonian",
            Error::OutOfRange { .. } => "out_of_range",
            Error::StencilOutOfRange { .. } => "stencil_out_of_range",
            Error::EigenSolverFailed => "eigen_solver_failed",
            Error::DefectiveBeyondTolerance { .. } => "defective_beyond_tolerance",
            Error::FrameSingular { .. } => "frame_singular",
            Error::TrackingLost { .. } => "tracking_lost",
            Error::DegeneracyCrossing { .. } => "degeneracy_crossing",
            Error::BoundaryIndex { .. } => "boundary_index",
            Error::NonUniqueSteadyState { .. } => "non_unique_steady_state",
            Error::NotAGenerator { .. } => "not_a_generator",
            Error::NearDegenerate { .. } => "near_degenerate",
            Error::UnsupportedDefective { .. } => "unsupported_defective",
            Error::NonUnitary { .. } => "non_unitary",
            Error::SpectralDegeneracy { .. } => "spectral_degeneracy",
            Error::NotTracePreserving { .. } => "not_trace_preserving",
            Error::NotHermiticityPreserving { .. } => "not_hermiticity_preserving",
            Error::InvalidState { .. } => "invalid_state",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::NoUnitaryFrame { .. } => "no_unitary_frame",
            Error::NoAnalyticCorrection { .. } => "no_analytic_correction",
            Error::InconsistentBlocks { .. } => "inconsistent_blocks",
            Error::Config(_) => "config",
        }
    }

    /// Whether the error stems from bad input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::UnsupportedDimension { .. }
                | Error::NonFinite { .. }
                | Error::InvalidParameter { .. }
                | Error::NegativeRate { .. }
                | Error::NonHermitianHamiltonian { .. }
                | Error::OutOfRange { .. }
                | Error::InvalidState { .. }
                | Error::NoUnitaryFrame { .. }
                | Error::NoAnalyticCorrection { .. }
                | Error::InconsistentBlocks { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
