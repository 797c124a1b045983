//! Run configuration: file values, flag overrides and defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use superadiabatic::dynamics::{CorrectionMode, IntegratorConfig, Method};
use superadiabatic::liouvillian::{DrivingProtocol, ProtocolConfig, ProtocolKind};
use superadiabatic::operator_algebra::BasisKind;
use superadiabatic::scenarios::{BellDraggingParams, ClosedSpinParams, RotatingDissipationParams};
use superadiabatic::spectral::DEFAULT_CLUSTER_TOL;

use crate::error::{CliError, CliResult};

pub const DEFAULT_GRID_POINTS: usize = 201;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Rotating,
    Bell,
    #[serde(alias = "closed_spin")]
    ClosedSpin,
}

impl Scenario {
    fn protocol_kind(self) -> ProtocolKind {
        match self {
            Scenario::Rotating => ProtocolKind::RotatingDissipation,
            Scenario::Bell => ProtocolKind::BellDragging,
            Scenario::ClosedSpin => ProtocolKind::ClosedSpin,
        }
    }
}

/// Flat key set shared by config files, flags and the resolved summary.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_f: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    pub field: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rtol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl RunConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay!(
            self, top, scenario, theta0, omega, gamma, theta_f, duration, field, correction, method, basis, dt,
            rtol, atol, t_final, grid_points, cluster_tol, out, seed
        );
        self
    }

    /// Validates and fills every applicable default.
    pub fn resolve(self) -> CliResult<Resolved> {
        let scenario = self.scenario.ok_or_else(|| CliError::Config("no scenario given".into()))?;
        let mut cfg = self;
        // scenario defaults, but only for keys the scenario accepts
        match scenario {
            Scenario::Rotating => {
                let d = RotatingDissipationParams::default();
                cfg.theta0.get_or_insert(d.theta0);
                cfg.omega.get_or_insert(d.omega);
                cfg.gamma.get_or_insert(d.gamma);
            }
            Scenario::Bell => {
                let d = BellDraggingParams::default();
                cfg.gamma.get_or_insert(d.gamma);
                cfg.theta_f.get_or_insert(d.theta_f);
                cfg.duration.get_or_insert(d.duration);
            }
            Scenario::ClosedSpin => {
                let d = ClosedSpinParams::default();
                cfg.field.get_or_insert(d.field);
                cfg.theta0.get_or_insert(d.theta0);
                cfg.omega.get_or_insert(d.omega);
            }
        }
        let protocol = ProtocolConfig {
            kind: Some(scenario.protocol_kind()),
            theta0: cfg.theta0,
            omega: cfg.omega,
            gamma: cfg.gamma,
            theta_f: cfg.theta_f,
            duration: cfg.duration,
            field: cfg.field,
            ..Default::default()
        }
        .build()?;

        let mode: CorrectionMode = cfg.correction.as_deref().unwrap_or("general").parse()?;
        cfg.correction = Some(mode.name().to_string());
        let defaults = IntegratorConfig::default();
        let integrator = IntegratorConfig {
            method: *cfg.method.get_or_insert(defaults.method),
            dt: *cfg.dt.get_or_insert(defaults.dt),
            rtol: *cfg.rtol.get_or_insert(defaults.rtol),
            atol: *cfg.atol.get_or_insert(defaults.atol),
            correction_mode: mode,
            cluster_tol: *cfg.cluster_tol.get_or_insert(DEFAULT_CLUSTER_TOL),
            output_points: Some(*cfg.grid_points.get_or_insert(DEFAULT_GRID_POINTS)),
            t_final: cfg.t_final,
            ..defaults
        };
        integrator.validate()?;
        if let Some(tf) = cfg.t_final {
            if !(tf > protocol.t_start() && tf <= protocol.t_end()) {
                return Err(CliError::Config(format!(
                    "t_final {tf} outside ({}, {}]",
                    protocol.t_start(),
                    protocol.t_end()
                )));
            }
        }
        cfg.basis.get_or_insert(BasisKind::Pauli);
        cfg.out.get_or_insert_with(|| PathBuf::from("out"));
        cfg.seed.get_or_insert(0);
        Ok(Resolved { config: cfg, protocol, integrator })
    }
}

/// A fully validated run.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub protocol: DrivingProtocol,
    pub integrator: IntegratorConfig,
}

impl Resolved {
    pub fn basis_kind(&self) -> BasisKind {
        self.config.basis.expect("resolved")
    }

    pub fn out_dir(&self) -> &Path {
        self.config.out.as_deref().expect("resolved")
    }

    pub fn grid_points(&self) -> usize {
        self.config.grid_points.expect("resolved")
    }

    pub fn seed(&self) -> u64 {
        self.config.seed.expect("resolved")
    }

    /// End of the simulated interval.
    pub fn t_end(&self) -> f64 {
        self.config.t_final.unwrap_or(self.protocol.t_end())
    }

    /// Uniform grid over the simulated interval.
    pub fn grid(&self) -> Vec<f64> {
        let (t0, t1, n) = (self.protocol.t_start(), self.t_end(), self.grid_points());
        (0..n).map(|k| if k + 1 == n { t1 } else { t0 + (t1 - t0) * k as f64 / (n - 1) as f64 }).collect()
    }
}
