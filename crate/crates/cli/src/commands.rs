use std::path::Path;
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use superadiabatic::correction::{
    cancellation_residual, cp_diagnostic, default_frame_step, general_l_tqd_at, local_frame_derivative,
    CPReport, CorrectionTerm,
};
use superadiabatic::dynamics::{correction_term, instantaneous_target, integrate, CorrectionMode, Trajectory};
use superadiabatic::liouvillian::{supermatrix, GeneratorSpec, JumpChannel};
use superadiabatic::operator_algebra::{build_basis, BasisKind, HermitianBasis, Operator};
use superadiabatic::spectral::{spectral_frame, track_frames, FramePath, DEFAULT_CLUSTER_TOL};

use crate::config::Resolved;
use crate::error::{CliError, CliResult};

const CORRECTION_SAMPLES: usize = 11;
const CP_TOL: f64 = 1e-9;

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn basis(r: &Resolved) -> CliResult<HermitianBasis> {
    Ok(build_basis(r.protocol.dim(), r.basis_kind())?)
}

fn trajectory(r: &Resolved, b: &HermitianBasis, mode: CorrectionMode) -> CliResult<Trajectory> {
    let rho0 = instantaneous_target(&r.protocol, r.protocol.t_start(), b)?;
    let mut cfg = r.integrator.clone();
    cfg.correction_mode = mode;
    Ok(integrate(&r.protocol, b, &rho0, &cfg)?)
}

fn frame_path(r: &Resolved, b: &HermitianBasis) -> CliResult<FramePath> {
    Ok(track_frames(&r.protocol, b, &r.grid(), r.integrator.cluster_tol)?)
}

#[derive(Serialize)]
struct CorrectionSample {
    t: f64,
    term: Option<CorrectionTerm>,
    /// Decomposition of the corrected generator `L + L_tqd`.
    corrected_generator: CPReport,
}

fn correction_samples(r: &Resolved, b: &HermitianBasis) -> CliResult<Vec<CorrectionSample>> {
    let (t0, t1) = (r.protocol.t_start(), r.t_end());
    let h = default_frame_step(&r.protocol);
    let mut out = Vec::with_capacity(CORRECTION_SAMPLES);
    for k in 0..CORRECTION_SAMPLES {
        let t = if k + 1 == CORRECTION_SAMPLES { t1 } else { t0 + (t1 - t0) * k as f64 / (CORRECTION_SAMPLES - 1) as f64 };
        let term = correction_term(&r.protocol, t, b, r.integrator.correction_mode, r.integrator.cluster_tol, h)?;
        let mut g = r.protocol.supermatrix_at(t, b)?;
        if let Some(c) = &term {
            g = g.add(&c.supermatrix);
        }
        out.push(CorrectionSample { t, corrected_generator: cp_diagnostic(&g, b, CP_TOL)?, term });
    }
    Ok(out)
}

/// `run`: integrate one mode and write trajectory, spectrum, correction and summary.
pub fn run(r: &Resolved) -> CliResult<Value> {
    let start = Instant::now();
    let b = basis(r)?;
    let mode = r.integrator.correction_mode;
    let traj = trajectory(r, &b, mode)?;
    let path = frame_path(r, &b)?;
    let samples = correction_samples(r, &b)?;
    let cp_conditional = samples.iter().all(|s| s.corrected_generator.cp_conditional);
    let min_k = samples
        .iter()
        .map(|s| s.corrected_generator.min_kossakowski_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let dir = r.out_dir();
    write(dir, "trajectory.csv", &traj.to_csv())?;
    write(dir, "eigenvalues.csv", &path.to_csv())?;
    write(dir, "correction.json", &pretty(&json!({ "mode": mode.name(), "samples": samples })))?;
    let summary = json!({
        "max_tracking_error": traj.max_tracking_error(),
        "final_fidelity": traj.final_fidelity(),
        "min_fidelity": traj.min_fidelity(),
        "max_trace_error": traj.max_trace_error(),
        "min_state_eigenvalue": traj.min_eigenvalue(),
        "cp_conditional": cp_conditional,
        "min_kossakowski_eigenvalue": min_k,
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "min_frame_overlap": path.min_consecutive_overlap(),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "config": r.config,
    });
    write(dir, "summary.json", &pretty(&summary))?;
    Ok(summary)
}

/// `compare`: the same grid under several modes, side by side.
pub fn compare(r: &Resolved, modes: &[CorrectionMode]) -> CliResult<Value> {
    if modes.is_empty() {
        return Err(CliError::Config("no correction modes to compare".into()));
    }
    let b = basis(r)?;
    let results: Vec<CliResult<Trajectory>> = std::thread::scope(|s| {
        let b = &b;
        let handles: Vec<_> = modes.iter().map(|&m| s.spawn(move || trajectory(r, b, m))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let trajs = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let dir = r.out_dir();
    let mut csv = String::from("t");
    for m in modes {
        csv.push(',');
        csv.push_str(m.name());
    }
    csv.push('\n');
    for (k, t) in trajs[0].times.iter().enumerate() {
        csv.push_str(&format!("{t:.16e}"));
        for tr in &trajs {
            csv.push_str(&format!(",{:.16e}", tr.trace_distances[k]));
        }
        csv.push('\n');
    }
    write(dir, "comparison.csv", &csv)?;
    let mut per_mode = serde_json::Map::new();
    for (m, tr) in modes.iter().zip(&trajs) {
        write(dir, &format!("trajectory_{}.csv", m.name()), &tr.to_csv())?;
        per_mode.insert(
            m.name().into(),
            json!({ "max_tracking_error": tr.max_tracking_error(), "final_fidelity": tr.final_fidelity() }),
        );
    }
    let summary = json!({ "modes": per_mode, "config": r.config });
    write(dir, "comparison.json", &pretty(&summary))?;
    Ok(summary)
}

/// `inspect-spectrum`: tracked eigenvalues along the grid.
pub fn inspect_spectrum(r: &Resolved) -> CliResult<Value> {
    let b = basis(r)?;
    let path = frame_path(r, &b)?;
    write(r.out_dir(), "eigenvalues.csv", &path.to_csv())?;
    let first = path.frame(0);
    let summary = json!({
        "points": path.len(),
        "block_sizes": first.block_sizes(),
        "cluster_sizes": first.cluster_sizes(),
        "min_consecutive_overlap": path.min_consecutive_overlap(),
        "max_eigenvalue_drift": path.max_eigenvalue_drift(),
        "max_eigenvalue_step": path.max_eigenvalue_step(),
        "config": r.config,
    });
    write(r.out_dir(), "spectrum.json", &pretty(&summary))?;
    Ok(summary)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tol: f64,
    pass: bool,
}

fn check(name: &'static str, value: f64, tol: f64) -> Check {
    Check { name, value, tol, pass: value <= tol }
}

fn random_generator(rng: &mut ChaCha8Rng) -> GeneratorSpec {
    let mut op = || {
        let rows: Vec<Vec<C64>> = (0..2)
            .map(|_| (0..2).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .collect();
        Operator::from_rows(&rows).expect("2x2")
    };
    let a = op();
    let h = (&a + &a.adjoint()).scale_real(0.5);
    let jumps = (0..2).map(|_| JumpChannel { operator: op(), rate: 0.5 }).collect();
    GeneratorSpec::new(h, jumps).expect("valid generator")
}

/// Largest distance when each eigenvalue of `a` takes its nearest unused partner in `b`.
fn spectrum_gap(a: &[C64], mut b: Vec<C64>) -> f64 {
    let mut worst = 0.0f64;
    for x in a {
        let Some((i, d)) = b.iter().map(|y| (x - y).norm()).enumerate().min_by(|p, q| p.1.total_cmp(&q.1)) else {
            return f64::INFINITY;
        };
        worst = worst.max(d);
        b.swap_remove(i);
    }
    worst
}

/// `check`: invariant suite on seeded random generators and the scenario.
pub fn check_suite(r: &Resolved) -> CliResult<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed());
    let pauli = build_basis(2, BasisKind::Pauli)?;
    let units = build_basis(2, BasisKind::Units)?;
    let (mut row0, mut recon, mut basis_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let g = random_generator(&mut rng);
        let lp = supermatrix(&g, &pauli)?;
        row0 = row0.max(lp.first_row_norm());
        recon = recon.max(cp_diagnostic(&lp, &pauli, CP_TOL)?.reconstruction_error);
        let a = spectral_frame(&lp, DEFAULT_CLUSTER_TOL)?.column_eigenvalues();
        let c = spectral_frame(&supermatrix(&g, &units)?, DEFAULT_CLUSTER_TOL)?.column_eigenvalues();
        basis_gap = basis_gap.max(spectrum_gap(&a, c));
    }

    let b = basis(r)?;
    let path = frame_path(r, &b)?;
    let (mut chain, mut biorth) = (0.0f64, 0.0f64);
    for (t, f) in path.times().iter().zip(path.frames()) {
        chain = chain.max(f.chain_residual(&r.protocol.supermatrix_at(*t, &b)?));
        biorth = biorth.max(f.biorthonormality_error());
    }
    let h = default_frame_step(&r.protocol);
    let mut cancel = 0.0f64;
    let tol = r.integrator.cluster_tol;
    for &t in path.times().iter().step_by((path.len() / 10).max(1)) {
        let l = r.protocol.supermatrix_at(t, &b)?;
        let l_tqd = general_l_tqd_at(&r.protocol, t, &b, tol, h)?;
        let (frame, cdot) = local_frame_derivative(&r.protocol, t, &b, tol, h / 2.0)?;
        cancel = cancel.max(cancellation_residual(&frame, &l, &l_tqd, &cdot));
    }
    let checks = vec![
        check("trace_preservation_row0", row0, 1e-12),
        check("cp_reconstruction", recon, 1e-8),
        check("spectrum_basis_independence", basis_gap, 1e-9),
        check("chain_residual", chain, 1e-8),
        check("biorthonormality", biorth, 1e-9),
        check("cancellation_residual", cancel, 1e-6),
    ];
    let failed = checks.iter().filter(|c| !c.pass).count();
    let report = json!({ "seed": r.seed(), "checks": checks, "failed": failed, "config": r.config });
    write(r.out_dir(), "check.json", &pretty(&report))?;
    if failed > 0 {
        eprintln!("{}", pretty(&report));
        return Err(CliError::ChecksFailed { failed });
    }
    Ok(report)
}
