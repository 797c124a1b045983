//! Numerical Jordan decomposition of supermatrices, biorthonormal frames
//! `C`, `C⁻¹`, and continuity tracking of frames along a protocol.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::liouvillian::{DrivingProtocol, SuperMatrix};
use crate::linalg;
use crate::operator_algebra::{devectorize_slice, BasisKind, CoherenceVector, HermitianBasis, Operator, ONE, ZERO};

/// Default relative tolerance for merging eigenvalues into one cluster.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;
/// Relative singular-value threshold used for numerical ranks.
const RANK_TOL: f64 = 1e-7;
/// Largest acceptable chain residual, relative to `max(‖L‖, 1)`.
const CHAIN_TOL: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;
/// Minimum per-index overlap between consecutive aligned frames.
pub const MIN_OVERLAP: f64 = 0.9;
/// Absolute tolerance for the zero eigenvalue in `steady_state`.
const ZERO_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeKind {
    /// Chains scaled so the bottom vector has unit norm and a real positive
    /// largest component.
    LargestComponent,
    /// Cluster bases rotated to maximal continuity with a reference frame.
    Aligned,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Gauge {
    pub kind: GaugeKind,
    pub condition_number: f64,
}

/// Jordan data of a supermatrix at one instant.
///
/// Columns of `right` are the quasi-eigenvectors ordered by cluster, then by
/// Jordan block, then by chain position; rows of `left` form `C⁻¹`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFrame {
    t: Option<f64>,
    eigenvalues: Vec<C64>,
    block_sizes: Vec<usize>,
    cluster_sizes: Vec<usize>,
    right: DMatrix<C64>,
    left: DMatrix<C64>,
    gauge: Gauge,
    basis: Option<BasisKind>,
}

impl SpectralFrame {
    pub fn t(&self) -> Option<f64> {
        self.t
    }

    /// One eigenvalue per Jordan block.
    pub fn eigenvalues(&self) -> &[C64] {
        &self.eigenvalues
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Total size of each eigenvalue cluster (blocks sharing an eigenvalue).
    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn dim2(&self) -> usize {
        self.right.nrows()
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn basis_kind(&self) -> Option<BasisKind> {
        self.basis
    }

    /// `C`, right quasi-eigenvectors as columns.
    pub fn right_matrix(&self) -> &DMatrix<C64> {
        &self.right
    }

    /// `C⁻¹`, left quasi-eigenvectors as rows.
    pub fn left_matrix(&self) -> &DMatrix<C64> {
        &self.left
    }

    pub fn right_vectors(&self) -> Vec<CoherenceVector> {
        self.right.column_iter().map(|c| CoherenceVector::new(c.into_owned())).collect()
    }

    /// Left vectors as plain component lists (row entries, not conjugated).
    pub fn left_vectors(&self) -> Vec<CoherenceVector> {
        self.left.row_iter().map(|r| CoherenceVector::new(r.transpose())).collect()
    }

    /// Eigenvalue attached to each column.
    pub fn column_eigenvalues(&self) -> Vec<C64> {
        self.eigenvalues
            .iter()
            .zip(&self.block_sizes)
            .flat_map(|(&l, &m)| std::iter::repeat_n(l, m))
            .collect()
    }

    /// Position of each column inside its Jordan chain.
    pub fn chain_positions(&self) -> Vec<usize> {
        self.block_sizes.iter().flat_map(|&m| 0..m).collect()
    }

    pub fn cluster_ranges(&self) -> Vec<Range<usize>> {
        ranges(&self.cluster_sizes)
    }

    /// Jordan block sizes grouped by cluster.
    pub fn cluster_blocks(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.cluster_sizes.len());
        let mut blocks = self.block_sizes.iter();
        for &size in &self.cluster_sizes {
            let mut group = Vec::new();
            let mut sum = 0;
            while sum < size {
                let b = *blocks.next().expect("blocks cover clusters");
                sum += b;
                group.push(b);
            }
            out.push(group);
        }
        out
    }

    /// One representative eigenvalue per cluster.
    pub fn cluster_eigenvalues(&self) -> Vec<C64> {
        let col = self.column_eigenvalues();
        self.cluster_ranges().into_iter().map(|r| col[r.start]).collect()
    }

    pub fn is_diagonalizable(&self) -> bool {
        self.block_sizes.iter().all(|&m| m == 1)
    }

    /// Block-bidiagonal Jordan matrix `L_J`.
    pub fn jordan_matrix(&self) -> DMatrix<C64> {
        let n = self.dim2();
        let mut j = DMatrix::zeros(n, n);
        let lam = self.column_eigenvalues();
        let pos = self.chain_positions();
        for i in 0..n {
            j[(i, i)] = lam[i];
            if pos[i] > 0 {
                j[(i - 1, i)] = ONE;
            }
        }
        j
    }

    /// Largest `‖L D_μ - D_{μ-1} - λ D_μ‖` over all chain members.
    pub fn chain_residual(&self, l: &SuperMatrix) -> f64 {
        let lam = self.column_eigenvalues();
        let pos = self.chain_positions();
        let ld = l.matrix() * &self.right;
        (0..self.dim2())
            .map(|i| {
                let mut r = ld.column(i) - self.right.column(i) * lam[i];
                if pos[i] > 0 {
                    r -= self.right.column(i - 1);
                }
                r.norm()
            })
            .fold(0.0, f64::max)
    }

    /// Largest entry of `|C⁻¹ C - 1|`.
    pub fn biorthonormality_error(&self) -> f64 {
        let p = &self.left * &self.right;
        max_abs_dev_identity(&p)
    }

    /// `‖C L_J C⁻¹ - L‖_F`.
    pub fn reconstruction_error(&self, l: &SuperMatrix) -> f64 {
        (&self.right * self.jordan_matrix() * &self.left - l.matrix()).norm()
    }
}

fn max_abs_dev_identity(p: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((p[(i, j)] - target).norm());
        }
    }
    worst
}

pub(crate) fn ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&m| {
            let r = start..start + m;
            start += m;
            r
        })
        .collect()
}

/// Multiplies `v` by the scalar that gives it unit norm and a real positive
/// largest-magnitude component; returns that scalar.
fn gauge_factor(v: &DVector<C64>) -> C64 {
    let norm = v.norm();
    let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(ONE);
    linalg::phase(big).conj() / norm
}

/// Single-linkage clustering; returns `(mean, multiplicity)` per cluster.
fn cluster_eigenvalues(ev: &[C64], tol: f64) -> Vec<(C64, usize)> {
    let n = ev.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn find(label: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while label[r] != r {
            r = label[r];
        }
        label[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (ev[i] - ev[j]).norm() <= tol {
                let (a, b) = (find(&mut label, i), find(&mut label, j));
                if a != b {
                    label[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, C64, usize)> = Vec::new();
    for (i, &e) in ev.iter().enumerate().take(n) {
        let r = find(&mut label, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => {
                g.1 += e;
                g.2 += 1;
            }
            None => groups.push((r, e, 1)),
        }
    }
    let mut out: Vec<(C64, usize)> =
        groups.into_iter().map(|(_, s, m)| (s / m as f64, m)).collect();
    out.sort_by(|a, b| {
        if (a.0.re - b.0.re).abs() > tol {
            b.0.re.total_cmp(&a.0.re)
        } else {
            b.0.im.total_cmp(&a.0.im)
        }
    });
    out
}

/// Jordan decomposition of `l` with eigenvalues merged at relative tolerance
/// `cluster_tol` (scaled by `‖L‖_F`).
pub fn spectral_frame(l: &SuperMatrix, cluster_tol: f64) -> Result<SpectralFrame> {
    build_frame(l, cluster_tol, None)
}

/// Like [`spectral_frame`] but records the sampling time.
pub fn spectral_frame_at(l: &SuperMatrix, cluster_tol: f64, t: f64) -> Result<SpectralFrame> {
    build_frame(l, cluster_tol, Some(t))
}

/// Frame of the protocol's supermatrix at time `t`.
pub fn frame_at(
    protocol: &DrivingProtocol,
    t: f64,
    basis: &HermitianBasis,
    cluster_tol: f64,
) -> Result<SpectralFrame> {
    spectral_frame_at(&protocol.supermatrix_at(t, basis)?, cluster_tol, t)
}

fn build_frame(l: &SuperMatrix, cluster_tol: f64, t: Option<f64>) -> Result<SpectralFrame> {
    let a = l.matrix();
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite { what: "supermatrix" });
    }
    if !(cluster_tol > 0.0) {
        return Err(Error::InvalidParameter { name: "cluster_tol", reason: "must be positive".into() });
    }
    let n = a.nrows();
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let ev = linalg::eigenvalues(a)?;
    let clusters = cluster_eigenvalues(&ev, cluster_tol * scale);

    let mut columns: Vec<DVector<C64>> = Vec::with_capacity(n);
    let mut eigenvalues = Vec::new();
    let mut block_sizes = Vec::new();
    let mut cluster_sizes = Vec::new();
    for (ci, &(lam, m)) in clusters.iter().enumerate() {
        let shifted = a - DMatrix::<C64>::identity(n, n) * lam;
        let svd = linalg::right_svd(&shifted)?;
        let nullity = svd.values.iter().filter(|&&s| s <= RANK_TOL * scale).count();
        let g = nullity.clamp(1, m);
        if g == m {
            let basis = svd.vectors.columns(n - m, m);
            for c in basis.column_iter() {
                let v = c.into_owned();
                let f = gauge_factor(&v);
                columns.push(v * f);
                eigenvalues.push(lam);
                block_sizes.push(1);
            }
        } else {
            for chain in jordan_chains(&shifted, m, ci, lam, scale)? {
                eigenvalues.push(lam);
                block_sizes.push(chain.len());
                columns.extend(chain);
            }
        }
        cluster_sizes.push(m);
    }
    let right = DMatrix::from_columns(&columns);
    finish_frame(right, eigenvalues, block_sizes, cluster_sizes, GaugeKind::LargestComponent, t, l.basis_kind())
}

fn finish_frame(
    right: DMatrix<C64>,
    eigenvalues: Vec<C64>,
    block_sizes: Vec<usize>,
    cluster_sizes: Vec<usize>,
    kind: GaugeKind,
    t: Option<f64>,
    basis: Option<BasisKind>,
) -> Result<SpectralFrame> {
    let condition = linalg::condition_number(&right)?;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::FrameSingular { condition });
    }
    let left = linalg::inverse(&right).ok_or(Error::FrameSingular { condition })?;
    Ok(SpectralFrame {
        t,
        eigenvalues,
        block_sizes,
        cluster_sizes,
        right,
        left,
        gauge: Gauge { kind, condition_number: condition },
        basis,
    })
}

/// Jordan chains `D_0 .. D_{M-1}` of one defective cluster, longest first.
fn jordan_chains(
    shifted: &DMatrix<C64>,
    m: usize,
    cluster: usize,
    lam: C64,
    scale: f64,
) -> Result<Vec<Vec<DVector<C64>>>> {
    let defect = |residual: f64| Error::DefectiveBeyondTolerance {
        cluster,
        eigenvalue: format!("{lam}"),
        residual,
    };
    let mut power = shifted.clone();
    for _ in 1..m {
        power = &power * shifted;
    }
    let q = linalg::null_space(&power, m)?;
    let nil = q.adjoint() * shifted * &q;
    let nil = &nil / C64::new(nil.norm().max(f64::MIN_POSITIVE), 0.0);

    // kernels of N^s, s = 0, 1, ...
    let mut kernels: Vec<DMatrix<C64>> = vec![DMatrix::zeros(m, 0)];
    let mut np = DMatrix::<C64>::identity(m, m);
    while kernels.last().unwrap().ncols() < m {
        np = &np * &nil;
        let svd = linalg::right_svd(&np)?;
        let mut k = svd.values.iter().filter(|&&s| s <= RANK_TOL).count();
        if kernels.len() >= m {
            k = m;
        }
        let prev = kernels.last().unwrap().ncols();
        if k <= prev {
            let gap = svd.values.get(m - prev - 1).copied().unwrap_or(0.0);
            return Err(defect(gap));
        }
        kernels.push(svd.vectors.columns(m - k, k).into_owned());
    }
    let depth = kernels.len() - 1;
    let at_least = |s: usize| -> usize {
        if s > depth {
            0
        } else {
            kernels[s].ncols() - kernels[s - 1].ncols()
        }
    };

    // chain tops in N-coordinates, chosen from the longest chains down
    let mut tops: Vec<(usize, DVector<C64>)> = Vec::new();
    for s in (1..=depth).rev() {
        let need = at_least(s) - at_least(s + 1);
        if need == 0 {
            continue;
        }
        let mut w: Vec<DVector<C64>> = kernels[s - 1].column_iter().map(|c| c.into_owned()).collect();
        for (len, v) in &tops {
            let mut x = v.clone();
            for _ in 0..(len - s) {
                x = &nil * x;
            }
            w.push(x);
        }
        let wo = if w.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            linalg::orthonormal_columns(&DMatrix::from_columns(&w), 1e-10)
        };
        let ks = &kernels[s];
        let resid = ks - &wo * (wo.adjoint() * ks);
        let picked = linalg::dominant_left_vectors(&resid, need)?;
        for c in picked.column_iter() {
            tops.push((s, c.into_owned()));
        }
    }

    let norm_ref = scale.max(1.0);
    let mut chains = Vec::with_capacity(tops.len());
    for (len, v) in tops {
        let mut chain = vec![&q * v];
        for _ in 1..len {
            let next = shifted * chain.last().unwrap();
            chain.push(next);
        }
        chain.reverse();
        let f = gauge_factor(&chain[0]);
        for d in chain.iter_mut() {
            *d *= f;
        }
        let residual = (shifted * &chain[0]).norm() / norm_ref;
        if !(residual <= CHAIN_TOL) {
            return Err(defect(residual));
        }
        chains.push(chain);
    }
    Ok(chains)
}

/// `(C, C⁻¹)` of a frame.
pub fn similarity(frame: &SpectralFrame) -> Result<(SuperMatrix, SuperMatrix)> {
    let condition = frame.gauge.condition_number;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::FrameSingular { condition });
    }
    Ok((
        SuperMatrix::with_basis(frame.right.clone(), frame.basis),
        SuperMatrix::with_basis(frame.left.clone(), frame.basis),
    ))
}

/// Maximum-weight perfect assignment on a square score matrix (Hungarian
/// method); returns `col[row]`.
pub(crate) fn max_assignment(score: &DMatrix<f64>) -> Vec<usize> {
    let n = score.nrows();
    let big = score.iter().copied().fold(0.0f64, |a, b| a.max(b.abs())) + 1.0;
    let cost = |i: usize, j: usize| big - score[(i, j)];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            col[p[j] - 1] = j - 1;
        }
    }
    col
}

/// Orthogonal projection of `g` onto the matrices commuting with the nilpotent
/// part of a Jordan structure with the given block sizes.
fn project_commutant(g: &DMatrix<C64>, blocks: &[usize]) -> DMatrix<C64> {
    if blocks.iter().all(|&b| b == 1) {
        return g.clone();
    }
    let r = ranges(blocks);
    let mut out = DMatrix::zeros(g.nrows(), g.ncols());
    for (bi, ri) in r.iter().enumerate() {
        for (bj, rj) in r.iter().enumerate() {
            let (p, q) = (blocks[bi], blocks[bj]);
            let lo = q.saturating_sub(p);
            for k in lo..q {
                let cells: Vec<(usize, usize)> =
                    (0..p).map(|row| (row, row + k)).filter(|&(_, c)| c < q).collect();
                let mean = cells.iter().map(|&(a, b)| g[(ri.start + a, rj.start + b)]).sum::<C64>()
                    / cells.len() as f64;
                for (a, b) in cells {
                    out[(ri.start + a, rj.start + b)] = mean;
                }
            }
        }
    }
    out
}

/// Re-expresses `next` in the gauge closest to `reference`: clusters are
/// matched by spectral-projector overlap, and each cluster basis is rotated
/// within its Jordan commutant.
pub fn align_frame(next: &SpectralFrame, reference: &SpectralFrame) -> Result<SpectralFrame> {
    let t = next.t.unwrap_or(f64::NAN);
    if next.dim2() != reference.dim2() {
        return Err(Error::DimensionMismatch { expected: reference.dim2(), found: next.dim2() });
    }
    let ra = reference.cluster_ranges();
    let rb = next.cluster_ranges();
    if ra.len() != rb.len() {
        return Err(Error::DegeneracyCrossing { t });
    }
    let k = ra.len();
    let mut score = DMatrix::zeros(k, k);
    let mut gs: Vec<Vec<Option<DMatrix<C64>>>> = vec![vec![None; k]; k];
    for (a, xa) in ra.iter().enumerate() {
        let r_a = reference.right.columns(xa.start, xa.len());
        let l_a = reference.left.rows(xa.start, xa.len());
        for (b, xb) in rb.iter().enumerate() {
            if xa.len() != xb.len() {
                continue;
            }
            let l_b = next.left.rows(xb.start, xb.len());
            let r_b = next.right.columns(xb.start, xb.len());
            let g = l_b * r_a;
            let back = l_a * (r_b * &g);
            score[(a, b)] = back.trace().norm() / xa.len() as f64;
            gs[a][b] = Some(g);
        }
    }
    let assign = max_assignment(&score);
    let blocks_a = reference.cluster_blocks();
    let blocks_b = next.cluster_blocks();

    let n = next.dim2();
    let mut right = DMatrix::zeros(n, n);
    let mut left = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::new();
    let mut block_sizes = Vec::new();
    let mut cluster_sizes = Vec::new();
    let lam_b = next.cluster_eigenvalues();
    for (a, xa) in ra.iter().enumerate() {
        let b = assign[a];
        let g = gs[a][b].as_ref().ok_or(Error::DegeneracyCrossing { t })?;
        if blocks_a[a] != blocks_b[b] {
            return Err(Error::DegeneracyCrossing { t });
        }
        let g = project_commutant(g, &blocks_b[b]);
        let g_inv = linalg::inverse(&g).ok_or(Error::TrackingLost {
            t,
            index: xa.start,
            overlap: 0.0,
        })?;
        let xb = &rb[b];
        let r_new = next.right.columns(xb.start, xb.len()) * &g;
        let l_new = &g_inv * next.left.rows(xb.start, xb.len());
        right.columns_mut(xa.start, xa.len()).copy_from(&r_new);
        left.rows_mut(xa.start, xa.len()).copy_from(&l_new);
        for &m in &blocks_b[b] {
            eigenvalues.push(lam_b[b]);
            block_sizes.push(m);
        }
        cluster_sizes.push(xa.len());
    }
    for i in 0..n {
        let overlap = (reference.left.row(i) * right.column(i))[(0, 0)].norm();
        if !(overlap >= MIN_OVERLAP) {
            return Err(Error::TrackingLost { t, index: i, overlap });
        }
    }
    let condition = linalg::condition_number(&right)?;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::FrameSingular { condition });
    }
    Ok(SpectralFrame {
        t: next.t,
        eigenvalues,
        block_sizes,
        cluster_sizes,
        right,
        left,
        gauge: Gauge { kind: GaugeKind::Aligned, condition_number: condition },
        basis: next.basis,
    })
}

/// What a path was sampled from, so derivative stencils can be refined.
#[derive(Clone, Debug)]
pub struct PathSource {
    pub protocol: DrivingProtocol,
    pub basis: HermitianBasis,
    pub cluster_tol: f64,
}

/// Continuity-aligned frames on a time grid.
#[derive(Clone, Debug)]
pub struct FramePath {
    times: Vec<f64>,
    frames: Vec<SpectralFrame>,
    source: Option<PathSource>,
}

impl FramePath {
    /// Path from already aligned frames (no protocol attached).
    pub fn from_frames(times: Vec<f64>, frames: Vec<SpectralFrame>) -> Result<Self> {
        if times.len() != frames.len() || times.is_empty() {
            return Err(Error::InvalidParameter {
                name: "frames",
                reason: "need one frame per grid time".into(),
            });
        }
        check_grid(&times)?;
        Ok(FramePath { times, frames, source: None })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frames(&self) -> &[SpectralFrame] {
        &self.frames
    }

    pub fn frame(&self, k: usize) -> &SpectralFrame {
        &self.frames[k]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn source(&self) -> Option<&PathSource> {
        self.source.as_ref()
    }

    /// Smallest `|⟨⟨D̃_i(t_k)|D_i(t_{k+1})⟩⟩|` over all steps and indices.
    pub fn min_consecutive_overlap(&self) -> f64 {
        self.frames
            .windows(2)
            .flat_map(|w| {
                let p = &w[0].left * &w[1].right;
                (0..p.nrows()).map(move |i| p[(i, i)].norm()).collect::<Vec<_>>()
            })
            .fold(1.0, f64::min)
    }

    /// Largest `|λ_i(t) - λ_i(t_0)|` along the path.
    pub fn max_eigenvalue_drift(&self) -> f64 {
        let first = self.frames[0].column_eigenvalues();
        self.frames
            .iter()
            .flat_map(|f| {
                f.column_eigenvalues().into_iter().zip(first.clone()).map(|(a, b)| (a - b).norm())
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|λ_i(t_{k+1}) - λ_i(t_k)|`.
    pub fn max_eigenvalue_step(&self) -> f64 {
        self.frames
            .windows(2)
            .flat_map(|w| {
                w[0].column_eigenvalues()
                    .into_iter()
                    .zip(w[1].column_eigenvalues())
                    .map(|(a, b)| (a - b).norm())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t, re_0, im_0, re_1, im_1, ...` per tracked index.
    pub fn to_csv(&self) -> String {
        let n = self.frames[0].dim2();
        let mut out = String::from("t");
        for i in 0..n {
            let _ = write!(out, ",re_{i},im_{i}");
        }
        out.push('\n');
        for (t, f) in self.times.iter().zip(&self.frames) {
            let _ = write!(out, "{t:.16e}");
            for z in f.column_eigenvalues() {
                let _ = write!(out, ",{:.16e},{:.16e}", z.re, z.im);
            }
            out.push('\n');
        }
        out
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "times must be strictly increasing".into(),
        });
    }
    Ok(())
}

/// Frames on `grid`, each aligned to its predecessor.
pub fn track_frames(
    protocol: &DrivingProtocol,
    basis: &HermitianBasis,
    grid: &[f64],
    cluster_tol: f64,
) -> Result<FramePath> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter { name: "grid", reason: "empty grid".into() });
    }
    check_grid(grid)?;
    let mut frames: Vec<SpectralFrame> = Vec::with_capacity(grid.len());
    for &t in grid {
        let raw = frame_at(protocol, t, basis, cluster_tol)?;
        let f = match frames.last() {
            None => raw,
            Some(prev) => align_frame(&raw, prev)?,
        };
        frames.push(f);
    }
    Ok(FramePath {
        times: grid.to_vec(),
        frames,
        source: Some(PathSource { protocol: protocol.clone(), basis: basis.clone(), cluster_tol }),
    })
}

/// `n` evenly spaced times covering the protocol span.
pub fn uniform_grid(protocol: &DrivingProtocol, n: usize) -> Vec<f64> {
    let (a, b) = (protocol.t_start(), protocol.t_end());
    if n < 2 {
        return vec![a];
    }
    (0..n)
        .map(|k| if k == n - 1 { b } else { a + (b - a) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// The unique unit-trace fixed point of `L`.
pub fn steady_state(l: &SuperMatrix, basis: &HermitianBasis) -> Result<Operator> {
    if l.dim2() != basis.dim2() {
        return Err(Error::DimensionMismatch { expected: basis.dim2(), found: l.dim2() });
    }
    let svd = linalg::right_svd(l.matrix())?;
    let n = l.dim2();
    let zeros = svd.values.iter().filter(|&&s| s <= ZERO_TOL).count();
    if zeros == 0 {
        return Err(Error::NotAGenerator { smallest: svd.values[n - 1] });
    }
    if zeros > 1 {
        return Err(Error::NonUniqueSteadyState { count: zeros });
    }
    let v = svd.vectors.column(n - 1).into_owned();
    let rho = devectorize_slice(&v, basis)?;
    let tr = rho.trace();
    if tr.norm() < 1e-12 {
        return Err(Error::NotAGenerator { smallest: svd.values[n - 1] });
    }
    Ok(rho.scale(tr.inv()).hermitian_part())
}
