//! Index engines: the compression super-operator, the direction-1 winding
//! operator, bulk flux/corner/Kubo Chern routes, trace-limit kernel counting,
//! localized Z2 extraction, edge operators and Fermi-energy scans.
//!
//! At finite volume `A^*A` and `AA^*` of a square matrix share their full
//! spectrum, so the raw Fedosov difference vanishes identically; the index
//! survives in *where* the near-kernel modes live. All Fedosov traces are
//! therefore taken against a spatial window around the flux/corner point,
//! which keeps the topological mode and drops its truncation-artifact
//! partner at the lattice boundary.

use crate::lattice::{
    adjoint, lambda, symmetrize, LatticeGeometry, LatticeOperator,
};
use crate::spectral::{
    eig_hermitian, eigvalsh, fermi_projection_from, gap_from_eigenvalues, EigenDecomposition,
    GapReport, SwitchFunction,
};
use crate::symmetry::{require_theta_odd, TimeReversal};
use crate::{Error, Result, C64};
use ndarray::prelude::*;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Super-operators
// ---------------------------------------------------------------------------

const PROJECTION_TOL: f64 = 1e-10;

/// Compression super-operator `Q A Q + (1 - Q)` for a projection `Q`.
pub fn project_compress(q: &LatticeOperator, a: &LatticeOperator) -> Result<LatticeOperator> {
    q.check_same_geometry(a)?;
    let idem = q.mul(q)?.sub(q)?.max_norm();
    if idem > PROJECTION_TOL {
        return Err(Error::NotAProjection { residual: idem });
    }
    let qaq = q.matrix.dot(&a.matrix).dot(&q.matrix);
    let d = q.dim();
    let mut m = qaq;
    for i in 0..d {
        m[[i, i]] += C64::new(1.0, 0.0);
    }
    m = m - &q.matrix;
    LatticeOperator::new(q.geometry, m)
}

/// Winding operator `W1 A = Lambda_1 exp(-2 pi i A) Lambda_1 + Lambda_1^perp`
/// for hermitian `A`; the exponential is computed in the eigenbasis of `A`.
pub fn winding_op(a: &LatticeOperator) -> Result<LatticeOperator> {
    let dec = eig_hermitian(a)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let v = dec.apply(|l| C64::new(0.0, -two_pi * l).exp());
    let vo = LatticeOperator::new(a.geometry, v)?;
    let l1 = lambda(a.geometry, 1);
    project_compress(&l1, &vo)
}

/// Bulk flux operator `F = P U P + P^perp`.
pub fn bulk_flux_operator(p: &LatticeOperator, u: &LatticeOperator) -> Result<LatticeOperator> {
    project_compress(p, u)
}

/// Bulk corner operator `W1 (P Lambda_2 P)`.
pub fn bulk_corner_operator(p: &LatticeOperator) -> Result<LatticeOperator> {
    let l2 = lambda(p.geometry, 2);
    let gen = p.mul(&l2)?.mul(p)?;
    let gen = LatticeOperator::new_hermitian(gen.geometry, symmetrize(&gen.matrix))?;
    winding_op(&gen)
}

// ---------------------------------------------------------------------------
// Trace windows
// ---------------------------------------------------------------------------

/// Spatial restriction of index traces and kernel counting.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TraceWindow {
    /// Unrestricted trace over the whole lattice.
    Full,
    /// Euclidean ball of `radius` around `center` (site coordinates).
    Ball { center: (f64, f64), radius: f64 },
    /// Sites with `x2 < x2_below` and `|x1| <= x1_abs_max`: isolates the
    /// physical edge and the winding corner on a finite strip.
    EdgeCorner { x2_below: f64, x1_abs_max: f64 },
}

impl TraceWindow {
    /// Default bulk window: a ball of a quarter of the smaller side, which
    /// keeps the flux/corner modes and excludes lattice-boundary artifacts.
    pub fn bulk_default(g: &LatticeGeometry) -> Self {
        let side = g.n_x1().min(g.n_x2()) as f64;
        TraceWindow::Ball { center: (0.0, 0.0), radius: side / 4.0 }
    }

    /// Default edge window for a strip of width W and length L: the lower
    /// half of the strip, away from the x1 truncation ends.
    pub fn edge_default(g: &LatticeGeometry) -> Self {
        TraceWindow::EdgeCorner {
            x2_below: g.n_x2() as f64 / 2.0,
            x1_abs_max: g.n_x1() as f64 / 4.0,
        }
    }

    /// Per-flat-index 0/1 site weights.
    pub fn weights(&self, g: &LatticeGeometry) -> Array1<f64> {
        let d = g.dim();
        let mut w = Array1::<f64>::zeros(d);
        for i in 0..d {
            let (x1, x2, _) = g.site_of(i);
            let inside = match self {
                TraceWindow::Full => true,
                TraceWindow::Ball { center, radius } => {
                    let dx = x1 as f64 - center.0;
                    let dy = x2 as f64 - center.1;
                    (dx * dx + dy * dy).sqrt() <= *radius
                }
                TraceWindow::EdgeCorner { x2_below, x1_abs_max } => {
                    (x2 as f64) < *x2_below && (x1 as f64).abs() <= *x1_abs_max
                }
            };
            if inside {
                w[i] = 1.0;
            }
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Index results
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexStatus {
    Converged,
    NotConverged,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexResult {
    /// Trace value before rounding (or the localized mode count).
    pub raw: f64,
    pub value: i64,
    pub n_used: u64,
    /// `(n, raw_n)` pairs, or `(mode, mass)` pairs for localized counting.
    pub history: Vec<(u64, f64)>,
    pub distance_to_integer: f64,
    pub status: IndexStatus,
}

impl IndexResult {
    pub fn converged(&self) -> bool {
        self.status == IndexStatus::Converged
    }

    pub fn z2(&self) -> u8 {
        (self.value.rem_euclid(2)) as u8
    }
}

/// Geometric power schedule and tolerances for trace-based indices.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FedosovSchedule {
    pub n_start: u64,
    pub n_max: u64,
    /// Max distance of the raw value from the nearest integer.
    pub tol_integer: f64,
    /// Max change between successive schedule entries.
    pub tol_successive: f64,
}

impl Default for FedosovSchedule {
    fn default() -> Self {
        FedosovSchedule {
            n_start: 8,
            n_max: 4096,
            tol_integer: 0.05,
            tol_successive: 0.01,
        }
    }
}

fn clamp_unit(l: f64) -> f64 {
    l.clamp(0.0, 1.0)
}

/// Windowed Fedosov index:
/// `raw_n = tr_W (1 - A^*A)^n  -  tr_W (1 - AA^*)^n`,
/// with both traces evaluated in the eigenbases of the two defect operators
/// (powers are then exact per eigenvalue) and weighted by the window mass of
/// each eigenvector.
pub fn fredholm_index_fedosov(
    a: &LatticeOperator,
    window: &TraceWindow,
    schedule: &FedosovSchedule,
) -> Result<IndexResult> {
    let d = a.dim();
    let aa = adjoint(&a.matrix);
    let right = defect(&aa.dot(&a.matrix), d); // 1 - A^* A
    let left = defect(&a.matrix.dot(&aa), d); // 1 - A A^*
    let g = a.geometry;
    let w_mask = window.weights(&g);

    let right_dec = eig_hermitian(&LatticeOperator::new_hermitian(g, right)?)?;
    let left_dec = eig_hermitian(&LatticeOperator::new_hermitian(g, left)?)?;
    let (lr, wr) = window_weights(&right_dec, &w_mask);
    let (ll, wl) = window_weights(&left_dec, &w_mask);

    let mut history = Vec::new();
    let mut prev: Option<f64> = None;
    let mut n = schedule.n_start.max(1);
    loop {
        let raw = weighted_power_trace(&lr, &wr, n) - weighted_power_trace(&ll, &wl, n);
        history.push((n, raw));
        let dist = (raw - raw.round()).abs();
        if let Some(p) = prev {
            if dist <= schedule.tol_integer && (raw - p).abs() <= schedule.tol_successive {
                return Ok(IndexResult {
                    raw,
                    value: raw.round() as i64,
                    n_used: n,
                    history,
                    distance_to_integer: dist,
                    status: IndexStatus::Converged,
                });
            }
        }
        prev = Some(raw);
        if n >= schedule.n_max {
            let raw = *history.last().map(|(_, r)| r).unwrap();
            return Ok(IndexResult {
                raw,
                value: raw.round() as i64,
                n_used: n,
                history,
                distance_to_integer: (raw - raw.round()).abs(),
                status: IndexStatus::NotConverged,
            });
        }
        n = (n * 2).min(schedule.n_max);
    }
}

fn defect(gram: &Array2<C64>, d: usize) -> Array2<C64> {
    let mut m = gram.mapv(|z| -z);
    for i in 0..d {
        m[[i, i]] += C64::new(1.0, 0.0);
    }
    symmetrize(&m)
}

fn window_weights(dec: &EigenDecomposition, mask: &Array1<f64>) -> (Vec<f64>, Vec<f64>) {
    let d = dec.eigenvalues.len();
    let mut lambda = Vec::with_capacity(d);
    let mut weight = Vec::with_capacity(d);
    for j in 0..d {
        lambda.push(clamp_unit(dec.eigenvalues[j]));
        let mut w = 0.0;
        for i in 0..d {
            w += mask[i] * dec.eigenvectors[[i, j]].norm_sqr();
        }
        weight.push(w);
    }
    (lambda, weight)
}

fn weighted_power_trace(lambda: &[f64], weight: &[f64], n: u64) -> f64 {
    lambda
        .iter()
        .zip(weight)
        .map(|(&l, &w)| if l == 0.0 { 0.0 } else { w * l.powf(n as f64) })
        .sum()
}

/// Kubo commutator trace `-2 pi i tr P [d1 P, d2 P]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KuboResult {
    pub value: f64,
    /// Imaginary residue of the trace; all exact traces here are real.
    pub imag_residue: f64,
}

pub fn chern_kubo(p: &LatticeOperator) -> Result<KuboResult> {
    let d1 = crate::lattice::nc_derivative(1, p);
    let d2 = crate::lattice::nc_derivative(2, p);
    let comm = d1.matrix.dot(&d2.matrix) - d2.matrix.dot(&d1.matrix);
    let prod = p.matrix.dot(&comm);
    let tr: C64 = (0..p.dim()).map(|i| prod[[i, i]]).sum();
    let full = C64::new(0.0, -2.0 * std::f64::consts::PI) * tr;
    Ok(KuboResult {
        value: full.re,
        imag_residue: full.im.abs(),
    })
}

// ---------------------------------------------------------------------------
// Trace-limit kernel counting
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceLimitSchedule {
    pub n_start: u64,
    pub n_max: u64,
    pub tol: f64,
}

impl Default for TraceLimitSchedule {
    fn default() -> Self {
        TraceLimitSchedule { n_start: 1, n_max: 1 << 22, tol: 1e-3 }
    }
}

/// `lim_n tr (1 - A^*A)^n = dim ker A` for contractions; the sequence is
/// non-increasing by construction and monitored for numerical integrity.
pub fn kernel_dim_trace_limit(
    a: &Array2<C64>,
    schedule: &TraceLimitSchedule,
) -> Result<IndexResult> {
    let d = a.nrows();
    let gram = adjoint(a).dot(a);
    let evals = eigvalsh(&defect(&gram, d))?;
    let norm = evals.iter().fold(0.0f64, |m, &l| m.max(1.0 - l)).max(0.0).sqrt();
    if norm > 1.0 + 1e-10 {
        return Err(Error::NumericalIntegrity(format!(
            "trace-limit formula needs ||A|| <= 1, got {norm:.6}"
        )));
    }
    let lam: Vec<f64> = evals.iter().map(|&l| clamp_unit(l)).collect();
    let mut history = Vec::new();
    let mut prev: Option<f64> = None;
    let mut n = schedule.n_start.max(1);
    loop {
        let tr: f64 = lam.iter().map(|&l| if l == 0.0 { 0.0 } else { l.powf(n as f64) }).sum();
        if let Some(p) = prev {
            if tr > p + 1e-9 * (d as f64) {
                return Err(Error::NumericalIntegrity(format!(
                    "trace sequence increased from {p} to {tr} at n = {n}"
                )));
            }
        }
        history.push((n, tr));
        if let Some(p) = prev {
            if (tr - p).abs() <= schedule.tol {
                let dist = (tr - tr.round()).abs();
                return Ok(IndexResult {
                    raw: tr,
                    value: tr.round() as i64,
                    n_used: n,
                    history,
                    distance_to_integer: dist,
                    status: IndexStatus::Converged,
                });
            }
        }
        prev = Some(tr);
        if n >= schedule.n_max {
            let raw = *history.last().map(|(_, r)| r).unwrap();
            return Ok(IndexResult {
                raw,
                value: raw.round() as i64,
                n_used: n,
                history,
                distance_to_integer: (raw - raw.round()).abs(),
                status: IndexStatus::NotConverged,
            });
        }
        n = (n * 2).min(schedule.n_max);
    }
}

// ---------------------------------------------------------------------------
// Near-kernel spectra and localized Z2 counting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NearKernelPolicy {
    Absolute { tau: f64 },
    /// Largest relative gap among singular values below `below`; the cluster
    /// is accepted only when the gap ratio reaches `min_ratio`.
    RelativeGap { below: f64, min_ratio: f64 },
}

impl Default for NearKernelPolicy {
    fn default() -> Self {
        NearKernelPolicy::RelativeGap { below: 0.5, min_ratio: 10.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SingularSpectrum {
    /// Ascending singular values.
    pub values: Vec<f64>,
    /// Right-singular vectors (columns), aligned with `values`.
    pub vectors: Option<Array2<C64>>,
    pub cluster_size: usize,
    pub threshold: f64,
    /// First value above the cluster over the last value inside it (or over
    /// the threshold when the cluster is empty).
    pub gap_ratio: f64,
}

impl SingularSpectrum {
    /// Smallest singular value above the near-kernel cluster; the
    /// finite-volume proxy for invertibility modulo compacts.
    pub fn fredholm_gap(&self) -> f64 {
        self.values.get(self.cluster_size).copied().unwrap_or(f64::INFINITY)
    }
}

/// Singular values (and right-singular vectors) of `A` through the
/// eigendecomposition of `A^* A`, plus cluster detection.
pub fn near_kernel_modes(
    a: &LatticeOperator,
    policy: &NearKernelPolicy,
    with_vectors: bool,
) -> Result<SingularSpectrum> {
    let gram = adjoint(&a.matrix).dot(&a.matrix);
    let g = LatticeOperator::new_hermitian(a.geometry, symmetrize(&gram))?;
    let (values, vectors) = if with_vectors {
        let dec = eig_hermitian(&g)?;
        let v: Vec<f64> = dec.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
        (v, Some(dec.eigenvectors))
    } else {
        let evals = eigvalsh(&g.matrix)?;
        (evals.iter().map(|&l| l.max(0.0).sqrt()).collect(), None)
    };
    let (cluster_size, threshold, gap_ratio) = detect_cluster(&values, policy);
    Ok(SingularSpectrum { values, vectors, cluster_size, threshold, gap_ratio })
}

/// Deterministic cluster detection given ascending singular values.
pub fn detect_cluster(values: &[f64], policy: &NearKernelPolicy) -> (usize, f64, f64) {
    match *policy {
        NearKernelPolicy::Absolute { tau } => {
            let k = values.iter().filter(|&&s| s < tau).count();
            let above = values.get(k).copied().unwrap_or(f64::INFINITY);
            let last = if k > 0 { values[k - 1].max(1e-300) } else { tau };
            (k, tau, above / last)
        }
        NearKernelPolicy::RelativeGap { below, min_ratio: _ } => {
            let m = values.iter().filter(|&&s| s < below).count();
            if m == 0 {
                let above = values.first().copied().unwrap_or(f64::INFINITY);
                return (0, below, above / below.max(1e-300));
            }
            // Largest relative gap among splits 0..m-1 (cluster = 0..=i).
            let mut best_i = 0usize;
            let mut best_ratio = 0.0f64;
            for i in 0..m {
                let lo = values[i].max(1e-300);
                let hi = values.get(i + 1).copied().unwrap_or(f64::INFINITY);
                let r = hi / lo;
                if r > best_ratio {
                    best_ratio = r;
                    best_i = i;
                }
            }
            let k = best_i + 1;
            let thr = values[best_i] * best_ratio.sqrt().min(1e6);
            (k, thr.min(below), best_ratio)
        }
    }
}

fn require_unambiguous(s: &SingularSpectrum, policy: &NearKernelPolicy) -> Result<()> {
    if let NearKernelPolicy::RelativeGap { min_ratio, .. } = policy {
        if s.cluster_size > 0 && s.gap_ratio < *min_ratio {
            return Err(Error::AmbiguousCluster {
                gap_ratio: s.gap_ratio,
                required: *min_ratio,
            });
        }
    }
    Ok(())
}

/// Localized Z2 count: near-kernel modes whose probability mass concentrates
/// within `radius` of `center`, counted mod 2.
///
/// Theta-odd operators have exactly degenerate singular-value pairs, so the
/// individual right-singular vectors of a cluster are an arbitrary basis of
/// its subspace. The count therefore diagonalizes the in-ball mass form on
/// the cluster subspace; its eigenvalues are the sharpest localization
/// splitting the subspace admits, and each mass must stay clear of 1/2.
pub fn z2_localized_count(
    a: &LatticeOperator,
    center: (f64, f64),
    radius: f64,
    policy: &NearKernelPolicy,
) -> Result<IndexResult> {
    let spectrum = near_kernel_modes(a, policy, true)?;
    require_unambiguous(&spectrum, policy)?;
    let k = spectrum.cluster_size;
    if k == 0 {
        return Ok(IndexResult {
            raw: 0.0,
            value: 0,
            n_used: 0,
            history: vec![],
            distance_to_integer: 0.0,
            status: IndexStatus::Converged,
        });
    }
    let vecs = spectrum.vectors.as_ref().unwrap();
    let g = a.geometry;
    let ball = TraceWindow::Ball { center, radius }.weights(&g);
    // Mass form on the cluster subspace: M_ab = <v_a| D |v_b>.
    let mut mass = Array2::<C64>::zeros((k, k));
    for p in 0..k {
        for q in 0..k {
            let mut s = C64::new(0.0, 0.0);
            for i in 0..g.dim() {
                s += vecs[[i, p]].conj() * vecs[[i, q]] * ball[i];
            }
            mass[[p, q]] = s;
        }
    }
    let masses = eigvalsh(&symmetrize(&mass))?;
    let mut count = 0i64;
    let mut history = Vec::new();
    for (idx, &m) in masses.iter().enumerate() {
        if m > 0.4 && m < 0.6 {
            return Err(Error::AmbiguousLocalization { mass: m });
        }
        if m > 0.5 {
            count += 1;
        }
        history.push((idx as u64, m));
    }
    Ok(IndexResult {
        raw: count as f64,
        value: count.rem_euclid(2),
        n_used: k as u64,
        history,
        distance_to_integer: 0.0,
        status: IndexStatus::Converged,
    })
}

// ---------------------------------------------------------------------------
// Edge operators and indices
// ---------------------------------------------------------------------------

/// Edge operator `F_edge = W1 g(H_edge)`; the switch window must sit inside
/// the bulk gap of the compatible bulk Hamiltonian.
pub fn edge_operator(
    h_edge: &LatticeOperator,
    g: &SwitchFunction,
    bulk_gap: &GapReport,
) -> Result<LatticeOperator> {
    if bulk_gap.contains_zero || g.a <= bulk_gap.gap_lower || g.b >= bulk_gap.gap_upper {
        return Err(Error::WindowOutsideGap {
            a: g.a,
            b: g.b,
            lo: bulk_gap.gap_lower,
            hi: bulk_gap.gap_upper,
        });
    }
    let gh = crate::spectral::apply_function_eig(h_edge, |l| g.eval(l))?;
    winding_op(&gh)
}

/// Edge Chern number: Fedosov traces restricted to the lower half of the
/// strip (and away from the x1 truncation ends), isolating the x2 = 0 edge
/// from the spurious top edge.
pub fn edge_chern(
    f_edge: &LatticeOperator,
    window: &TraceWindow,
    schedule: &FedosovSchedule,
) -> Result<IndexResult> {
    fredholm_index_fedosov(f_edge, window, schedule)
}

/// Edge Z2 index: localized near-kernel counting at the winding corner.
pub fn edge_z2(
    f_edge: &LatticeOperator,
    theta: &TimeReversal,
    corner: (f64, f64),
    radius: f64,
    policy: &NearKernelPolicy,
) -> Result<IndexResult> {
    require_theta_odd(f_edge, theta)?;
    z2_localized_count(f_edge, corner, radius, policy)
}

/// Bulk Z2 index via the flux operator.
pub fn bulk_z2(
    f: &LatticeOperator,
    theta: &TimeReversal,
    radius: f64,
    policy: &NearKernelPolicy,
) -> Result<IndexResult> {
    require_theta_odd(f, theta)?;
    z2_localized_count(f, (0.0, 0.0), radius, policy)
}

// ---------------------------------------------------------------------------
// Fermi-energy scans
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuRecord {
    pub mu: f64,
    pub gap: GapReport,
    /// Smallest singular value of `F_mu`.
    pub sigma_min: f64,
    /// Singular value just above the near-kernel cluster (equals `sigma_min`
    /// when no cluster is detected).
    pub fredholm_gap: f64,
    pub cluster_size: usize,
    pub index: Option<IndexResult>,
}

/// Scan the Fermi energy: at each `mu` build `F_mu = P_mu U P_mu + P_mu^perp`
/// and record the gap report, the Fredholm gap and (inside spectral gaps)
/// the windowed Fedosov index.
pub fn fermi_scan(
    h: &LatticeOperator,
    u: &LatticeOperator,
    mu_grid: &[f64],
    window: &TraceWindow,
    schedule: &FedosovSchedule,
    policy: &NearKernelPolicy,
) -> Result<Vec<MuRecord>> {
    let dec = eig_hermitian(h)?;
    let evals = dec.eigenvalues.to_vec();
    let mut out = Vec::with_capacity(mu_grid.len());
    for &mu in mu_grid {
        let gap = gap_from_eigenvalues(&evals, mu);
        let p = match fermi_projection_from(&dec, h.geometry, mu) {
            Ok(p) => p,
            Err(Error::GapViolation { .. }) => {
                // mu collides with an eigenvalue: nudge just below it.
                let p = fermi_projection_from(&dec, h.geometry, mu - 1e-7)?;
                p
            }
            Err(e) => return Err(e),
        };
        let f = bulk_flux_operator(&p, u)?;
        let spectrum = near_kernel_modes(&f, policy, false)?;
        let sigma_min = spectrum.values.first().copied().unwrap_or(f64::INFINITY);
        let ambiguous = matches!(policy, NearKernelPolicy::RelativeGap { min_ratio, .. }
            if spectrum.cluster_size > 0 && spectrum.gap_ratio < *min_ratio);
        let fredholm_gap = if ambiguous { sigma_min } else { spectrum.fredholm_gap() };
        let index = if !gap.contains_zero {
            Some(fredholm_index_fedosov(&f, window, schedule)?)
        } else {
            None
        };
        out.push(MuRecord {
            mu,
            gap,
            sigma_min,
            fredholm_gap,
            cluster_size: spectrum.cluster_size,
            index,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{flux_phase, GeometryKind, LatticeGeometry};
    use crate::models::{build_bulk, DisorderSpec, ModelSpec};
    use crate::spectral::fermi_projection;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn small_geom() -> LatticeGeometry {
        LatticeGeometry::new(GeometryKind::Bulk, (-2, 1), (-2, 1), 1).unwrap()
    }

    fn random_op(g: LatticeGeometry, seed: u64) -> LatticeOperator {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = g.dim();
        let m = Array2::from_shape_fn((d, d), |_| {
            C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        });
        LatticeOperator::new(g, m).unwrap()
    }

    #[test]
    fn project_compress_identities() {
        let g = small_geom();
        let a = random_op(g, 1);
        let id = LatticeOperator::identity(g);
        // Q = 1 -> A
        let out = project_compress(&id, &a).unwrap();
        assert!(out.sub(&a).unwrap().max_norm() < 1e-14);
        // Q = 0 -> identity
        let z = LatticeOperator::zeros(g);
        let out = project_compress(&z, &a).unwrap();
        assert!(out.sub(&id).unwrap().max_norm() < 1e-14);
        // idempotence of the super-operator
        let q = lambda(g, 1);
        let once = project_compress(&q, &a).unwrap();
        let twice = project_compress(&q, &once).unwrap();
        assert!(twice.sub(&once).unwrap().max_norm() < 1e-12);
        // non-projection rejected
        let bad = random_op(g, 2);
        assert!(matches!(
            project_compress(&bad, &a),
            Err(Error::NotAProjection { .. })
        ));
    }

    #[test]
    fn winding_op_trivial_cases() {
        let g = small_geom();
        let z = LatticeOperator::zeros(g);
        let id = LatticeOperator::identity(g);
        let w = winding_op(&z).unwrap();
        assert!(w.sub(&id).unwrap().max_norm() < 1e-12);
        // a projection exponentiates to the identity
        let l2 = lambda(g, 2);
        let w = winding_op(&l2).unwrap();
        assert!(w.sub(&id).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn exp_compression_identity_on_random_projections() {
        // exp(alpha QAQ) = Q exp(alpha QAQ) Q + Q^perp for projections Q.
        let g = small_geom();
        let h = crate::lattice::position_multiplier(g, 1, |x| C64::new(0.3 * x as f64, 0.0));
        let a = random_op(g, 3);
        let herm = LatticeOperator::new_hermitian(
            g,
            symmetrize(&(h.matrix.clone() + &a.matrix * C64::new(0.4, 0.0))),
        )
        .unwrap();
        let q = lambda(g, 1);
        let qaq = LatticeOperator::new_hermitian(
            g,
            symmetrize(&q.matrix.dot(&herm.matrix).dot(&q.matrix)),
        )
        .unwrap();
        let e = crate::spectral::unitary_exp(&qaq, -0.7).unwrap();
        let compressed = project_compress(&q, &e).unwrap();
        assert!(e.sub(&compressed).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn flux_operator_trivial_cases_and_norm() {
        let g = LatticeGeometry::bulk_square(8, 2).unwrap();
        let u = flux_phase(g).unwrap();
        let id = LatticeOperator::identity(g);
        let z = LatticeOperator::zeros(g);
        // P = 0 -> identity, P = 1 -> U
        assert!(bulk_flux_operator(&z, &u).unwrap().sub(&id).unwrap().max_norm() < 1e-14);
        assert!(bulk_flux_operator(&id, &u).unwrap().sub(&u).unwrap().max_norm() < 1e-14);
        // ||F|| <= 1 + tol for a real projection
        let h = build_bulk(&ModelSpec::qwz(-1.0), &DisorderSpec::none(), g).unwrap();
        let p = fermi_projection(&h, 0.0).unwrap();
        let f = bulk_flux_operator(&p, &u).unwrap();
        assert!(f.norm_2().unwrap() <= 1.0 + 1e-10);
    }

    #[test]
    fn fedosov_unitary_is_zero_at_n_one() {
        let g = small_geom();
        let u = flux_phase(g).unwrap();
        let schedule = FedosovSchedule { n_start: 1, ..Default::default() };
        let r = fredholm_index_fedosov(&u, &TraceWindow::Full, &schedule).unwrap();
        assert_eq!(r.value, 0);
        assert!(r.history[0].1.abs() < 1e-10);
        assert!(r.converged());
    }

    #[test]
    fn kubo_of_diagonal_projection_vanishes() {
        let g = small_geom();
        let p = lambda(g, 2);
        let k = chern_kubo(&p).unwrap();
        assert_eq!(k.value, 0.0);
        assert_eq!(k.imag_residue, 0.0);
    }

    #[test]
    fn trace_limit_analytic_diagonal_case() {
        // singular values {0, 1/2}: tr (1 - A^*A)^n = 1 + (3/4)^n -> 1
        let mut a = Array2::<C64>::zeros((2, 2));
        a[[1, 1]] = C64::new(0.5, 0.0);
        let r = kernel_dim_trace_limit(&a, &TraceLimitSchedule::default()).unwrap();
        assert_eq!(r.value, 1);
        assert!(r.converged());
        // history matches the analytic sequence
        for &(n, tr) in &r.history {
            assert_abs_diff_eq!(tr, 1.0 + 0.75f64.powf(n as f64), epsilon = 1e-12);
        }
        // unitary: 0 at every n
        let g = small_geom();
        let u = flux_phase(g).unwrap();
        let r = kernel_dim_trace_limit(&u.matrix, &TraceLimitSchedule::default()).unwrap();
        assert_eq!(r.value, 0);
        assert!(r.history.iter().all(|&(_, t)| t.abs() < 1e-12));
    }

    #[test]
    fn trace_limit_rejects_expansions() {
        let mut a = Array2::<C64>::zeros((2, 2));
        a[[0, 0]] = C64::new(1.5, 0.0);
        assert!(kernel_dim_trace_limit(&a, &TraceLimitSchedule::default()).is_err());
    }

    #[test]
    fn cluster_detection_cases() {
        let pol = NearKernelPolicy::default();
        // invertible with sigma_min = 0.5: empty cluster
        let (k, _, _) = detect_cluster(&[0.5, 0.8, 1.0], &pol);
        assert_eq!(k, 0);
        // diag(0, 0.5, 1): cluster = {0} under the gap policy
        let (k, _, ratio) = detect_cluster(&[1e-12, 0.5, 1.0], &pol);
        assert_eq!(k, 1);
        assert!(ratio > 10.0);
        // two tiny values cluster together
        let (k, _, _) = detect_cluster(&[1e-8, 2e-8, 0.4, 1.0], &pol);
        assert_eq!(k, 2);
    }

    #[test]
    fn localized_count_empty_cluster_gives_zero() {
        let g = small_geom();
        let u = flux_phase(g).unwrap();
        let r = z2_localized_count(&u, (0.0, 0.0), 2.0, &NearKernelPolicy::default()).unwrap();
        assert_eq!(r.value, 0);
        assert!(r.converged());
    }
}
