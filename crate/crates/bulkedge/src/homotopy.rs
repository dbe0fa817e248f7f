//! Interpolation paths between index operators and the monitor that watches
//! spectral gaps, Fredholm gaps, locality residuals and index constancy
//! along them.

use crate::indices::{
    bulk_flux_operator, fredholm_index_fedosov, near_kernel_modes, winding_op, z2_localized_count,
    FedosovSchedule, IndexResult, NearKernelPolicy, TraceWindow,
};
use crate::lattice::{
    decay_fit, flux_phase, lambda, restrict_half_space, Confinement, DecayFitOptions, DecayModel,
    GeometryKind, LatticeOperator, LocalityFit,
};
use crate::spectral::{apply_function_eig, eigvalsh, gap_from_eigenvalues, SwitchFunction};
use crate::symmetry::{theta_odd_residual, TimeReversal};
use crate::{Error, Result, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the monitor interprets the interpolated operator.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    /// `A(t)` feeds the winding operator `W1 exp(-2 pi i A(t))`.
    WindingGenerator,
    /// `A(t)` is a Hamiltonian; the flux operator of its Fermi projection is
    /// monitored and the spectral gap must stay open.
    Hamiltonian,
}

/// Affine operator path `A(t) = (1 - t) A0 + t A1` with endpoint metadata.
#[derive(Clone)]
pub struct HomotopyPath {
    pub label: String,
    pub kind: PathKind,
    pub a0: LatticeOperator,
    pub a1: LatticeOperator,
    pub samples: Vec<f64>,
    pub theta: Option<TimeReversal>,
}

pub const DEFAULT_SAMPLES: usize = 21;

fn uniform_samples(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

impl HomotopyPath {
    fn new(
        label: impl Into<String>,
        kind: PathKind,
        a0: LatticeOperator,
        a1: LatticeOperator,
        theta: Option<TimeReversal>,
    ) -> Result<Self> {
        a0.check_same_geometry(&a1)?;
        if !a0.is_hermitian() || !a1.is_hermitian() {
            return Err(Error::PathFailed("path endpoints must be hermitian".into()));
        }
        Ok(HomotopyPath {
            label: label.into(),
            kind,
            a0,
            a1,
            samples: uniform_samples(DEFAULT_SAMPLES),
            theta,
        })
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples = uniform_samples(n.max(2));
        self
    }

    pub fn generator(&self, t: f64) -> LatticeOperator {
        let m = self.a0.matrix.mapv(|z| z * C64::new(1.0 - t, 0.0))
            + self.a1.matrix.mapv(|z| z * C64::new(t, 0.0));
        LatticeOperator::new(self.a0.geometry, m).expect("affine combination keeps the geometry")
    }
}

/// `A(t) = t L2 g(H) L2 + (1 - t) g(H) L2 g(H)`: flattening the corner
/// generator between its two orderings.
pub fn path_corner_flatten(h: &LatticeOperator, g: &SwitchFunction) -> Result<HomotopyPath> {
    let p = apply_function_eig(h, |l| g.eval(l))?;
    let l2 = lambda(h.geometry, 2);
    let plp = p.mul(&l2)?.mul(&p)?;
    let lpl = l2.mul(&p)?.mul(&l2)?;
    HomotopyPath::new("corner-flatten", PathKind::WindingGenerator, plp, lpl, None)
}

/// `A(t) = (1 - t) L2 g(H) L2 + t L2 g(L2 H L2) L2`: the flattening /
/// truncation exchange.
pub fn path_truncate_flatten(h: &LatticeOperator, g: &SwitchFunction) -> Result<HomotopyPath> {
    let p = apply_function_eig(h, |l| g.eval(l))?;
    let l2 = lambda(h.geometry, 2);
    let lpl = l2.mul(&p)?.mul(&l2)?;
    let l2h = l2.mul(h)?.mul(&l2)?;
    let l2h = LatticeOperator::new_hermitian(h.geometry, l2h.matrix.clone())?;
    let q = apply_function_eig(&l2h, |l| g.eval(l))?;
    let lql = l2.mul(&q)?.mul(&l2)?;
    HomotopyPath::new("truncate-flatten", PathKind::WindingGenerator, lpl, lql, None)
}

/// `A(t) = t g(iota^* H iota) + (1 - t) g(H_edge)`: boundary-condition
/// deformation on the strip. The pair must be compatible: their difference
/// is checked to be exponentially LOC2.
pub fn path_boundary_conditions(
    h_bulk: &LatticeOperator,
    h_edge: &LatticeOperator,
    g: &SwitchFunction,
) -> Result<HomotopyPath> {
    if h_edge.geometry.kind != GeometryKind::HalfSpace {
        return Err(Error::PathFailed("edge Hamiltonian must live on a strip".into()));
    }
    let dirichlet = restrict_half_space(h_bulk)?;
    if dirichlet.geometry != h_edge.geometry {
        return Err(Error::GeometryMismatch(
            "bulk truncation and edge Hamiltonian geometries differ".into(),
        ));
    }
    let diff = dirichlet.sub(h_edge)?;
    if diff.max_norm() > 1e-14 {
        let fit = decay_fit(
            &diff,
            DecayModel::Loc2Exponential,
            DecayFitOptions {
                boundary_margin: 1,
                confinement: Some(Confinement::Axis(2)),
            },
        )?;
        if !fit.passes() {
            return Err(Error::PathFailed(format!(
                "boundary perturbation is not LOC2 (rate {:.3}, residual {:.3})",
                fit.rate, fit.max_residual
            )));
        }
    }
    let g_edge = apply_function_eig(h_edge, |l| g.eval(l))?;
    let g_dirichlet = apply_function_eig(&dirichlet, |l| g.eval(l))?;
    HomotopyPath::new(
        "boundary-conditions",
        PathKind::WindingGenerator,
        g_edge,
        g_dirichlet,
        None,
    )
}

/// Linear Hamiltonian interpolation `H(t) = (1 - t) H0 + t H1`, used to
/// transport an index from a clean reference to a disordered sample.
pub fn path_physical(h0: &LatticeOperator, h1: &LatticeOperator) -> Result<HomotopyPath> {
    HomotopyPath::new("physical", PathKind::Hamiltonian, h0.clone(), h1.clone(), None)
}

impl HomotopyPath {
    pub fn with_theta(mut self, theta: TimeReversal) -> Self {
        self.theta = Some(theta);
        self
    }
}

/// Index computation applied at each sample.
#[derive(Clone, Debug)]
pub enum MonitorIndexMethod {
    Fedosov { window: TraceWindow, schedule: FedosovSchedule },
    LocalizedZ2 { center: (f64, f64), radius: f64, policy: NearKernelPolicy },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MonitorThresholds {
    pub fredholm_gap_min: f64,
    pub loc2_residual_max: f64,
    /// A sample whose Fredholm gap dips below `dip_factor * fredholm_gap_min`
    /// triggers bisection refinement around it.
    pub dip_factor: f64,
    pub max_refinements: usize,
}

impl Default for MonitorThresholds {
    fn default() -> Self {
        MonitorThresholds {
            fredholm_gap_min: 0.05,
            loc2_residual_max: 1.0,
            dip_factor: 2.0,
            max_refinements: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    /// Spectral gap width of the sample Hamiltonian (Hamiltonian paths only).
    pub spectral_gap: Option<f64>,
    pub fredholm_gap: f64,
    pub loc2_fit: Option<LocalityFit>,
    pub theta_odd_residual: Option<f64>,
    pub index: Option<IndexResult>,
    pub flags: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    IndexConstant,
    Violation,
    Withheld,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HomotopyReport {
    pub label: String,
    pub samples: Vec<PathSample>,
    pub verdict: Verdict,
}

fn evaluate_sample(
    path: &HomotopyPath,
    method: &MonitorIndexMethod,
    thresholds: &MonitorThresholds,
    t: f64,
) -> Result<PathSample> {
    let a_t = path.generator(t);
    let mut flags = Vec::new();
    let mut spectral_gap = None;

    // The operator that feeds W1, and the resulting Fredholm candidate.
    let (generator, fredholm_op) = match path.kind {
        PathKind::WindingGenerator => {
            let f = winding_op(&a_t)?;
            (a_t.clone(), f)
        }
        PathKind::Hamiltonian => {
            let evals = eigvalsh(&a_t.matrix)?;
            let gap = gap_from_eigenvalues(&evals, 0.0);
            spectral_gap = Some(gap.width());
            if gap.contains_zero {
                flags.push(format!("spectral gap closed at t = {t}"));
            }
            let dec = crate::spectral::eig_hermitian(&a_t)?;
            let p = crate::spectral::fermi_projection_from(&dec, a_t.geometry, 0.0);
            match p {
                Ok(p) => {
                    let u = flux_phase(a_t.geometry)?;
                    let f = bulk_flux_operator(&p, &u)?;
                    let l2 = lambda(a_t.geometry, 2);
                    let gen = p.mul(&l2)?.mul(&p)?;
                    let gen = LatticeOperator::new_hermitian(
                        gen.geometry,
                        crate::lattice::symmetrize(&gen.matrix),
                    )?;
                    (gen, f)
                }
                Err(e) => {
                    flags.push(format!("fermi projection failed at t = {t}: {e}"));
                    return Ok(PathSample {
                        t,
                        spectral_gap,
                        fredholm_gap: 0.0,
                        loc2_fit: None,
                        theta_odd_residual: None,
                        index: None,
                        flags,
                    });
                }
            }
        }
    };

    // Fredholm gap from the singular spectrum of the winding/flux operator.
    let policy = NearKernelPolicy::default();
    let spectrum = near_kernel_modes(&fredholm_op, &policy, false)?;
    let ambiguous_cluster = matches!(policy, NearKernelPolicy::RelativeGap { min_ratio, .. }
        if spectrum.cluster_size > 0 && spectrum.gap_ratio < min_ratio);
    let fredholm_gap = if ambiguous_cluster {
        spectrum.values.first().copied().unwrap_or(f64::INFINITY)
    } else {
        spectrum.fredholm_gap()
    };
    if fredholm_gap < thresholds.fredholm_gap_min {
        flags.push(format!(
            "fredholm gap {fredholm_gap:.4} below threshold at t = {t}"
        ));
    }

    // LOC2 residual of A(t)^2 - A(t) (the Fredholm-ness certificate).
    let defect = generator.mul(&generator)?.sub(&generator)?;
    let loc2_fit = if defect.max_norm() < 1e-13 {
        None // exactly a projection; nothing to fit
    } else {
        let fit = decay_fit(
            &defect,
            DecayModel::Loc2Exponential,
            DecayFitOptions {
                boundary_margin: 2,
                confinement: Some(Confinement::Axis(2)),
            },
        )?;
        if !(fit.rate > 0.0 && fit.max_residual <= thresholds.loc2_residual_max) {
            flags.push(format!(
                "loc2 fit failed at t = {t} (rate {:.3}, residual {:.3})",
                fit.rate, fit.max_residual
            ));
        }
        Some(fit)
    };

    let theta_res = match &path.theta {
        Some(theta) => {
            let r = theta_odd_residual(&fredholm_op, theta)?;
            if r > 1e-8 * fredholm_op.max_norm().max(1.0) {
                flags.push(format!("theta-odd residual {r:.3e} at t = {t}"));
            }
            Some(r)
        }
        None => None,
    };

    let index = match method {
        MonitorIndexMethod::Fedosov { window, schedule } => {
            let r = fredholm_index_fedosov(&fredholm_op, window, schedule)?;
            if !r.converged() {
                flags.push(format!("index not converged at t = {t}"));
            }
            Some(r)
        }
        MonitorIndexMethod::LocalizedZ2 { center, radius, policy } => {
            match z2_localized_count(&fredholm_op, *center, *radius, policy) {
                Ok(r) => Some(r),
                Err(Error::AmbiguousCluster { .. }) | Err(Error::AmbiguousLocalization { .. }) => {
                    flags.push(format!("ambiguous Z2 extraction at t = {t}"));
                    None
                }
                Err(e) => return Err(e),
            }
        }
    };

    Ok(PathSample {
        t,
        spectral_gap,
        fredholm_gap,
        loc2_fit,
        theta_odd_residual: theta_res,
        index: index.filter(|r| r.converged()),
        flags,
    })
}

/// Evaluate the path on its sample grid (with adaptive bisection around
/// Fredholm-gap dips) and assemble the verdict.
pub fn monitor(
    path: &HomotopyPath,
    method: &MonitorIndexMethod,
    thresholds: &MonitorThresholds,
) -> Result<HomotopyReport> {
    let mut ts = path.samples.clone();
    let mut samples: Vec<PathSample> = ts
        .par_iter()
        .map(|&t| evaluate_sample(path, method, thresholds, t))
        .collect::<Result<Vec<_>>>()?;

    // Adaptive bisection near dips.
    let mut refinements = 0usize;
    loop {
        let mut inserts = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if s.fredholm_gap < thresholds.dip_factor * thresholds.fredholm_gap_min {
                if i > 0 {
                    inserts.push(0.5 * (ts[i - 1] + ts[i]));
                }
                if i + 1 < ts.len() {
                    inserts.push(0.5 * (ts[i] + ts[i + 1]));
                }
            }
        }
        inserts.retain(|t| !ts.iter().any(|&u| (u - t).abs() < 1e-9));
        inserts.truncate(thresholds.max_refinements.saturating_sub(refinements));
        if inserts.is_empty() {
            break;
        }
        refinements += inserts.len();
        let extra: Vec<PathSample> = inserts
            .par_iter()
            .map(|&t| evaluate_sample(path, method, thresholds, t))
            .collect::<Result<Vec<_>>>()?;
        ts.extend(inserts.iter().copied());
        samples.extend(extra);
        let mut order: Vec<usize> = (0..ts.len()).collect();
        order.sort_by(|&a, &b| ts[a].partial_cmp(&ts[b]).unwrap());
        ts = order.iter().map(|&i| ts[i]).collect();
        samples = order.iter().map(|&i| samples[i].clone()).collect();
        if refinements >= thresholds.max_refinements {
            break;
        }
    }

    // Verdict.
    let flagged = samples.iter().any(|s| !s.flags.is_empty() || s.index.is_none());
    let reference = samples.first().and_then(|s| s.index.as_ref()).map(|r| r.value);
    let verdict = match reference {
        None => Verdict::Withheld,
        Some(v0) => {
            let mut all_equal = true;
            for s in &samples {
                if let Some(r) = &s.index {
                    if r.value != v0 {
                        all_equal = false;
                    }
                }
            }
            if !all_equal {
                Verdict::Violation
            } else if flagged {
                Verdict::Withheld
            } else {
                Verdict::IndexConstant
            }
        }
    };
    Ok(HomotopyReport {
        label: path.label.clone(),
        samples,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeGeometry;
    use crate::models::{build_bulk, DisorderSpec, ModelSpec};
    use crate::spectral::spectral_gap;

    #[test]
    fn constant_path_is_index_constant() {
        let g = LatticeGeometry::bulk_square(8, 2).unwrap();
        let h = build_bulk(&ModelSpec::qwz(-1.0), &DisorderSpec::none(), g).unwrap();
        let gap = spectral_gap(&h, 0.0).unwrap();
        let sw = SwitchFunction::for_gap(&gap, 0.8).unwrap();
        let mut path = path_corner_flatten(&h, &sw).unwrap();
        path.a1 = path.a0.clone();
        let path = path.with_samples(5);
        let report = monitor(
            &path,
            &MonitorIndexMethod::Fedosov {
                window: TraceWindow::bulk_default(&g),
                schedule: FedosovSchedule::default(),
            },
            &MonitorThresholds::default(),
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::IndexConstant);
        let v0 = report.samples[0].index.as_ref().unwrap().value;
        assert!(report.samples.iter().all(|s| s.index.as_ref().unwrap().value == v0));
    }

    #[test]
    fn corner_flatten_endpoints_match_named_operators() {
        let g = LatticeGeometry::bulk_square(6, 2).unwrap();
        let h = build_bulk(&ModelSpec::qwz(-1.0), &DisorderSpec::none(), g).unwrap();
        let gap = spectral_gap(&h, 0.0).unwrap();
        let sw = SwitchFunction::for_gap(&gap, 0.8).unwrap();
        let path = path_corner_flatten(&h, &sw).unwrap();
        let p = crate::spectral::fermi_projection(&h, 0.0).unwrap();
        let l2 = lambda(g, 2);
        let plp = p.mul(&l2).unwrap().mul(&p).unwrap();
        assert!(path.generator(0.0).sub(&plp).unwrap().max_norm() < 1e-10);
        let lpl = l2.mul(&p).unwrap().mul(&l2).unwrap();
        assert!(path.generator(1.0).sub(&lpl).unwrap().max_norm() < 1e-10);
    }

    #[test]
    fn truncate_flatten_diagonal_h_is_trivial() {
        // For diagonal H, g(L2 H L2) and g(H) agree on the half-space block.
        let g = LatticeGeometry::bulk_square(6, 1).unwrap();
        let h = crate::lattice::position_multiplier(g, 2, |x| {
            C64::new(if x >= 0 { 1.5 } else { -1.5 }, 0.0)
        });
        let h = LatticeOperator::new_hermitian(g, h.matrix.clone()).unwrap();
        let gap = spectral_gap(&h, 0.0).unwrap();
        let sw = SwitchFunction::for_gap(&gap, 0.8).unwrap();
        let path = path_truncate_flatten(&h, &sw).unwrap();
        // Where x2 >= 0, H is +1.5 (empty), so both endpoint generators vanish
        // on that block up to g of the zero eigenvalues of L2 H L2.
        let diff = path.generator(0.0).sub(&path.generator(1.0)).unwrap();
        // L2 (g(L2HL2) - g(H)) L2: on the diagonal block with x2 >= 0 both
        // give g(1.5) = 0; the complement is killed by L2.
        assert!(diff.max_norm() < 1e-12);
    }
}
