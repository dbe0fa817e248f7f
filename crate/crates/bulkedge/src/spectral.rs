//! Hermitian eigendecomposition contract, Fermi projection, smooth switch
//! function, functional calculus (eigenbasis and Helffer-Sjostrand routes),
//! gap detection and the Combes-Thomas resolvent check.

use crate::jets::Jet;
use crate::lattice::{
    adjoint, decay_fit, DecayFitOptions, DecayModel, LatticeOperator, LocalityFit,
};
use crate::{Error, Result, C64};
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, Inverse, UPLO};
use serde::{Deserialize, Serialize};

/// Eigenvalues (ascending) and orthonormal eigenbasis of a hermitian operator.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    /// Columns are eigenvectors.
    pub eigenvectors: Array2<C64>,
}

impl EigenDecomposition {
    /// Residual of the defining identity `A V - V diag(lambda)`.
    pub fn residual(&self, a: &Array2<C64>) -> f64 {
        let av = a.dot(&self.eigenvectors);
        let mut r = 0.0f64;
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            for i in 0..av.nrows() {
                r = r.max((av[[i, j]] - self.eigenvectors[[i, j]] * l).norm());
            }
        }
        r
    }

    pub fn orthonormality_residual(&self) -> f64 {
        let g = adjoint(&self.eigenvectors).dot(&self.eigenvectors);
        let n = g.nrows();
        let mut r = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                r = r.max((g[[i, j]] - e).norm());
            }
        }
        r
    }

    /// Reassemble `V f(diag) V^*`.
    pub fn apply(&self, f: impl Fn(f64) -> C64) -> Array2<C64> {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for (j, &l) in self.eigenvalues.iter().enumerate() {
            let fl = f(l);
            for i in 0..n {
                scaled[[i, j]] *= fl;
            }
        }
        scaled.dot(&adjoint(&self.eigenvectors))
    }
}

/// Eigenvalues only, for hermitian matrices.
pub fn eigvalsh(m: &Array2<C64>) -> Result<Vec<f64>> {
    let (w, _) = m.eigh(UPLO::Lower)?;
    Ok(w.to_vec())
}

/// Full eigendecomposition with the defining-identity residual contract.
pub fn eig_hermitian(a: &LatticeOperator) -> Result<EigenDecomposition> {
    if !a.is_hermitian() {
        return Err(Error::NotHermitian {
            residual: crate::lattice::hermiticity_residual(&a.matrix),
        });
    }
    let (w, v) = a.matrix.eigh(UPLO::Lower)?;
    let dec = EigenDecomposition {
        eigenvalues: w,
        eigenvectors: v,
    };
    let scale = dec
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let tol = 1e-10 * scale.max(1e-300);
    let res = dec.residual(&a.matrix);
    if res > tol && res > 1e-12 {
        return Err(Error::NumericalIntegrity(format!(
            "eigendecomposition residual {res:.3e} exceeds 1e-10 * ||A|| = {tol:.3e}"
        )));
    }
    if dec.orthonormality_residual() > 1e-10 {
        return Err(Error::NumericalIntegrity(
            "eigenbasis not orthonormal to 1e-10".into(),
        ));
    }
    Ok(dec)
}

/// Spectral gap report around a reference energy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_lower: f64,
    pub gap_upper: f64,
    /// True when the reference energy sits in the spectrum (no gap).
    pub contains_zero: bool,
}

impl GapReport {
    pub fn width(&self) -> f64 {
        (self.gap_upper - self.gap_lower).max(0.0)
    }
}

const EIGENVALUE_COLLISION_TOL: f64 = 1e-9;

/// Largest open interval around `around` free of eigenvalues.
pub fn spectral_gap(h: &LatticeOperator, around: f64) -> Result<GapReport> {
    let evals = eigvalsh(&h.matrix)?;
    Ok(gap_from_eigenvalues(&evals, around))
}

/// At finite volume "gapless" spectra are still discrete; the reference
/// energy counts as inside the spectrum when the surrounding interval is not
/// wider than a few neighboring level spacings (an in-gap ladder of edge
/// states looks exactly like that), or when it hits an eigenvalue outright.
pub fn gap_from_eigenvalues(evals: &[f64], around: f64) -> GapReport {
    let mut sorted = evals.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut hit = false;
    let mut below = usize::MAX;
    for (i, &l) in sorted.iter().enumerate() {
        if (l - around).abs() <= EIGENVALUE_COLLISION_TOL {
            hit = true;
        }
        if l <= around {
            lower = l;
            below = i;
        }
        if l > around && l < upper {
            upper = l;
            break;
        }
    }
    if !hit && lower.is_finite() && upper.is_finite() {
        let width = upper - lower;
        let mut local = 0.0f64;
        for k in 0..4usize {
            if below >= k + 1 {
                local = local.max(sorted[below - k] - sorted[below - k - 1]);
            }
            let j = below + 1 + k;
            if j + 1 < sorted.len() {
                local = local.max(sorted[j + 1] - sorted[j]);
            }
        }
        if width < 3.0 * local {
            hit = true;
        }
    }
    GapReport {
        gap_lower: lower,
        gap_upper: upper,
        contains_zero: hit,
    }
}

/// Fermi projection `P = chi_(-inf, mu)(H)`.
pub fn fermi_projection(h: &LatticeOperator, mu: f64) -> Result<LatticeOperator> {
    let dec = eig_hermitian(h)?;
    fermi_projection_from(&dec, h.geometry, mu)
}

/// Fermi projection from an existing eigendecomposition.
pub fn fermi_projection_from(
    dec: &EigenDecomposition,
    geometry: crate::lattice::LatticeGeometry,
    mu: f64,
) -> Result<LatticeOperator> {
    let closest = dec
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &l| acc.min((l - mu).abs()));
    if closest < EIGENVALUE_COLLISION_TOL {
        return Err(Error::GapViolation { mu, dist: closest });
    }
    let n_occ = dec.eigenvalues.iter().filter(|&&l| l < mu).count();
    if n_occ == 0 {
        return Ok(LatticeOperator::zeros(geometry));
    }
    let occ = dec.eigenvectors.slice(s![.., 0..n_occ]).to_owned();
    let p = occ.dot(&adjoint(&occ));
    let pa = adjoint(&p);
    let sym = (&p + &pa).mapv(|z| z * C64::new(0.5, 0.0));
    LatticeOperator::new_hermitian(geometry, sym)
}

/// `f(H)` through the eigenbasis.
pub fn apply_function_eig(h: &LatticeOperator, f: impl Fn(f64) -> f64) -> Result<LatticeOperator> {
    let dec = eig_hermitian(h)?;
    LatticeOperator::new(h.geometry, dec.apply(|l| C64::new(f(l), 0.0)))
}

/// `exp(i s H)` for hermitian H through the eigenbasis.
pub fn unitary_exp(h: &LatticeOperator, s: f64) -> Result<LatticeOperator> {
    let dec = eig_hermitian(h)?;
    LatticeOperator::new(h.geometry, dec.apply(|l| C64::new(0.0, s * l).exp()))
}

// ---------------------------------------------------------------------------
// Smooth switch function
// ---------------------------------------------------------------------------

/// Smooth bump `exp(-1/((t-a)(b-t)))` on (a, b), zero outside, as a jet.
fn bump_jet(t: f64, a: f64, b: f64, order: usize) -> Jet {
    // Near the endpoints the bump and all its derivatives underflow to zero;
    // returning the zero jet avoids inf*0 in the reciprocal.
    let margin = 1e-8 * (b - a);
    if t <= a + margin || t >= b - margin {
        return Jet::constant(0.0, order);
    }
    let tv = Jet::variable(t, order);
    let u = tv.sub(&Jet::constant(a, order));
    let v = Jet::constant(b, order).sub(&tv);
    let w = u.mul(&v);
    let q = w.recip().scale(-1.0);
    q.exp()
}

fn bump(t: f64, a: f64, b: f64) -> f64 {
    if t <= a || t >= b {
        0.0
    } else {
        (-1.0 / ((t - a) * (b - t))).exp()
    }
}

/// Smooth switch `g`: 1 below `a`, 0 above `b`, strictly decreasing on (a, b),
/// infinitely differentiable; `g'` is supported exactly in `[a, b]`.
#[derive(Clone, Debug)]
pub struct SwitchFunction {
    pub a: f64,
    pub b: f64,
    total: f64,
}

const GL_NODES: usize = 96;

impl SwitchFunction {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Config(format!("switch window needs a < b, got ({a}, {b})")));
        }
        let total = gauss_legendre_integral(a, b, GL_NODES, |t| bump(t, a, b));
        Ok(SwitchFunction { a, b, total })
    }

    /// Window covering the central `fraction` of a detected gap.
    pub fn for_gap(gap: &GapReport, fraction: f64) -> Result<Self> {
        if gap.contains_zero || !gap.gap_lower.is_finite() || !gap.gap_upper.is_finite() {
            return Err(Error::Config(
                "cannot place a switch window: no finite spectral gap".into(),
            ));
        }
        let c = 0.5 * (gap.gap_lower + gap.gap_upper);
        let h = 0.5 * fraction * gap.width();
        SwitchFunction::new(c - h, c + h)
    }

    pub fn eval(&self, e: f64) -> f64 {
        if e <= self.a {
            1.0
        } else if e >= self.b {
            0.0
        } else {
            let m = gauss_legendre_integral(self.a, e, GL_NODES, |t| bump(t, self.a, self.b));
            (1.0 - m / self.total).clamp(0.0, 1.0)
        }
    }

    /// Derivatives `[g, g', ..., g^(order)]` at `e`.
    pub fn jet(&self, e: f64, order: usize) -> Vec<f64> {
        let mut d = vec![0.0; order + 1];
        d[0] = self.eval(e);
        if order >= 1 {
            // g' = -phi(e) / total; higher derivatives follow from phi's jet.
            let phi = bump_jet(e, self.a, self.b, order - 1).derivatives();
            for (k, p) in phi.iter().enumerate() {
                d[k + 1] = -p / self.total;
            }
        }
        d
    }
}

/// Rising smooth step: 0 below `a`, 1 above `b`.
#[derive(Clone, Debug)]
struct RisingStep {
    a: f64,
    b: f64,
    total: f64,
}

impl RisingStep {
    fn new(a: f64, b: f64) -> Self {
        let total = gauss_legendre_integral(a, b, GL_NODES, |t| bump(t, a, b));
        RisingStep { a, b, total }
    }

    fn eval(&self, e: f64) -> f64 {
        if e <= self.a {
            0.0
        } else if e >= self.b {
            1.0
        } else {
            let m = gauss_legendre_integral(self.a, e, GL_NODES, |t| bump(t, self.a, self.b));
            (m / self.total).clamp(0.0, 1.0)
        }
    }

    fn jet(&self, e: f64, order: usize) -> Vec<f64> {
        let mut d = vec![0.0; order + 1];
        d[0] = self.eval(e);
        if order >= 1 {
            let phi = bump_jet(e, self.a, self.b, order - 1).derivatives();
            for (k, p) in phi.iter().enumerate() {
                d[k + 1] = p / self.total;
            }
        }
        d
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n and derivative by recurrence.
            let (mut p0, mut p1) = (1.0f64, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0f64, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn gauss_legendre_integral(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    x.iter().zip(&w).map(|(&xi, &wi)| wi * f(c + h * xi)).sum::<f64>() * h
}

// ---------------------------------------------------------------------------
// Helffer-Sjostrand functional calculus
// ---------------------------------------------------------------------------

/// Quadrature grid for the Helffer-Sjostrand strip integral.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct HsQuadrature {
    /// Nodes along the real axis.
    pub nx: usize,
    /// Nodes along the imaginary axis (upper half only).
    pub ny: usize,
    /// Strip half-width delta; the cutoff is 1 on |y| <= delta/2, 0 beyond delta.
    pub delta: f64,
}

impl HsQuadrature {
    pub fn refined(&self, factor: usize) -> Self {
        HsQuadrature {
            nx: self.nx * factor,
            ny: self.ny * factor,
            delta: self.delta,
        }
    }
}

/// `g(H)` through the Helffer-Sjostrand integral with a quasi-analytic
/// extension of order `m` and the given quadrature.
///
/// The switch is multiplied by a smooth envelope that is 1 on the spectrum
/// and rolls to zero left of it, which makes the extended function compactly
/// supported without changing `g(H)`.
pub fn apply_switch_hs(
    h: &LatticeOperator,
    g: &SwitchFunction,
    m: usize,
    quad: &HsQuadrature,
) -> Result<LatticeOperator> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian {
            residual: crate::lattice::hermiticity_residual(&h.matrix),
        });
    }
    let evals = eigvalsh(&h.matrix)?;
    let lo = evals.iter().cloned().fold(f64::INFINITY, f64::min);
    // Envelope rising from 0 to 1 strictly below the spectrum.
    let env = RisingStep::new(lo - 1.0, lo - 0.25);
    // f = g * envelope is smooth and compactly supported in [lo - 1, b].
    let x_lo = lo - 1.0;
    let x_hi = g.b;
    if x_hi <= x_lo {
        return Ok(LatticeOperator::zeros(h.geometry));
    }

    let d = h.dim();
    let (xn, xw) = gauss_legendre(quad.nx);
    let (yn, yw) = gauss_legendre(quad.ny);
    let cutoff = RisingStep::new(0.5, 1.0); // chi(s) = 1 - rising(s)

    let mut acc = Array2::<C64>::zeros((d, d));
    let cx = 0.5 * (x_lo + x_hi);
    let hx = 0.5 * (x_hi - x_lo);
    let hy = 0.5 * quad.delta;
    let fact_m: f64 = (1..=m).map(|i| i as f64).product();

    for (xi, wxi) in xn.iter().zip(&xw) {
        let x = cx + hx * xi;
        // Jets of f = g * envelope up to order m+1.
        let gj = g.jet(x, m + 1);
        let sj = env.jet(x, m + 1);
        let mut fj = vec![0.0; m + 2];
        for k in 0..=m + 1 {
            let mut s = 0.0;
            for i in 0..=k {
                let binom = binomial(k, i);
                s += binom * gj[i] * sj[k - i];
            }
            fj[k] = s;
        }
        for (yi, wyi) in yn.iter().zip(&yw) {
            let y = hy * (yi + 1.0); // map [-1,1] -> (0, delta]
            let sarg = y / quad.delta;
            let chi = 1.0 - cutoff.eval(sarg);
            let chi_prime = -cutoff.jet(sarg, 1)[1];
            // tau = sum_{k<=m} f^(k)(x) (iy)^k / k!
            let mut tau = C64::new(0.0, 0.0);
            let mut iy_pow = C64::new(1.0, 0.0);
            let iy = C64::new(0.0, y);
            let mut fact = 1.0;
            for (k, fk) in fj.iter().take(m + 1).enumerate() {
                if k > 0 {
                    fact *= k as f64;
                }
                tau += iy_pow * (fk / fact);
                iy_pow *= iy;
            }
            // iy_pow now holds (iy)^(m+1); we need (iy)^m.
            let iy_m = if m == 0 {
                C64::new(1.0, 0.0)
            } else {
                let mut p = C64::new(1.0, 0.0);
                for _ in 0..m {
                    p *= iy;
                }
                p
            };
            let dbar = C64::new(0.5 * chi, 0.0) * iy_m * (fj[m + 1] / fact_m)
                + C64::new(0.0, 0.5 * chi_prime / quad.delta) * tau;
            if dbar.norm() < 1e-300 {
                continue;
            }
            // (H - z)^{-1}
            let z = C64::new(x, y);
            let mut shifted = h.matrix.clone();
            for i in 0..d {
                shifted[[i, i]] -= z;
            }
            let resolvent = shifted.inv()?;
            let weight = dbar * (wxi * wyi * hx * hy);
            acc.scaled_add(weight, &resolvent);
        }
    }
    // Lower half-plane contributes the adjoint of the upper half.
    let total = (&acc + &adjoint(&acc)).mapv(|z| z / C64::new(2.0 * std::f64::consts::PI, 0.0));
    LatticeOperator::new(h.geometry, total)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r *= (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Max-norm difference between the HS route and the eigenbasis route for g(H).
pub fn hs_cross_residual(
    h: &LatticeOperator,
    g: &SwitchFunction,
    m: usize,
    quad: &HsQuadrature,
) -> Result<f64> {
    let hs = apply_switch_hs(h, g, m, quad)?;
    let eig = apply_function_eig(h, |l| g.eval(l))?;
    Ok(hs.sub(&eig)?.max_norm())
}

// ---------------------------------------------------------------------------
// Combes-Thomas
// ---------------------------------------------------------------------------

/// Exponential-decay fits of the resolvent `(H - z)^{-1}` at each requested
/// complex energy.
pub fn combes_thomas_check(
    h: &LatticeOperator,
    z_list: &[C64],
) -> Result<Vec<(C64, LocalityFit)>> {
    if !h.is_hermitian() {
        return Err(Error::NotHermitian {
            residual: crate::lattice::hermiticity_residual(&h.matrix),
        });
    }
    let evals = eigvalsh(&h.matrix)?;
    let d = h.dim();
    let mut out = Vec::with_capacity(z_list.len());
    for &z in z_list {
        let dist = evals
            .iter()
            .map(|&l| (C64::new(l, 0.0) - z).norm())
            .fold(f64::INFINITY, f64::min);
        if dist < 1e-9 {
            return Err(Error::GapViolation { mu: z.re, dist });
        }
        let mut shifted = h.matrix.clone();
        for i in 0..d {
            shifted[[i, i]] -= z;
        }
        let resolvent = LatticeOperator::new(h.geometry, shifted.inv()?)?;
        let fit = decay_fit(
            &resolvent,
            DecayModel::Exponential,
            DecayFitOptions::default(),
        )?;
        out.push((z, fit));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{GeometryKind, LatticeGeometry};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn diag_op(vals: &[f64]) -> LatticeOperator {
        let g = LatticeGeometry::new(GeometryKind::Bulk, (-1, 1), (-1, 1), 1).unwrap();
        assert!(vals.len() <= g.dim());
        let mut m = Array2::<C64>::zeros((g.dim(), g.dim()));
        for (i, &v) in vals.iter().enumerate() {
            m[[i, i]] = C64::new(v, 0.0);
        }
        for i in vals.len()..g.dim() {
            m[[i, i]] = C64::new(10.0, 0.0);
        }
        LatticeOperator::new(g, m).unwrap()
    }

    fn random_hermitian_matrix(d: usize, seed: u64) -> Array2<C64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((d, d), |_| {
            C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        });
        (&a + &adjoint(&a)).mapv(|z| z * C64::new(0.5, 0.0))
    }

    #[test]
    fn eig_hermitian_contract() {
        let h = diag_op(&[-1.0, 1.0]);
        let dec = eig_hermitian(&h).unwrap();
        assert_abs_diff_eq!(dec.eigenvalues[0], -1.0, epsilon = 1e-14);
        // identity has all eigenvalues 1
        let g = h.geometry;
        let id = LatticeOperator::identity(g);
        let di = eig_hermitian(&id).unwrap();
        assert!(di.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        // random hermitian 50x50 meets the residual contract (checked inside)
        let g50 = LatticeGeometry::new(GeometryKind::Bulk, (-2, 2), (-2, 2), 2).unwrap();
        let m = random_hermitian_matrix(g50.dim(), 1);
        let op = LatticeOperator::new_hermitian(g50, m).unwrap();
        let dec = eig_hermitian(&op).unwrap();
        assert!(dec.orthonormality_residual() < 1e-10);
    }

    #[test]
    fn gap_detection() {
        let h = diag_op(&[-1.0, 1.0]);
        let gp = spectral_gap(&h, 0.0).unwrap();
        assert_eq!(gp.gap_lower, -1.0);
        assert_eq!(gp.gap_upper, 1.0);
        assert!(!gp.contains_zero);
        let h2 = diag_op(&[-1.0, 0.0, 1.0]);
        assert!(spectral_gap(&h2, 0.0).unwrap().contains_zero);
    }

    #[test]
    fn fermi_projection_basics() {
        let h = diag_op(&[-1.0, 1.0]);
        let p = fermi_projection(&h, 0.0).unwrap();
        assert_abs_diff_eq!(p.matrix[[0, 0]].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.matrix[[1, 1]].re, 0.0, epsilon = 1e-12);
        // H = -1: everything filled
        let g = h.geometry;
        let minus = LatticeOperator::identity(g).scale(C64::new(-1.0, 0.0));
        let p2 = fermi_projection(&minus, 0.0).unwrap();
        assert!(p2.sub(&LatticeOperator::identity(g)).unwrap().max_norm() < 1e-12);
        // P^2 = P, [P, H] = 0
        let m = random_hermitian_matrix(g.dim(), 4);
        let hr = LatticeOperator::new_hermitian(g, m).unwrap();
        let evals = eigvalsh(&hr.matrix).unwrap();
        let mu = 0.5 * (evals[2] + evals[3]);
        let p3 = fermi_projection(&hr, mu).unwrap();
        let idem = p3.mul(&p3).unwrap().sub(&p3).unwrap().max_norm();
        assert!(idem < 1e-10);
        let comm = p3.mul(&hr).unwrap().sub(&hr.mul(&p3).unwrap()).unwrap().max_norm();
        assert!(comm < 1e-10);
        // mu on an eigenvalue is rejected
        assert!(matches!(
            fermi_projection(&hr, evals[2]),
            Err(Error::GapViolation { .. })
        ));
    }

    #[test]
    fn switch_function_shape() {
        let g = SwitchFunction::new(-0.8, 0.8).unwrap();
        assert_eq!(g.eval(-0.9), 1.0);
        assert_eq!(g.eval(0.9), 0.0);
        assert_abs_diff_eq!(g.eval(0.0), 0.5, epsilon = 1e-12);
        let mut prev = 1.0;
        for i in 0..50 {
            let e = -0.8 + 1.6 * (i as f64 + 0.5) / 50.0;
            let v = g.eval(e);
            assert!(v < prev);
            prev = v;
        }
        // jet: g' < 0 inside, 0 outside
        let j = g.jet(0.1, 2);
        assert!(j[1] < 0.0);
        assert_eq!(g.jet(0.9, 2)[1], 0.0);
        // derivative consistency with finite differences
        let e0 = 0.23;
        let h = 1e-5;
        let fd = (g.eval(e0 + h) - g.eval(e0 - h)) / (2.0 * h);
        assert_abs_diff_eq!(g.jet(e0, 1)[1], fd, epsilon = 1e-7);
    }

    #[test]
    fn apply_function_matches_spectrum() {
        let g = LatticeGeometry::new(GeometryKind::Bulk, (-1, 1), (-1, 1), 1).unwrap();
        let m = random_hermitian_matrix(g.dim(), 2);
        let h = LatticeOperator::new_hermitian(g, m).unwrap();
        // identity function returns H
        let same = apply_function_eig(&h, |l| l).unwrap();
        assert!(same.sub(&h).unwrap().max_norm() < 1e-10);
        // spectrum of f(H) = f(spectrum)
        let f = |l: f64| (l * 1.3).tanh();
        let fh = apply_function_eig(&h, f).unwrap();
        let mut expect: Vec<f64> = eigvalsh(&h.matrix).unwrap().iter().map(|&l| f(l)).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let got = eigvalsh(&fh.matrix).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn switch_equals_projection_for_gapped_h() {
        let h = diag_op(&[-1.2, -1.0, 0.9, 1.1]);
        let gap = spectral_gap(&h, 0.0).unwrap();
        let g = SwitchFunction::for_gap(&gap, 0.8).unwrap();
        let gh = apply_function_eig(&h, |l| g.eval(l)).unwrap();
        let p = fermi_projection(&h, 0.0).unwrap();
        assert!(gh.sub(&p).unwrap().max_norm() < 1e-10);
        // g^2 - g vanishes on the spectrum
        for l in eigvalsh(&h.matrix).unwrap() {
            let v = g.eval(l);
            assert!((v * v - v).abs() < 1e-12);
        }
        // exp(-2 pi i g(H)) = 1
        let e = unitary_exp(&gh, -2.0 * std::f64::consts::PI).unwrap();
        let id = LatticeOperator::identity(h.geometry);
        assert!(e.sub(&id).unwrap().max_norm() < 1e-10);
    }

    #[test]
    fn resolvent_identity() {
        let g = LatticeGeometry::new(GeometryKind::Bulk, (-2, 2), (-2, 2), 1).unwrap();
        let m = random_hermitian_matrix(g.dim(), 9);
        let h = LatticeOperator::new_hermitian(g, m).unwrap();
        let z = C64::new(0.3, 0.7);
        let w = C64::new(-0.2, -0.4);
        let d = g.dim();
        let rz = {
            let mut s = h.matrix.clone();
            for i in 0..d {
                s[[i, i]] -= z;
            }
            s.inv().unwrap()
        };
        let rw = {
            let mut s = h.matrix.clone();
            for i in 0..d {
                s[[i, i]] -= w;
            }
            s.inv().unwrap()
        };
        let lhs = &rz - &rw;
        let rhs = rz.dot(&rw).mapv(|v| v * (z - w));
        let resid = (&lhs - &rhs)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        assert!(resid < 1e-9);
    }

    #[test]
    fn combes_thomas_diagonal_resolvent() {
        let h = diag_op(&[-1.0, -0.5, 0.5, 1.0]);
        let d = h.dim();
        let z = C64::new(0.0, 0.5);
        let mut s = h.matrix.clone();
        for i in 0..d {
            s[[i, i]] -= z;
        }
        let r = s.inv().unwrap();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    assert_eq!(r[[i, j]], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn hs_route_zero_function() {
        // A switch far above the spectrum: g = 1 on all of it, so f = g*env
        // reproduces the identity; a switch far below gives ~0. Exercise the
        // trivial end: spectrum below a => g(H) = identity.
        let h = diag_op(&[-1.0, -0.8, -0.6, -0.4]);
        let g = SwitchFunction::new(2.0, 3.0).unwrap();
        let quad = HsQuadrature { nx: 48, ny: 48, delta: 0.5 };
        let hs = apply_switch_hs(&h, &g, 3, &quad).unwrap();
        let id = LatticeOperator::identity(h.geometry);
        assert!(hs.sub(&id).unwrap().max_norm() < 1e-5);

        // A window entirely below the envelope support makes the extended
        // function identically zero, and the integral is exactly zero.
        let g0 = SwitchFunction::new(-6.0, -5.5).unwrap();
        let hs0 = apply_switch_hs(&h, &g0, 3, &quad).unwrap();
        assert_eq!(hs0.max_norm(), 0.0);
    }
}
