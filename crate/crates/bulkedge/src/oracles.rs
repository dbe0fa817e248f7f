//! Independent clean-limit ground truths: Bloch band theory, link-variable
//! Berry curvature, the Fu-Kane sewing-matrix Pfaffian at the four
//! time-reversal-invariant momenta, cylinder spectral flow, and brute-force
//! kernel dimensions.
//!
//! These share only the lattice containers and the eigensolver with the
//! index engines; every quantity here comes from momentum space, which the
//! real-space machinery never touches.

use crate::lattice::adjoint;
use crate::models::ModelSpec;
use crate::spectral::gap_from_eigenvalues;
use crate::symmetry::standard_c;
use crate::{Error, Result, C64};
use ndarray::prelude::*;
use ndarray_linalg::{Eigh, SVD, UPLO};

/// Bloch Hamiltonian `H(k)`: exact Fourier transform of the range-1 hoppings.
pub fn bloch_hamiltonian(model: &ModelSpec, k: (f64, f64)) -> Array2<C64> {
    let blocks = model.hopping_blocks();
    let n = model.n_internal();
    let mut h = blocks.t0.clone();
    let e1 = C64::new(0.0, -k.0).exp();
    let e2 = C64::new(0.0, -k.1).exp();
    h = h + blocks.t1.mapv(|z| z * e1) + adjoint(&blocks.t1).mapv(|z| z * e1.conj());
    h = h + blocks.t2.mapv(|z| z * e2) + adjoint(&blocks.t2).mapv(|z| z * e2.conj());
    debug_assert_eq!(h.nrows(), n);
    h
}

/// Minimum spectral gap around zero over a dense k-grid.
pub fn bloch_min_gap(model: &ModelSpec, n_k: usize) -> Result<f64> {
    let mut min_abs = f64::INFINITY;
    for i in 0..n_k {
        for j in 0..n_k {
            let k = k_point(i, j, n_k);
            let h = bloch_hamiltonian(model, k);
            let (w, _) = h.eigh(UPLO::Lower)?;
            for &l in w.iter() {
                min_abs = min_abs.min(l.abs());
            }
        }
    }
    Ok(2.0 * min_abs)
}

fn k_point(i: usize, j: usize, n_k: usize) -> (f64, f64) {
    let two_pi = 2.0 * std::f64::consts::PI;
    (
        -std::f64::consts::PI + two_pi * i as f64 / n_k as f64,
        -std::f64::consts::PI + two_pi * j as f64 / n_k as f64,
    )
}

fn occupied_frame(model: &ModelSpec, k: (f64, f64)) -> Result<Array2<C64>> {
    let h = bloch_hamiltonian(model, k);
    let (w, v) = h.eigh(UPLO::Lower)?;
    let n_occ = w.iter().filter(|&&l| l < 0.0).count();
    if n_occ == 0 || n_occ == w.len() {
        return Err(Error::Oracle(format!(
            "no occupied/empty split at k = ({:.3}, {:.3})",
            k.0, k.1
        )));
    }
    Ok(v.slice(s![.., 0..n_occ]).to_owned())
}

/// Chern number of the occupied bands by lattice-gauge link variables.
///
/// Each plaquette contributes the argument of the Wilson-loop product of
/// occupied-frame overlap determinants; the total is an exact integer for
/// any grid fine enough that no plaquette phase reaches pi. The plaquette
/// orientation chosen here is the repository's sign-convention reference.
pub fn chern_berry(model: &ModelSpec, n_k: usize) -> Result<i64> {
    if n_k < 32 {
        return Err(Error::Oracle("curvature grid needs n_k >= 32".into()));
    }
    let gap = bloch_min_gap(model, 64)?;
    if gap < 1e-6 {
        return Err(Error::Oracle(format!(
            "model is gapless (min gap {gap:.2e}); Chern number undefined"
        )));
    }
    let mut frames = Vec::with_capacity(n_k * n_k);
    for i in 0..n_k {
        for j in 0..n_k {
            frames.push(occupied_frame(model, k_point(i, j, n_k))?);
        }
    }
    let at = |i: usize, j: usize| &frames[(i % n_k) * n_k + (j % n_k)];
    let link = |a: &Array2<C64>, b: &Array2<C64>| -> Result<C64> {
        let overlap = adjoint(a).dot(b);
        let det = det_small(&overlap);
        if det.norm() < 1e-12 {
            return Err(Error::Oracle("singular link overlap; refine the grid".into()));
        }
        Ok(det / det.norm())
    };
    let mut total = 0.0f64;
    for i in 0..n_k {
        for j in 0..n_k {
            let u1 = link(at(i, j), at(i + 1, j))?;
            let u2 = link(at(i + 1, j), at(i + 1, j + 1))?;
            let u3 = link(at(i + 1, j + 1), at(i, j + 1))?;
            let u4 = link(at(i, j + 1), at(i, j))?;
            let phase = (u1 * u2 * u3 * u4).arg();
            total += phase;
        }
    }
    let c = total / (2.0 * std::f64::consts::PI);
    if (c - c.round()).abs() > 1e-6 {
        return Err(Error::Oracle(format!(
            "curvature sum {c:.8} not an integer; grid too coarse"
        )));
    }
    Ok(c.round() as i64)
}

fn det_small(m: &Array2<C64>) -> C64 {
    let n = m.nrows();
    match n {
        1 => m[[0, 0]],
        2 => m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]],
        _ => {
            // LU with partial pivoting.
            let mut a = m.clone();
            let mut det = C64::new(1.0, 0.0);
            for k in 0..n {
                let mut piv = k;
                for r in k + 1..n {
                    if a[[r, k]].norm() > a[[piv, k]].norm() {
                        piv = r;
                    }
                }
                if a[[piv, k]].norm() == 0.0 {
                    return C64::new(0.0, 0.0);
                }
                if piv != k {
                    for c in 0..n {
                        let t = a[[k, c]];
                        a[[k, c]] = a[[piv, c]];
                        a[[piv, c]] = t;
                    }
                    det = -det;
                }
                det *= a[[k, k]];
                for r in k + 1..n {
                    let f = a[[r, k]] / a[[k, k]];
                    for c in k..n {
                        let v = a[[k, c]];
                        a[[r, c]] = a[[r, c]] - f * v;
                    }
                }
            }
            det
        }
    }
}

// ---------------------------------------------------------------------------
// Pfaffian
// ---------------------------------------------------------------------------

/// Pfaffian of a complex antisymmetric matrix by skew-symmetric elimination
/// with partial pivoting.
pub fn pfaffian(m: &Array2<C64>) -> Result<C64> {
    let n = m.nrows();
    if n % 2 != 0 {
        return Err(Error::Oracle("Pfaffian needs an even dimension".into()));
    }
    let anti = m
        .iter()
        .zip(m.t().iter())
        .map(|(a, b)| (a + b).norm())
        .fold(0.0, f64::max);
    if anti > 1e-10 * m.iter().map(|z| z.norm()).fold(1e-300, f64::max) {
        return Err(Error::Oracle(format!(
            "matrix not antisymmetric (residual {anti:.3e})"
        )));
    }
    let mut a = m.clone();
    let mut pf = C64::new(1.0, 0.0);
    for k in (0..n).step_by(2) {
        // Pivot: move the largest |a[j, k]|, j > k, into row k+1.
        let mut piv = k + 1;
        for j in k + 1..n {
            if a[[j, k]].norm() > a[[piv, k]].norm() {
                piv = j;
            }
        }
        if a[[piv, k]].norm() == 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        if piv != k + 1 {
            for c in 0..n {
                let t = a[[k + 1, c]];
                a[[k + 1, c]] = a[[piv, c]];
                a[[piv, c]] = t;
            }
            for r in 0..n {
                let t = a[[r, k + 1]];
                a[[r, k + 1]] = a[[r, piv]];
                a[[r, piv]] = t;
            }
            pf = -pf;
        }
        let b = a[[k, k + 1]];
        pf *= b;
        // Schur complement update of the trailing block.
        for i in k + 2..n {
            for j in k + 2..n {
                let upd = (a[[k + 1, i]] * a[[k, j]] - a[[k, i]] * a[[k + 1, j]]) / b;
                a[[i, j]] = a[[i, j]] + upd;
            }
        }
    }
    Ok(pf)
}

// ---------------------------------------------------------------------------
// Fu-Kane sewing-matrix Z2 at the TRIM
// ---------------------------------------------------------------------------

const TRIM: [(f64, f64); 4] = [
    (0.0, 0.0),
    (std::f64::consts::PI, 0.0),
    (0.0, std::f64::consts::PI),
    (std::f64::consts::PI, std::f64::consts::PI),
];

/// Fu-Kane Z2 invariant from the sewing matrix
/// `w_mn(k) = <u_m(-k) | Theta u_n(k)>` evaluated at the four TRIM.
///
/// The square root of `det w` is continued along a straight k-path from the
/// reference TRIM (0,0), with occupied frames parallel-transported along the
/// path and mirrored to `-k`; this fixes the branch so that
/// `prod_G Pf(w(G)) / sqrt(det w(G))` is gauge-independent.
pub fn z2_pfaffian_trim(model: &ModelSpec) -> Result<u8> {
    z2_pfaffian_trim_with_gauge(model, None)
}

/// Same, with an optional unitary rotation of the reference occupied frame;
/// the output must not depend on it (gauge stability).
pub fn z2_pfaffian_trim_with_gauge(
    model: &ModelSpec,
    rotation: Option<&Array2<C64>>,
) -> Result<u8> {
    if !model.is_tri() {
        return Err(Error::Oracle(
            "sewing matrix needs a time-reversal invariant model".into(),
        ));
    }
    let n = model.n_internal();
    let c = standard_c(n);
    let steps = 128usize;
    let mut frame0 = occupied_frame(model, (0.0, 0.0))?;
    if let Some(r) = rotation {
        frame0 = frame0.dot(r);
    }
    let mut product = C64::new(1.0, 0.0);
    for (t, target) in TRIM.iter().enumerate() {
        let (pf, sqrt_det) = sewing_at_trim(model, &c, &frame0, *target, steps)?;
        if pf.norm() < 1e-8 {
            return Err(Error::Oracle(format!(
                "Pfaffian magnitude {:.2e} at TRIM {t}; perturb the grid",
                pf.norm()
            )));
        }
        product *= pf / sqrt_det;
    }
    if (product.norm() - 1.0).abs() > 1e-6 || product.re.abs() < 0.9 {
        return Err(Error::Oracle(format!(
            "TRIM product {product} not close to +-1"
        )));
    }
    Ok(if product.re > 0.0 { 0 } else { 1 })
}

/// Sewing matrix at a TRIM with a branch-continued sqrt(det).
fn sewing_at_trim(
    model: &ModelSpec,
    c: &Array2<C64>,
    frame0: &Array2<C64>,
    target: (f64, f64),
    steps: usize,
) -> Result<(C64, C64)> {
    // Parallel-transport the occupied frame along k(t) = t * target and its
    // mirror along -k(t), starting from the same frame at the origin.
    let mut plus = frame0.clone();
    let mut minus = frame0.clone();
    let sew = |plus: &Array2<C64>, minus: &Array2<C64>| -> Array2<C64> {
        // w_mn = <u_m(-k), Theta u_n(k)> = (U_minus^* C conj(U_plus))_mn
        adjoint(minus).dot(c).dot(&plus.mapv(|z| z.conj()))
    };
    let w0 = sew(&plus, &minus);
    let d0 = det_small(&w0);
    let mut arg = d0.arg();
    let mut mag = d0.norm();
    for s in 1..=steps {
        let t = s as f64 / steps as f64;
        let kp = (t * target.0, t * target.1);
        let km = (-kp.0, -kp.1);
        plus = transport(model, kp, &plus)?;
        minus = transport(model, km, &minus)?;
        let w = sew(&plus, &minus);
        let det = det_small(&w);
        let step = wrap_angle((det / det.norm()).arg() - wrap_angle(arg));
        if step.abs() > std::f64::consts::PI / 2.0 {
            return Err(Error::Oracle(
                "sqrt(det) continuation lost track; refine the path".into(),
            ));
        }
        arg += step;
        mag = det.norm();
    }
    let w = sew(&plus, &minus);
    let pf = pfaffian(&antisymmetrize(&w))?;
    let sqrt_det = C64::from_polar(mag.sqrt(), 0.5 * arg);
    Ok((pf, sqrt_det))
}

fn antisymmetrize(m: &Array2<C64>) -> Array2<C64> {
    let mt = m.t().to_owned();
    (m - &mt).mapv(|z| z * C64::new(0.5, 0.0))
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = a % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    }
    if x < -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// Project the previous frame onto the occupied space at `k` and
/// re-orthonormalize: a discrete parallel transport that keeps the gauge
/// smooth along the path.
fn transport(model: &ModelSpec, k: (f64, f64), prev: &Array2<C64>) -> Result<Array2<C64>> {
    let frame = occupied_frame(model, k)?;
    let overlap = adjoint(&frame).dot(prev);
    let (u_opt, _s, vt_opt) = overlap.svd(true, true)?;
    let u = u_opt.ok_or_else(|| Error::Oracle("svd returned no U".into()))?;
    let vt = vt_opt.ok_or_else(|| Error::Oracle("svd returned no Vt".into()))?;
    // Closest unitary alignment of the new frame with the transported one.
    Ok(frame.dot(&u.dot(&vt)))
}

// ---------------------------------------------------------------------------
// Cylinder spectral flow
// ---------------------------------------------------------------------------

/// Z2 spectral flow on a cylinder (periodic x1, open x2 of `width` rows):
/// the mod-2 number of Fermi-level crossings of lower-edge bands as k1
/// traverses [0, pi].
pub fn edge_spectral_flow(model: &ModelSpec, width: usize, mu: f64) -> Result<u8> {
    if !model.is_tri() {
        return Err(Error::Oracle(
            "spectral flow oracle needs a time-reversal invariant model".into(),
        ));
    }
    let gap = bloch_min_gap(model, 64)?;
    if gap < 1e-6 {
        return Err(Error::Oracle("bulk is gapless".into()));
    }
    let half_gap = 0.5 * gap;
    if mu.abs() > 0.9 * half_gap {
        return Err(Error::Oracle(format!(
            "Fermi level {mu} outside the bulk gap window"
        )));
    }
    let n = model.n_internal();
    let dim = width * n;
    let blocks = model.hopping_blocks();
    let n_k = 256usize;
    let hamiltonian = |k1: f64| -> Array2<C64> {
        let mut h = Array2::<C64>::zeros((dim, dim));
        let e1 = C64::new(0.0, -k1).exp();
        // On-site (includes the k1-dependent hop along the periodic axis).
        let onsite = blocks.t0.clone()
            + blocks.t1.mapv(|z| z * e1)
            + adjoint(&blocks.t1).mapv(|z| z * e1.conj());
        for r in 0..width {
            for s in 0..n {
                for t in 0..n {
                    h[[r * n + s, r * n + t]] += onsite[[s, t]];
                }
            }
            if r + 1 < width {
                for s in 0..n {
                    for t in 0..n {
                        h[[(r + 1) * n + s, r * n + t]] += blocks.t2[[s, t]];
                        h[[r * n + s, (r + 1) * n + t]] += blocks.t2[[t, s]].conj();
                    }
                }
            }
        }
        h
    };
    let lower_weight = |v: ArrayView1<C64>| -> f64 {
        let mut w = 0.0;
        for r in 0..width / 2 {
            for s in 0..n {
                w += v[r * n + s].norm_sqr();
            }
        }
        w
    };

    // March k1 over [0, pi], tracking in-gap states by eigenvector overlap.
    let mut crossings = 0usize;
    let mut prev: Option<(Vec<f64>, Array2<C64>, Vec<f64>)> = None;
    for step in 0..=n_k {
        let k1 = std::f64::consts::PI * step as f64 / n_k as f64;
        let (w, v) = hamiltonian(k1).eigh(UPLO::Lower)?;
        // in-gap states only
        let mut evals = Vec::new();
        let mut weights = Vec::new();
        let mut cols = Vec::new();
        for (j, &l) in w.iter().enumerate() {
            if l.abs() < 0.95 * half_gap {
                evals.push(l);
                weights.push(lower_weight(v.column(j)));
                cols.push(j);
            }
        }
        let vecs = if cols.is_empty() {
            Array2::zeros((dim, 0))
        } else {
            let mut m = Array2::zeros((dim, cols.len()));
            for (out, &j) in cols.iter().enumerate() {
                m.column_mut(out).assign(&v.column(j));
            }
            m
        };
        if let Some((pe, pv, pw)) = &prev {
            // Match previous in-gap states to current ones by max overlap.
            for a in 0..pe.len() {
                if pw[a] < 0.5 {
                    continue; // only lower-edge bands count
                }
                let mut best = None;
                let mut best_ov = 0.0;
                for b in 0..evals.len() {
                    let ov: f64 = (0..dim)
                        .map(|i| pv[[i, a]].conj() * vecs[[i, b]])
                        .sum::<C64>()
                        .norm();
                    if ov > best_ov {
                        best_ov = ov;
                        best = Some(b);
                    }
                }
                if let Some(b) = best {
                    if best_ov > 0.5 {
                        let wb = weights[b];
                        if wb > 0.4 && wb < 0.6 {
                            return Err(Error::Oracle(format!(
                                "ambiguous edge attribution (weight {wb:.2})"
                            )));
                        }
                        if wb > 0.5 && (pe[a] - mu) * (evals[b] - mu) < 0.0 {
                            crossings += 1;
                        }
                    }
                }
            }
        }
        prev = Some((evals, vecs, weights));
    }
    Ok((crossings % 2) as u8)
}

// ---------------------------------------------------------------------------
// Brute-force kernels
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct KernelCount {
    pub count: usize,
    /// True when some singular value fell inside [tau/2, 2 tau].
    pub resolution_warning: bool,
}

/// SVD count of singular values below `tau`.
pub fn brute_force_kernel(a: &Array2<C64>, tau: f64) -> Result<KernelCount> {
    let (_, sv, _) = a.svd(false, false)?;
    let count = sv.iter().filter(|&&s| s < tau).count();
    let resolution_warning = sv.iter().any(|&s| s >= tau / 2.0 && s <= 2.0 * tau);
    Ok(KernelCount { count, resolution_warning })
}

/// Real-space spectrum of a periodic patch must equal the union of Bloch
/// spectra on the matching discrete k-grid (consistency check helper).
pub fn bloch_spectrum_union(model: &ModelSpec, n1: usize, n2: usize) -> Result<Vec<f64>> {
    let mut all = Vec::with_capacity(n1 * n2 * model.n_internal());
    let two_pi = 2.0 * std::f64::consts::PI;
    for i in 0..n1 {
        for j in 0..n2 {
            let k = (two_pi * i as f64 / n1 as f64, two_pi * j as f64 / n2 as f64);
            let (w, _) = bloch_hamiltonian(model, k).eigh(UPLO::Lower)?;
            all.extend(w.iter());
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(all)
}

/// Gap report of the clean model around zero, from momentum space.
pub fn bloch_gap_report(model: &ModelSpec, n_k: usize) -> Result<crate::spectral::GapReport> {
    let mut evals = Vec::new();
    for i in 0..n_k {
        for j in 0..n_k {
            let (w, _) = bloch_hamiltonian(model, k_point(i, j, n_k)).eigh(UPLO::Lower)?;
            evals.extend(w.iter());
        }
    }
    Ok(gap_from_eigenvalues(&evals, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bloch_at_high_symmetry_points() {
        let m = ModelSpec::qwz(-1.0);
        let h00 = bloch_hamiltonian(&m, (0.0, 0.0));
        // (u + 2) sigma_3
        assert_abs_diff_eq!(h00[[0, 0]].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h00[[1, 1]].re, -1.0, epsilon = 1e-14);
        assert_eq!(h00[[0, 1]], C64::new(0.0, 0.0));
        let hpp = bloch_hamiltonian(&m, (std::f64::consts::PI, std::f64::consts::PI));
        // (u - 2) sigma_3
        assert_abs_diff_eq!(hpp[[0, 0]].re, -3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(hpp[[1, 1]].re, 3.0, epsilon = 1e-14);
    }

    #[test]
    fn pfaffian_closed_forms() {
        // 2x2: Pf = a01
        let mut m = Array2::<C64>::zeros((2, 2));
        m[[0, 1]] = C64::new(0.3, -0.7);
        m[[1, 0]] = -m[[0, 1]];
        assert_abs_diff_eq!(pfaffian(&m).unwrap().re, 0.3, epsilon = 1e-14);
        // 4x4: Pf = a f - b e + c d
        let vals = [
            C64::new(0.9, 0.1),
            C64::new(-0.2, 0.4),
            C64::new(0.5, -0.3),
            C64::new(0.7, 0.2),
            C64::new(-0.6, -0.1),
            C64::new(0.25, 0.8),
        ];
        let mut m = Array2::<C64>::zeros((4, 4));
        let idx = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for (v, (i, j)) in vals.iter().zip(idx.iter()) {
            m[[*i, *j]] = *v;
            m[[*j, *i]] = -*v;
        }
        let expect = vals[0] * vals[5] - vals[1] * vals[4] + vals[2] * vals[3];
        let pf = pfaffian(&m).unwrap();
        assert!((pf - expect).norm() < 1e-12);
        // Pf^2 = det on random antisymmetric matrices
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let d = 6;
            let mut m = Array2::<C64>::zeros((d, d));
            for i in 0..d {
                for j in (i + 1)..d {
                    let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    m[[i, j]] = z;
                    m[[j, i]] = -z;
                }
            }
            let pf = pfaffian(&m).unwrap();
            let det = det_small(&m);
            assert!((pf * pf - det).norm() < 1e-10);
        }
    }

    #[test]
    fn brute_force_kernel_counts() {
        // zero matrix of dimension d -> d
        let z = Array2::<C64>::zeros((5, 5));
        assert_eq!(brute_force_kernel(&z, 1e-8).unwrap().count, 5);
        // identity -> 0
        let id = Array2::<C64>::eye(5);
        assert_eq!(brute_force_kernel(&id, 1e-8).unwrap().count, 0);
        // constructed rank-r matrix -> d - r
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 8;
        let r = 3;
        let a = Array2::from_shape_fn((d, r), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let b = Array2::from_shape_fn((r, d), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let m = a.dot(&b);
        assert_eq!(brute_force_kernel(&m, 1e-8).unwrap().count, d - r);
    }

    #[test]
    fn atomic_oracle_values() {
        let m = ModelSpec::atomic();
        assert_eq!(chern_berry(&m, 32).unwrap(), 0);
        assert_eq!(z2_pfaffian_trim(&m).unwrap(), 0);
    }
}
