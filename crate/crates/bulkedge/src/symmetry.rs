//! Fermionic time reversal and theta-odd operator machinery.
//!
//! The anti-unitary `Theta = C . conj` is never stored as such; everything
//! routes through the unitary `C` (block-diagonal per lattice site, with
//! `C conj(C) = -1`) plus explicit conjugation in formulas.

use crate::lattice::{adjoint, LatticeGeometry, LatticeOperator};
use crate::{Error, Result, C64};
use ndarray::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const TR_TOL: f64 = 1e-12;

/// Time reversal `psi -> C conj(psi)` with `Theta^2 = -1`.
#[derive(Clone, Debug)]
pub struct TimeReversal {
    pub geometry: LatticeGeometry,
    pub c: Array2<C64>,
}

impl TimeReversal {
    /// Build from a per-site internal block; validates the defining relations.
    pub fn from_site_block(geometry: LatticeGeometry, block: &Array2<C64>) -> Result<Self> {
        let n = geometry.n_internal;
        if block.shape() != [n, n] {
            return Err(Error::GeometryMismatch(
                "time-reversal block does not match the internal dimension".into(),
            ));
        }
        let d = geometry.dim();
        let mut c = Array2::<C64>::zeros((d, d));
        for site in 0..geometry.n_sites() {
            let o = site * n;
            for i in 0..n {
                for j in 0..n {
                    c[[o + i, o + j]] = block[[i, j]];
                }
            }
        }
        let tr = TimeReversal { geometry, c };
        tr.validate()?;
        Ok(tr)
    }

    fn validate(&self) -> Result<()> {
        let d = self.geometry.dim();
        // C conj(C) = -1
        let cc = self.c.dot(&self.c.mapv(|z| z.conj()));
        let mut r = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { C64::new(-1.0, 0.0) } else { C64::new(0.0, 0.0) };
                r = r.max((cc[[i, j]] - e).norm());
            }
        }
        if r > TR_TOL {
            return Err(Error::NumericalIntegrity(format!(
                "C conj(C) differs from -1 by {r:.3e}"
            )));
        }
        // unitarity
        let u = adjoint(&self.c).dot(&self.c);
        let mut ru = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                ru = ru.max((u[[i, j]] - e).norm());
            }
        }
        if ru > TR_TOL {
            return Err(Error::NumericalIntegrity(format!(
                "time-reversal unitary residual {ru:.3e}"
            )));
        }
        Ok(())
    }

    /// `Theta psi`.
    pub fn apply(&self, psi: &Array1<C64>) -> Array1<C64> {
        self.c.dot(&psi.mapv(|z| z.conj()))
    }

    /// `Theta A Theta^{-1} = C conj(A) C^*`.
    pub fn conjugate(&self, a: &Array2<C64>) -> Array2<C64> {
        self.c.dot(&a.mapv(|z| z.conj())).dot(&adjoint(&self.c))
    }
}

/// Standard spin-1/2 representation: per-site block `i sigma_2 (x) 1_{N/2}`.
pub fn standard_tr(geometry: LatticeGeometry) -> Result<TimeReversal> {
    let n = geometry.n_internal;
    if n % 2 != 0 {
        return Err(Error::OddInternalDimension(n));
    }
    let half = n / 2;
    let mut block = Array2::<C64>::zeros((n, n));
    // i*sigma_2 = [[0, 1], [-1, 0]] acting on the (up, down) spin factor.
    for k in 0..half {
        block[[k, half + k]] = C64::new(1.0, 0.0);
        block[[half + k, k]] = C64::new(-1.0, 0.0);
    }
    TimeReversal::from_site_block(geometry, &block)
}

/// `|| A - Theta A Theta^{-1} ||_max`; zero iff `[A, Theta] = 0`.
pub fn commutes_with_tr(a: &LatticeOperator, theta: &TimeReversal) -> Result<f64> {
    if a.geometry != theta.geometry {
        return Err(Error::GeometryMismatch(
            "operator and time reversal live on different geometries".into(),
        ));
    }
    let t = theta.conjugate(&a.matrix);
    Ok((&a.matrix - &t).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `|| F + C F^T conj(C) ||_max`; zero iff `F = -Theta F^* Theta`.
pub fn theta_odd_residual(f: &LatticeOperator, theta: &TimeReversal) -> Result<f64> {
    if f.geometry != theta.geometry {
        return Err(Error::GeometryMismatch(
            "operator and time reversal live on different geometries".into(),
        ));
    }
    let ft = f.matrix.t().to_owned();
    let m = theta.c.dot(&ft).dot(&theta.c.mapv(|z| z.conj()));
    Ok((&f.matrix + &m).iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Relative theta-odd admission tolerance for the Z2 routines.
pub const THETA_ODD_ADMISSION: f64 = 1e-8;

/// Guard used by the Z2 index routines.
pub fn require_theta_odd(f: &LatticeOperator, theta: &TimeReversal) -> Result<()> {
    let res = theta_odd_residual(f, theta)?;
    let tol = THETA_ODD_ADMISSION * f.max_norm().max(1e-300);
    if res > tol {
        return Err(Error::NotThetaOdd { residual: res, tol });
    }
    Ok(())
}

/// Antisymmetric representation `M = C^* F` of a theta-odd operator; the
/// singular values of `M` equal those of `F`.
pub fn antisymmetric_rep(f: &LatticeOperator, theta: &TimeReversal) -> Result<Array2<C64>> {
    require_theta_odd(f, theta)?;
    let m = adjoint(&theta.c).dot(&f.matrix);
    // Exact antisymmetrization removes the admission-level residual.
    let mt = m.t().to_owned();
    Ok((&m - &mt).mapv(|z| z * C64::new(0.5, 0.0)))
}

/// Random theta-odd matrix `C M` with `M` complex antisymmetric.
pub fn random_theta_odd(dim: usize, seed: u64) -> Result<Array2<C64>> {
    if dim % 2 != 0 {
        return Err(Error::OddInternalDimension(dim));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Array2::<C64>::zeros((dim, dim));
    for i in 0..dim {
        for j in (i + 1)..dim {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m[[i, j]] = z;
            m[[j, i]] = -z;
        }
    }
    Ok(standard_c(dim).dot(&m))
}

/// Random theta-odd matrix with a prescribed (even) rank, built from a Youla
/// normal form `Q diag(sigma_k J) Q^T` with some blocks zeroed.
pub fn random_theta_odd_with_rank(dim: usize, rank: usize, seed: u64) -> Result<Array2<C64>> {
    if dim % 2 != 0 || rank % 2 != 0 || rank > dim {
        return Err(Error::Config(format!(
            "need even dim and even rank <= dim, got ({dim}, {rank})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_unitary(dim, &mut rng);
    let mut t = Array2::<C64>::zeros((dim, dim));
    for k in 0..rank / 2 {
        let s = rng.random_range(0.2..1.0);
        t[[2 * k, 2 * k + 1]] = C64::new(s, 0.0);
        t[[2 * k + 1, 2 * k]] = C64::new(-s, 0.0);
    }
    let m = q.dot(&t).dot(&q.t().to_owned());
    Ok(standard_c(dim).dot(&m))
}

/// The standard antisymmetric unitary `i sigma_2 (x) 1` on a plain even-dim
/// space (no lattice attached).
pub fn standard_c(dim: usize) -> Array2<C64> {
    let half = dim / 2;
    let mut c = Array2::<C64>::zeros((dim, dim));
    for k in 0..half {
        c[[k, half + k]] = C64::new(1.0, 0.0);
        c[[half + k, k]] = C64::new(-1.0, 0.0);
    }
    c
}

fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
    // QR of a Gaussian-ish matrix via Gram-Schmidt.
    let a = Array2::from_shape_fn((dim, dim), |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let mut q = Array2::<C64>::zeros((dim, dim));
    for j in 0..dim {
        let mut v = a.column(j).to_owned();
        for k in 0..j {
            let qk = q.column(k);
            let proj: C64 = qk.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            for i in 0..dim {
                v[i] -= proj * qk[i];
            }
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for i in 0..dim {
            q[[i, j]] = v[i] / norm;
        }
    }
    q
}

/// Numerical rank by singular-value threshold.
pub fn numerical_rank(m: &Array2<C64>, tol: f64) -> Result<usize> {
    use ndarray_linalg::SVD;
    let (_, sv, _) = m.svd(false, false)?;
    Ok(sv.iter().filter(|&&s| s > tol).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeGeometry;
    use ndarray_linalg::SVD;

    fn geom(n: usize) -> LatticeGeometry {
        LatticeGeometry::bulk_square(4, n).unwrap()
    }

    #[test]
    fn standard_blocks_and_involution() {
        let g = geom(2);
        let tr = standard_tr(g).unwrap();
        // N = 2 block is [[0, 1], [-1, 0]]
        assert_eq!(tr.c[[0, 1]], C64::new(1.0, 0.0));
        assert_eq!(tr.c[[1, 0]], C64::new(-1.0, 0.0));
        // N = 4: same identities hold (validated in the constructor).
        standard_tr(geom(4)).unwrap();
        assert!(standard_tr(geom(3)).is_err());
    }

    #[test]
    fn commutes_with_position_multipliers() {
        let g = geom(2);
        let tr = standard_tr(g).unwrap();
        for axis in [1u8, 2u8] {
            let l = crate::lattice::lambda(g, axis);
            let x = crate::lattice::position(g, axis);
            assert_eq!(commutes_with_tr(&l, &tr).unwrap(), 0.0);
            assert_eq!(commutes_with_tr(&x, &tr).unwrap(), 0.0);
        }
        let id = LatticeOperator::identity(g);
        assert_eq!(commutes_with_tr(&id, &tr).unwrap(), 0.0);
    }

    #[test]
    fn onsite_sigma3_anticommutes() {
        // A = i sigma_3 on every site: Theta A Theta^{-1} = -A for spin flip,
        // residual ||A - (-A)|| = 2 |i| = 2.
        let g = geom(2);
        let tr = standard_tr(g).unwrap();
        let d = g.dim();
        let mut m = Array2::<C64>::zeros((d, d));
        for site in 0..g.n_sites() {
            m[[2 * site, 2 * site]] = C64::new(0.0, 1.0);
            m[[2 * site + 1, 2 * site + 1]] = C64::new(0.0, -1.0);
        }
        let a = LatticeOperator::new(g, m).unwrap();
        let r = commutes_with_tr(&a, &tr).unwrap();
        approx::assert_abs_diff_eq!(r, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_is_theta_odd() {
        let g = geom(2);
        let tr = standard_tr(g).unwrap();
        let id = LatticeOperator::identity(g);
        assert!(theta_odd_residual(&id, &tr).unwrap() < 1e-14);
        // antisymmetric representation of the identity is C^*, antisymmetric.
        let m = antisymmetric_rep(&id, &tr).unwrap();
        let mt = m.t().to_owned();
        let r = (&m + &mt).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(r < 1e-12);
    }

    #[test]
    fn antisymmetric_rep_preserves_singular_values() {
        use rand::prelude::*;
        let g = geom(2);
        let tr = standard_tr(g).unwrap();
        let d = g.dim();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut anti = Array2::<C64>::zeros((d, d));
        for i in 0..d {
            for j in (i + 1)..d {
                let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                anti[[i, j]] = z;
                anti[[j, i]] = -z;
            }
        }
        // C * antisymmetric is theta-odd for any valid C.
        let f = LatticeOperator::new(g, tr.c.dot(&anti)).unwrap();
        assert!(theta_odd_residual(&f, &tr).unwrap() < 1e-12);
        let m = antisymmetric_rep(&f, &tr).unwrap();
        let (_, sf, _) = f.matrix.svd(false, false).unwrap();
        let (_, sm, _) = m.svd(false, false).unwrap();
        for (a, b) in sf.iter().zip(sm.iter()) {
            approx::assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn theta_odd_ranks_are_even() {
        for seed in 0..50 {
            let m = random_theta_odd(8, seed).unwrap();
            let r = numerical_rank(&m, 1e-8).unwrap();
            assert_eq!(r % 2, 0);
        }
        for seed in 0..50 {
            let rank = 2 * (seed as usize % 4);
            let m = random_theta_odd_with_rank(8, rank, seed + 100).unwrap();
            assert_eq!(numerical_rank(&m, 1e-8).unwrap(), rank);
        }
        // zero matrix has rank 0
        let z = Array2::<C64>::zeros((4, 4));
        assert_eq!(numerical_rank(&z, 1e-8).unwrap(), 0);
    }

    #[test]
    fn theta_odd_singular_values_pair_up() {
        let m = random_theta_odd(8, 42).unwrap();
        let (_, sv, _) = m.svd(false, false).unwrap();
        let mut s = sv.to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for pair in s.chunks(2) {
            approx::assert_abs_diff_eq!(pair[0], pair[1], epsilon = 1e-10);
        }
    }
}
