//! Concrete tight-binding models: a two-band Chern insulator, a four-band
//! time-reversal-invariant insulator built by exact doubling, a trivial
//! atomic insulator, seeded on-site disorder and boundary conditions.

use crate::lattice::{
    restrict_half_space, GeometryKind, LatticeGeometry, LatticeOperator,
};
use crate::symmetry::TimeReversal;
use crate::{Error, Result, C64};
use ndarray::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Qwz,
    Bhz,
    AtomicTrivial,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    /// Mass parameter: u for the two-band model, M for the four-band one.
    pub mass: f64,
    /// Optional time-reversal-preserving inter-block coupling of the
    /// four-band model; zero keeps the exact block-diagonal doubling.
    #[serde(default)]
    pub coupling: f64,
}

impl ModelSpec {
    pub fn qwz(mass: f64) -> Self {
        ModelSpec { family: ModelFamily::Qwz, mass, coupling: 0.0 }
    }

    pub fn bhz(mass: f64) -> Self {
        ModelSpec { family: ModelFamily::Bhz, mass, coupling: 0.0 }
    }

    pub fn atomic() -> Self {
        ModelSpec { family: ModelFamily::AtomicTrivial, mass: 1.0, coupling: 0.0 }
    }

    pub fn n_internal(&self) -> usize {
        match self.family {
            ModelFamily::Qwz => 2,
            ModelFamily::Bhz => 4,
            ModelFamily::AtomicTrivial => 2,
        }
    }

    /// True when the model commutes with the standard time reversal.
    pub fn is_tri(&self) -> bool {
        matches!(self.family, ModelFamily::Bhz | ModelFamily::AtomicTrivial)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisorderKind {
    OnsiteScalar,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct DisorderSpec {
    /// Uniform amplitude W: per-site values are i.i.d. uniform in [-W, W].
    pub amplitude: f64,
    pub seed: u64,
    pub kind: DisorderKind,
}

impl DisorderSpec {
    pub fn none() -> Self {
        DisorderSpec { amplitude: 0.0, seed: 0, kind: DisorderKind::OnsiteScalar }
    }

    pub fn uniform(amplitude: f64, seed: u64) -> Self {
        DisorderSpec { amplitude, seed, kind: DisorderKind::OnsiteScalar }
    }

    /// Disorder value at a site. Keyed by coordinates, not fill order, so a
    /// truncated strip sees exactly the same values as the bulk it came from.
    pub fn value_at(&self, x1: i32, x2: i32) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..12].copy_from_slice(&x1.to_le_bytes());
        key[12..16].copy_from_slice(&x2.to_le_bytes());
        key[16] = 0x5a;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.random_range(-self.amplitude..=self.amplitude)
    }
}

/// Hopping blocks of a range-1 model: on-site `t0` plus displacements
/// `+e1`, `+e2` (their adjoints cover `-e1`, `-e2`).
pub struct HoppingBlocks {
    pub t0: Array2<C64>,
    pub t1: Array2<C64>,
    pub t2: Array2<C64>,
}

fn pauli() -> [Array2<C64>; 4] {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    [
        array![[l, o], [o, l]],
        array![[o, l], [l, o]],
        array![[o, -i], [i, o]],
        array![[l, o], [o, -l]],
    ]
}

fn two_band_blocks(mass: f64) -> HoppingBlocks {
    let [_, s1, s2, s3] = pauli();
    let half = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    HoppingBlocks {
        t0: s3.mapv(|z| z * mass),
        t1: s3.mapv(|z| z * half) + s1.mapv(|z| z * ih),
        t2: s3.mapv(|z| z * half) + s2.mapv(|z| z * ih),
    }
}

/// Place two 2x2 blocks on the diagonal of a 4x4 internal space.
fn block_diag(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let mut m = Array2::<C64>::zeros((4, 4));
    m.slice_mut(s![0..2, 0..2]).assign(a);
    m.slice_mut(s![2..4, 2..4]).assign(b);
    m
}

/// The time-reversal-preserving inter-block coupling used when
/// `coupling != 0`: an on-site term proportional to `sigma_2 (x) sigma_2`.
fn bhz_coupling_block(c: f64) -> Array2<C64> {
    let [_, _, s2, _] = pauli();
    let mut m = Array2::<C64>::zeros((4, 4));
    // sigma_2 (x) sigma_2 in the (spin, orbital) ordering: real symmetric.
    for i in 0..2 {
        for j in 0..2 {
            let v = s2[[i, j]] * C64::new(0.0, -1.0); // -i sigma_2: real
            for k in 0..2 {
                for l in 0..2 {
                    let w = s2[[k, l]] * C64::new(0.0, -1.0);
                    m[[i * 2 + k, j * 2 + l]] += v * w * C64::new(-c, 0.0);
                }
            }
        }
    }
    m
}

impl ModelSpec {
    /// Real-space hopping table of the model.
    pub fn hopping_blocks(&self) -> HoppingBlocks {
        match self.family {
            ModelFamily::Qwz => two_band_blocks(self.mass),
            ModelFamily::AtomicTrivial => {
                let [_, _, _, s3] = pauli();
                HoppingBlocks {
                    t0: s3.mapv(|z| z * self.mass),
                    t1: Array2::zeros((2, 2)),
                    t2: Array2::zeros((2, 2)),
                }
            }
            ModelFamily::Bhz => {
                // Upper block h(M); lower block = conj of the upper with the
                // momentum reversed, which in real space is the elementwise
                // conjugate of every hopping block.
                let up = two_band_blocks(self.mass);
                let mut t0 = block_diag(&up.t0, &up.t0.mapv(|z| z.conj()));
                let t1 = block_diag(&up.t1, &up.t1.mapv(|z| z.conj()));
                let t2 = block_diag(&up.t2, &up.t2.mapv(|z| z.conj()));
                if self.coupling != 0.0 {
                    t0 = t0 + bhz_coupling_block(self.coupling);
                }
                HoppingBlocks { t0, t1, t2 }
            }
        }
    }
}

fn fill_hoppings(
    geometry: LatticeGeometry,
    blocks: &HoppingBlocks,
    disorder: &DisorderSpec,
    periodic: bool,
) -> Array2<C64> {
    let n = geometry.n_internal;
    let d = geometry.dim();
    let mut m = Array2::<C64>::zeros((d, d));
    let put = |m: &mut Array2<C64>, i: usize, j: usize, b: &Array2<C64>, conj_t: bool| {
        for s in 0..n {
            for t in 0..n {
                let v = if conj_t { b[[t, s]].conj() } else { b[[s, t]] };
                m[[i + s, j + t]] += v;
            }
        }
    };
    let n1 = geometry.n_x1() as i32;
    let n2 = geometry.n_x2() as i32;
    for (x1, x2) in geometry.sites() {
        let i = geometry.site_index(x1, x2, 0).unwrap();
        put(&mut m, i, i, &blocks.t0, false);
        let w = disorder.value_at(x1, x2);
        if w != 0.0 {
            for s in 0..n {
                m[[i + s, i + s]] += C64::new(w, 0.0);
            }
        }
        // +e1 and +e2 neighbors; adjoint blocks come from symmetrizing.
        let neighbors = [(x1 + 1, x2, &blocks.t1), (x1, x2 + 1, &blocks.t2)];
        for (y1, y2, b) in neighbors {
            let (mut y1, mut y2) = (y1, y2);
            if periodic {
                if y1 > geometry.x1_max {
                    y1 -= n1;
                }
                if y2 > geometry.x2_max {
                    y2 -= n2;
                }
            }
            if geometry.contains(y1, y2) {
                let j = geometry.site_index(y1, y2, 0).unwrap();
                // <y| H |x> = t_{+e}, so the block lands at (row j, col i).
                put(&mut m, j, i, b, false);
                put(&mut m, i, j, b, true);
            }
        }
    }
    m
}

/// Bulk Hamiltonian with open (Dirichlet) lattice edges.
pub fn build_bulk(
    model: &ModelSpec,
    disorder: &DisorderSpec,
    geometry: LatticeGeometry,
) -> Result<LatticeOperator> {
    if geometry.kind != GeometryKind::Bulk {
        return Err(Error::InvalidGeometry("bulk geometry required".into()));
    }
    if geometry.n_internal != model.n_internal() {
        return Err(Error::GeometryMismatch(format!(
            "model needs N = {}, geometry has N = {}",
            model.n_internal(),
            geometry.n_internal
        )));
    }
    let blocks = model.hopping_blocks();
    LatticeOperator::new_hermitian(geometry, fill_hoppings(geometry, &blocks, disorder, false))
}

/// Bulk Hamiltonian with periodic wrap in both directions (used only by the
/// Bloch-consistency cross-checks).
pub fn build_bulk_periodic(
    model: &ModelSpec,
    disorder: &DisorderSpec,
    geometry: LatticeGeometry,
) -> Result<LatticeOperator> {
    if geometry.kind != GeometryKind::Bulk {
        return Err(Error::InvalidGeometry("bulk geometry required".into()));
    }
    let blocks = model.hopping_blocks();
    LatticeOperator::new_hermitian(geometry, fill_hoppings(geometry, &blocks, disorder, true))
}

/// Boundary condition for the edge Hamiltonian.
#[derive(Clone, Debug)]
pub enum BoundaryCondition {
    Dirichlet,
    /// Extra self-adjoint term supported within `depth` rows of the x2 = 0
    /// edge and hopping range `range`.
    Loc2Perturbation {
        perturbation: LatticeOperator,
        depth: i32,
        range: i32,
    },
}

impl BoundaryCondition {
    /// Scalar on-site potential on the first `depth` rows; self-adjoint,
    /// commutes with time reversal, exactly LOC2.
    pub fn onsite_edge_potential(
        strip: LatticeGeometry,
        strength: f64,
        depth: i32,
    ) -> Result<Self> {
        let mut m = Array2::<C64>::zeros((strip.dim(), strip.dim()));
        for (x1, x2) in strip.sites() {
            if x2 < depth {
                let i = strip.site_index(x1, x2, 0).unwrap();
                for s in 0..strip.n_internal {
                    m[[i + s, i + s]] = C64::new(strength, 0.0);
                }
            }
        }
        Ok(BoundaryCondition::Loc2Perturbation {
            perturbation: LatticeOperator::new_hermitian(strip, m)?,
            depth,
            range: 0,
        })
    }
}

/// Edge Hamiltonian on a half-space strip: the truncated bulk plus an
/// optional LOC2 boundary perturbation.
pub fn build_edge(
    model: &ModelSpec,
    disorder: &DisorderSpec,
    strip: LatticeGeometry,
    bc: &BoundaryCondition,
) -> Result<LatticeOperator> {
    if strip.kind != GeometryKind::HalfSpace {
        return Err(Error::InvalidGeometry("half-space geometry required".into()));
    }
    if strip.n_internal != model.n_internal() {
        return Err(Error::GeometryMismatch(format!(
            "model needs N = {}, geometry has N = {}",
            model.n_internal(),
            strip.n_internal
        )));
    }
    let blocks = model.hopping_blocks();
    let dirichlet =
        LatticeOperator::new_hermitian(strip, fill_hoppings(strip, &blocks, disorder, false))?;
    match bc {
        BoundaryCondition::Dirichlet => Ok(dirichlet),
        BoundaryCondition::Loc2Perturbation { perturbation, depth, range } => {
            if !perturbation.is_hermitian() {
                return Err(Error::NotHermitian {
                    residual: crate::lattice::hermiticity_residual(&perturbation.matrix),
                });
            }
            validate_loc2_support(perturbation, *depth, *range)?;
            dirichlet.add(perturbation)
        }
    }
}

fn validate_loc2_support(p: &LatticeOperator, depth: i32, range: i32) -> Result<()> {
    let g = p.geometry;
    for x in g.sites() {
        for y in g.sites() {
            let v = p.block(x, y)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
            if v > 1e-14 {
                let dist = (x.0 - y.0).abs().max((x.1 - y.1).abs());
                if x.1 >= depth || y.1 >= depth || dist > range {
                    return Err(Error::Config(format!(
                        "boundary perturbation violates its declared support at {:?} -> {:?}",
                        x, y
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Dirichlet truncation `iota^* H iota` of an explicit bulk operator.
pub fn dirichlet_truncation(h_bulk: &LatticeOperator) -> Result<LatticeOperator> {
    restrict_half_space(h_bulk)
}

/// Doubling construction: `H~ = H (+) Theta H Theta^*` on the doubled
/// internal space, with `Theta~ = [[0, Theta], [Theta, 0]]`.
pub fn doubled_model(
    h: &LatticeOperator,
    theta: &TimeReversal,
) -> Result<(LatticeOperator, TimeReversal)> {
    if h.geometry != theta.geometry {
        return Err(Error::GeometryMismatch(
            "operator and time reversal live on different geometries".into(),
        ));
    }
    let g = h.geometry;
    let n = g.n_internal;
    let gd = LatticeGeometry::new(
        g.kind,
        (g.x1_min, g.x1_max),
        (g.x2_min, g.x2_max),
        2 * n,
    )?
    .with_origin_offset(g.origin_offset)?;
    let conj = theta.conjugate(&h.matrix);
    let d = g.dim();
    let dd = gd.dim();
    let mut m = Array2::<C64>::zeros((dd, dd));
    let mut c = Array2::<C64>::zeros((dd, dd));
    for i in 0..d {
        let (x1, x2, s) = g.site_of(i);
        let di = gd.site_index(x1, x2, s).unwrap();
        let di2 = gd.site_index(x1, x2, s + n).unwrap();
        for j in 0..d {
            let (y1, y2, t) = g.site_of(j);
            let dj = gd.site_index(y1, y2, t).unwrap();
            let dj2 = gd.site_index(y1, y2, t + n).unwrap();
            m[[di, dj]] = h.matrix[[i, j]];
            m[[di2, dj2]] = conj[[i, j]];
            c[[di, dj2]] = theta.c[[i, j]];
            c[[di2, dj]] = theta.c[[i, j]];
        }
    }
    let hd = LatticeOperator::new_hermitian(gd, m)?;
    let td = TimeReversal { geometry: gd, c };
    // Validate the doubled construction: Theta~^2 = -1 and [H~, Theta~] = 0.
    let cc = td.c.dot(&td.c.mapv(|z| z.conj()));
    for i in 0..dd {
        for j in 0..dd {
            let e = if i == j { C64::new(-1.0, 0.0) } else { C64::new(0.0, 0.0) };
            if (cc[[i, j]] - e).norm() > 1e-12 {
                return Err(Error::NumericalIntegrity(
                    "doubled time reversal does not square to -1".into(),
                ));
            }
        }
    }
    let comm = crate::symmetry::commutes_with_tr(&hd, &td)?;
    if comm > 1e-12 * hd.max_norm().max(1.0) {
        return Err(Error::NumericalIntegrity(format!(
            "doubled Hamiltonian does not commute with the doubled time reversal ({comm:.3e})"
        )));
    }
    Ok((hd, td))
}
