//! Lattice geometry, dense operator storage, step/position multipliers,
//! non-commutative derivatives, half-space embedding and locality fits.

use crate::{Error, Result, C64};
use ndarray::prelude::*;
use ndarray_linalg::SVD;
use serde::{Deserialize, Serialize};

pub const HERMITICITY_TOL: f64 = 1e-12;

/// Floor below which a matrix element block counts as numerically zero.
pub const BLOCK_FLOOR: f64 = 1e-15;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    Bulk,
    HalfSpace,
}

/// Finite rectangular patch of the square lattice with an N-dimensional
/// internal space per site.
///
/// Flattening order is part of the file-format contract: x2-major, then x1,
/// then the internal index (fastest).
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct LatticeGeometry {
    pub kind: GeometryKind,
    pub x1_min: i32,
    pub x1_max: i32,
    pub x2_min: i32,
    pub x2_max: i32,
    pub n_internal: usize,
    /// Half-integer shift of the flux branch point off the lattice.
    pub origin_offset: (f64, f64),
}

fn is_half_integer(o: f64) -> bool {
    (o - o.floor() - 0.5).abs() < 1e-12
}

impl LatticeGeometry {
    pub fn new(
        kind: GeometryKind,
        x1_range: (i32, i32),
        x2_range: (i32, i32),
        n_internal: usize,
    ) -> Result<Self> {
        let g = LatticeGeometry {
            kind,
            x1_min: x1_range.0,
            x1_max: x1_range.1,
            x2_min: x2_range.0,
            x2_max: x2_range.1,
            n_internal,
            origin_offset: (0.5, 0.5),
        };
        g.validate()?;
        Ok(g)
    }

    /// Bulk square patch with `side` sites per axis, centered so that the
    /// origin lies strictly inside: ranges `[-side/2, side/2 - 1]`.
    pub fn bulk_square(side: usize, n_internal: usize) -> Result<Self> {
        let h = side as i32 / 2;
        Self::new(
            GeometryKind::Bulk,
            (-h, side as i32 - h - 1),
            (-h, side as i32 - h - 1),
            n_internal,
        )
    }

    /// Half-space strip: `side` sites along x1, `width` rows x2 in [0, width).
    pub fn strip(side: usize, width: usize, n_internal: usize) -> Result<Self> {
        let h = side as i32 / 2;
        Self::new(
            GeometryKind::HalfSpace,
            (-h, side as i32 - h - 1),
            (0, width as i32 - 1),
            n_internal,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.x1_min > self.x1_max || self.x2_min > self.x2_max {
            return Err(Error::InvalidGeometry("empty coordinate range".into()));
        }
        if self.n_internal == 0 {
            return Err(Error::InvalidGeometry("n_internal must be positive".into()));
        }
        match self.kind {
            GeometryKind::Bulk => {
                if !(self.x1_min < 0 && self.x1_max > 0 && self.x2_min < 0 && self.x2_max > 0) {
                    return Err(Error::InvalidGeometry(
                        "bulk geometry must contain (0,0) strictly in its interior".into(),
                    ));
                }
            }
            GeometryKind::HalfSpace => {
                if self.x2_min != 0 {
                    return Err(Error::InvalidGeometry(
                        "half-space x2 range must start at 0".into(),
                    ));
                }
            }
        }
        if !is_half_integer(self.origin_offset.0) || !is_half_integer(self.origin_offset.1) {
            return Err(Error::Config(
                "origin offset must be half-integer to keep the branch point off-lattice".into(),
            ));
        }
        Ok(())
    }

    pub fn with_origin_offset(mut self, o: (f64, f64)) -> Result<Self> {
        self.origin_offset = o;
        self.validate()?;
        Ok(self)
    }

    pub fn n_x1(&self) -> usize {
        (self.x1_max - self.x1_min + 1) as usize
    }

    pub fn n_x2(&self) -> usize {
        (self.x2_max - self.x2_min + 1) as usize
    }

    pub fn n_sites(&self) -> usize {
        self.n_x1() * self.n_x2()
    }

    /// Total Hilbert-space dimension `sites * N`.
    pub fn dim(&self) -> usize {
        self.n_sites() * self.n_internal
    }

    pub fn contains(&self, x1: i32, x2: i32) -> bool {
        x1 >= self.x1_min && x1 <= self.x1_max && x2 >= self.x2_min && x2 <= self.x2_max
    }

    /// Flat row/column index of `(x1, x2, s)`.
    pub fn site_index(&self, x1: i32, x2: i32, s: usize) -> Result<usize> {
        if !self.contains(x1, x2) || s >= self.n_internal {
            return Err(Error::OutOfRange { x1, x2, s });
        }
        let row = (x2 - self.x2_min) as usize;
        let col = (x1 - self.x1_min) as usize;
        Ok((row * self.n_x1() + col) * self.n_internal + s)
    }

    /// Inverse of `site_index`.
    pub fn site_of(&self, flat: usize) -> (i32, i32, usize) {
        let s = flat % self.n_internal;
        let site = flat / self.n_internal;
        let col = site % self.n_x1();
        let row = site / self.n_x1();
        (
            self.x1_min + col as i32,
            self.x2_min + row as i32,
            s,
        )
    }

    /// Sites in flattening order.
    pub fn sites(&self) -> Vec<(i32, i32)> {
        let mut v = Vec::with_capacity(self.n_sites());
        for x2 in self.x2_min..=self.x2_max {
            for x1 in self.x1_min..=self.x1_max {
                v.push((x1, x2));
            }
        }
        v
    }

    /// Distance of a site from the nearest truncated lattice boundary.
    ///
    /// For a bulk patch all four sides are truncations of the infinite plane;
    /// for a half-space strip the x2 = 0 side is a physical edge and only the
    /// other three sides are truncations.
    pub fn boundary_distance(&self, x1: i32, x2: i32) -> i32 {
        let d1 = (x1 - self.x1_min).min(self.x1_max - x1);
        let d2_top = self.x2_max - x2;
        match self.kind {
            GeometryKind::Bulk => d1.min(d2_top).min(x2 - self.x2_min),
            GeometryKind::HalfSpace => d1.min(d2_top),
        }
    }
}

/// Bounded operator on the lattice Hilbert space, stored dense.
#[derive(Clone, Debug)]
pub struct LatticeOperator {
    pub geometry: LatticeGeometry,
    pub matrix: Array2<C64>,
    hermitian: bool,
}

impl LatticeOperator {
    pub fn new(geometry: LatticeGeometry, matrix: Array2<C64>) -> Result<Self> {
        let d = geometry.dim();
        if matrix.shape() != [d, d] {
            return Err(Error::GeometryMismatch(format!(
                "matrix is {:?}, geometry dimension is {}",
                matrix.shape(),
                d
            )));
        }
        let hermitian = hermiticity_residual(&matrix) <= HERMITICITY_TOL;
        Ok(LatticeOperator {
            geometry,
            matrix,
            hermitian,
        })
    }

    /// Like `new` but fails unless the matrix is hermitian within tolerance.
    pub fn new_hermitian(geometry: LatticeGeometry, matrix: Array2<C64>) -> Result<Self> {
        let op = Self::new(geometry, matrix)?;
        if !op.hermitian {
            return Err(Error::NotHermitian {
                residual: hermiticity_residual(&op.matrix),
            });
        }
        Ok(op)
    }

    pub fn zeros(geometry: LatticeGeometry) -> Self {
        let d = geometry.dim();
        LatticeOperator {
            geometry,
            matrix: Array2::zeros((d, d)),
            hermitian: true,
        }
    }

    pub fn identity(geometry: LatticeGeometry) -> Self {
        let d = geometry.dim();
        LatticeOperator {
            geometry,
            matrix: Array2::eye(d),
            hermitian: true,
        }
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim()
    }

    pub fn check_same_geometry(&self, other: &LatticeOperator) -> Result<()> {
        if self.geometry != other.geometry {
            return Err(Error::GeometryMismatch(
                "operators live on different geometries".into(),
            ));
        }
        Ok(())
    }

    pub fn adjoint(&self) -> LatticeOperator {
        LatticeOperator {
            geometry: self.geometry,
            matrix: adjoint(&self.matrix),
            hermitian: self.hermitian,
        }
    }

    pub fn mul(&self, other: &LatticeOperator) -> Result<LatticeOperator> {
        self.check_same_geometry(other)?;
        LatticeOperator::new(self.geometry, self.matrix.dot(&other.matrix))
    }

    pub fn add(&self, other: &LatticeOperator) -> Result<LatticeOperator> {
        self.check_same_geometry(other)?;
        LatticeOperator::new(self.geometry, &self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &LatticeOperator) -> Result<LatticeOperator> {
        self.check_same_geometry(other)?;
        LatticeOperator::new(self.geometry, &self.matrix - &other.matrix)
    }

    pub fn scale(&self, s: C64) -> LatticeOperator {
        LatticeOperator {
            geometry: self.geometry,
            matrix: self.matrix.mapv(|z| z * s),
            hermitian: self.hermitian && s.im == 0.0,
        }
    }

    /// Largest absolute matrix element.
    pub fn max_norm(&self) -> f64 {
        self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Operator 2-norm (largest singular value).
    pub fn norm_2(&self) -> Result<f64> {
        let gram = adjoint(&self.matrix).dot(&self.matrix);
        let evals = crate::spectral::eigvalsh(&gram)?;
        Ok(evals.iter().fold(0.0f64, |a, &l| a.max(l)).max(0.0).sqrt())
    }

    /// N x N internal block of matrix elements between two sites.
    pub fn block(&self, x: (i32, i32), y: (i32, i32)) -> Result<Array2<C64>> {
        let n = self.geometry.n_internal;
        let i = self.geometry.site_index(x.0, x.1, 0)?;
        let j = self.geometry.site_index(y.0, y.1, 0)?;
        Ok(self
            .matrix
            .slice(s![i..i + n, j..j + n])
            .to_owned())
    }

    /// Trace norm of the internal block between two sites.
    pub fn block_trace_norm(&self, x: (i32, i32), y: (i32, i32)) -> Result<f64> {
        let b = self.block(x, y)?;
        block_trace_norm(&b)
    }
}

pub fn hermiticity_residual(m: &Array2<C64>) -> f64 {
    let n = m.nrows();
    let mut r = 0.0f64;
    for i in 0..n {
        for j in i..n {
            r = r.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    r
}

pub fn adjoint(m: &Array2<C64>) -> Array2<C64> {
    m.t().mapv(|z| z.conj())
}

/// `(M + M^*) / 2`: removes roundoff-level hermiticity violations.
pub fn symmetrize(m: &Array2<C64>) -> Array2<C64> {
    let ma = adjoint(m);
    (m + &ma).mapv(|z| z * C64::new(0.5, 0.0))
}

/// Trace norm (sum of singular values) of a small dense block.
pub fn block_trace_norm(b: &Array2<C64>) -> Result<f64> {
    if b.iter().all(|z| z.norm() == 0.0) {
        return Ok(0.0);
    }
    let (_, sv, _) = b.svd(false, false)?;
    Ok(sv.sum())
}

/// Diagonal operator with entries `f(x_axis)` times the internal identity.
pub fn position_multiplier(
    geometry: LatticeGeometry,
    axis: u8,
    f: impl Fn(i32) -> C64,
) -> LatticeOperator {
    let d = geometry.dim();
    let mut m = Array2::<C64>::zeros((d, d));
    for i in 0..d {
        let (x1, x2, _) = geometry.site_of(i);
        let x = if axis == 1 { x1 } else { x2 };
        m[[i, i]] = f(x);
    }
    LatticeOperator::new(geometry, m).expect("diagonal dimensions match by construction")
}

/// Heaviside step projection `Lambda(X_axis)` with the convention
/// `Lambda(x) = 1` for `x >= 0`.
pub fn lambda(geometry: LatticeGeometry, axis: u8) -> LatticeOperator {
    position_multiplier(geometry, axis, |x| {
        if x >= 0 {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Position operator `X_axis`.
pub fn position(geometry: LatticeGeometry, axis: u8) -> LatticeOperator {
    position_multiplier(geometry, axis, |x| C64::new(x as f64, 0.0))
}

/// Flux-insertion unitary `U = exp(i arg((x1 + o1) + i (x2 + o2)))`.
pub fn flux_phase(geometry: LatticeGeometry) -> Result<LatticeOperator> {
    if geometry.kind != GeometryKind::Bulk {
        return Err(Error::InvalidGeometry(
            "flux insertion needs a bulk geometry".into(),
        ));
    }
    let (o1, o2) = geometry.origin_offset;
    let d = geometry.dim();
    let mut m = Array2::<C64>::zeros((d, d));
    for i in 0..d {
        let (x1, x2, _) = geometry.site_of(i);
        let z = C64::new(x1 as f64 + o1, x2 as f64 + o2);
        if z.norm() < 1e-9 {
            return Err(Error::Config(
                "flux branch point coincides with a lattice site".into(),
            ));
        }
        m[[i, i]] = C64::new(0.0, z.arg()).exp();
    }
    LatticeOperator::new(geometry, m)
}

/// Non-commutative derivative `d_j A = -i [Lambda(X_j), A]`.
pub fn nc_derivative(axis: u8, a: &LatticeOperator) -> LatticeOperator {
    let l = lambda(a.geometry, axis);
    let comm = l.matrix.dot(&a.matrix) - a.matrix.dot(&l.matrix);
    LatticeOperator::new(a.geometry, comm.mapv(|z| z * C64::new(0.0, -1.0)))
        .expect("same geometry by construction")
}

/// What to put on the complement of the half-space when embedding.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ComplementFill {
    Zero,
    Identity,
}

/// Embed a half-space operator into a bulk geometry: `iota A iota^*`, plus an
/// optional identity filler on the complement (rows with x2 < 0).
pub fn embed_half_space(
    a_hat: &LatticeOperator,
    bulk: LatticeGeometry,
    fill: ComplementFill,
) -> Result<LatticeOperator> {
    let strip = a_hat.geometry;
    if strip.kind != GeometryKind::HalfSpace {
        return Err(Error::GeometryMismatch("source must be a half-space".into()));
    }
    if bulk.x1_min != strip.x1_min
        || bulk.x1_max != strip.x1_max
        || bulk.n_internal != strip.n_internal
        || bulk.x2_max < strip.x2_max
        || bulk.x2_min > 0
    {
        return Err(Error::GeometryMismatch(
            "bulk geometry must share x1 range and cover the strip rows".into(),
        ));
    }
    let d = bulk.dim();
    let mut m = Array2::<C64>::zeros((d, d));
    if fill == ComplementFill::Identity {
        for i in 0..d {
            let (x1, x2, _) = bulk.site_of(i);
            if x2 < 0 || x2 > strip.x2_max || !strip.contains(x1, x2) {
                m[[i, i]] = C64::new(1.0, 0.0);
            }
        }
    }
    let n = strip.n_internal;
    for (xa, ya) in strip.sites().iter().flat_map(|&x| {
        strip.sites().into_iter().map(move |y| (x, y))
    }) {
        let bi = bulk.site_index(xa.0, xa.1, 0)?;
        let bj = bulk.site_index(ya.0, ya.1, 0)?;
        let si = strip.site_index(xa.0, xa.1, 0)?;
        let sj = strip.site_index(ya.0, ya.1, 0)?;
        for s in 0..n {
            for t in 0..n {
                m[[bi + s, bj + t]] = a_hat.matrix[[si + s, sj + t]];
            }
        }
    }
    LatticeOperator::new(bulk, m)
}

/// Truncate a bulk operator to the half-space rows `x2 in [0, x2_max]`:
/// `iota^* A iota`.
pub fn restrict_half_space(a: &LatticeOperator) -> Result<LatticeOperator> {
    let bulk = a.geometry;
    if bulk.x2_max < 0 {
        return Err(Error::GeometryMismatch(
            "bulk geometry has no rows with x2 >= 0".into(),
        ));
    }
    let strip = LatticeGeometry::new(
        GeometryKind::HalfSpace,
        (bulk.x1_min, bulk.x1_max),
        (0, bulk.x2_max),
        bulk.n_internal,
    )?;
    let d = strip.dim();
    let mut m = Array2::<C64>::zeros((d, d));
    let n = strip.n_internal;
    for x in strip.sites() {
        for y in strip.sites() {
            let bi = bulk.site_index(x.0, x.1, 0)?;
            let bj = bulk.site_index(y.0, y.1, 0)?;
            let si = strip.site_index(x.0, x.1, 0)?;
            let sj = strip.site_index(y.0, y.1, 0)?;
            for s in 0..n {
                for t in 0..n {
                    m[[si + s, sj + t]] = a.matrix[[bi + s, bj + t]];
                }
            }
        }
    }
    LatticeOperator::new(strip, m)
}

// ---------------------------------------------------------------------------
// Locality fits
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayModel {
    Exponential,
    Polynomial,
    Loc2Exponential,
    Loc2Polynomial,
}

/// Coordinate used for the confinement factor of LOC fits.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Confinement {
    /// `|x_axis|` of the row site (distance from the step line).
    Axis(u8),
    /// `|x1| + |x2|` of the row site (confined in both directions).
    BothAxes,
    /// Distance of the row site from the nearest of the two strip edges.
    NearestEdge,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LocalityFit {
    pub model: DecayModel,
    /// Decay rate mu (exponential) or power alpha (polynomial); positive.
    pub rate: f64,
    pub prefactor: f64,
    /// Worst log-scale deviation of the binned envelope from the fit line.
    pub max_residual: f64,
    pub confinement_direction: Option<Confinement>,
}

impl LocalityFit {
    /// Default pass criterion used by monitors: positive rate and the binned
    /// envelope within one log unit of the fit line.
    pub fn passes(&self) -> bool {
        self.rate > 0.0 && self.max_residual <= 1.0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecayFitOptions {
    /// Sites closer than this to a truncated boundary are excluded.
    pub boundary_margin: i32,
    pub confinement: Option<Confinement>,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        DecayFitOptions {
            boundary_margin: 2,
            confinement: None,
        }
    }
}

/// Least-squares fit of the block-norm decay of `a` against the model.
///
/// The binned envelope (maximum block trace norm per rounded predictor value)
/// is fitted in log scale; truncated-boundary sites are excluded.
pub fn decay_fit(
    a: &LatticeOperator,
    model: DecayModel,
    opts: DecayFitOptions,
) -> Result<LocalityFit> {
    let g = a.geometry;
    let conf = match model {
        DecayModel::Exponential | DecayModel::Polynomial => None,
        DecayModel::Loc2Exponential | DecayModel::Loc2Polynomial => {
            Some(opts.confinement.unwrap_or(Confinement::Axis(2)))
        }
    };
    let interior: Vec<(i32, i32)> = g
        .sites()
        .into_iter()
        .filter(|&(x1, x2)| g.boundary_distance(x1, x2) >= opts.boundary_margin)
        .collect();
    if interior.len() < 2 {
        return Err(Error::FitFailed(
            "geometry too small for the boundary margin".into(),
        ));
    }

    let conf_coord = |x: (i32, i32)| -> f64 {
        match conf {
            None => 0.0,
            Some(Confinement::Axis(j)) => {
                if j == 1 {
                    x.0.abs() as f64
                } else {
                    x.1.abs() as f64
                }
            }
            Some(Confinement::BothAxes) => (x.0.abs() + x.1.abs()) as f64,
            Some(Confinement::NearestEdge) => {
                (x.1 - g.x2_min).min(g.x2_max - x.1) as f64
            }
        }
    };

    // Envelope: max block norm per binned predictor value.
    let mut bins: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
    let mut any_above_floor = false;
    for &x in &interior {
        for &y in &interior {
            let v = a.block_trace_norm(x, y)?;
            if v > BLOCK_FLOOR {
                any_above_floor = true;
            }
            let r = (((x.0 - y.0).pow(2) + (x.1 - y.1).pow(2)) as f64).sqrt();
            let d = match model {
                DecayModel::Exponential => r,
                DecayModel::Polynomial => (1.0 + r).ln(),
                DecayModel::Loc2Exponential => r + conf_coord(x),
                DecayModel::Loc2Polynomial => ((1.0 + r) * (1.0 + conf_coord(x))).ln(),
            };
            let key = (d * 2.0).round() as i64;
            let e = bins.entry(key).or_insert(0.0);
            if v > *e {
                *e = v;
            }
        }
    }
    if !any_above_floor {
        return Err(Error::NumericallyZero { floor: BLOCK_FLOOR });
    }

    let pts: Vec<(f64, f64)> = bins
        .iter()
        .filter(|(_, &v)| v > 10.0 * BLOCK_FLOOR)
        .map(|(&k, &v)| (k as f64 / 2.0, v.ln()))
        .collect();
    if pts.len() < 2 {
        // Purely diagonal data: decay is perfect beyond the support.
        return Ok(LocalityFit {
            model,
            rate: f64::INFINITY,
            prefactor: bins.values().cloned().fold(0.0, f64::max),
            max_residual: 0.0,
            confinement_direction: conf,
        });
    }

    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-12 {
        return Err(Error::FitFailed("degenerate predictor values".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let rate = -slope;
    if !(rate > 0.0) {
        return Err(Error::FitFailed(format!(
            "fitted rate {rate:.3e} not positive; no decay detected"
        )));
    }
    let max_residual = pts
        .iter()
        .map(|&(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    Ok(LocalityFit {
        model,
        rate,
        prefactor: intercept.exp(),
        max_residual,
        confinement_direction: conf,
    })
}

// ---------------------------------------------------------------------------
// Operator dump format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct OperatorDump {
    format: String,
    geometry: LatticeGeometry,
    hermitian: bool,
    /// Row-major matrix entries as (re, im) pairs, ordered by `site_index`.
    matrix: Vec<(f64, f64)>,
}

impl LatticeOperator {
    /// Self-describing JSON container; ordering fixed by `site_index`.
    pub fn to_json(&self) -> Result<String> {
        let dump = OperatorDump {
            format: "bulkedge-operator-v1".into(),
            geometry: self.geometry,
            hermitian: self.hermitian,
            matrix: self.matrix.iter().map(|z| (z.re, z.im)).collect(),
        };
        Ok(serde_json::to_string(&dump)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let dump: OperatorDump = serde_json::from_str(s)?;
        if dump.format != "bulkedge-operator-v1" {
            return Err(Error::Serde(format!("unknown dump format {}", dump.format)));
        }
        let d = dump.geometry.dim();
        if dump.matrix.len() != d * d {
            return Err(Error::Serde("matrix length does not match geometry".into()));
        }
        let flat: Vec<C64> = dump.matrix.iter().map(|&(re, im)| C64::new(re, im)).collect();
        let matrix = Array2::from_shape_vec((d, d), flat)
            .map_err(|e| Error::Serde(e.to_string()))?;
        LatticeOperator::new(dump.geometry, matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub(crate) fn random_operator(g: LatticeGeometry, seed: u64) -> LatticeOperator {
        let mut r = rng(seed);
        let d = g.dim();
        let m = Array2::from_shape_fn((d, d), |_| {
            C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
        });
        LatticeOperator::new(g, m).unwrap()
    }

    pub(crate) fn random_hermitian(g: LatticeGeometry, seed: u64) -> LatticeOperator {
        let a = random_operator(g, seed);
        let h = (&a.matrix + &adjoint(&a.matrix)).mapv(|z| z * C64::new(0.5, 0.0));
        LatticeOperator::new_hermitian(g, h).unwrap()
    }

    #[test]
    fn site_index_follows_declared_ordering() {
        // [-2, 1]^2 with N = 1: first site by ordering, then x1 advances.
        let g = LatticeGeometry::new(GeometryKind::Bulk, (-2, 1), (-2, 1), 1).unwrap();
        assert_eq!(g.site_index(-2, -2, 0).unwrap(), 0);
        assert_eq!(g.site_index(-1, -2, 0).unwrap(), 1);
        let g2 = LatticeGeometry::new(GeometryKind::Bulk, (-2, 1), (-2, 1), 2).unwrap();
        assert_eq!(g2.site_index(-2, -2, 1).unwrap(), 1);
        // Round trip over the whole patch.
        for flat in 0..g2.dim() {
            let (x1, x2, s) = g2.site_of(flat);
            assert_eq!(g2.site_index(x1, x2, s).unwrap(), flat);
        }
        assert!(g2.site_index(2, 0, 0).is_err());
    }

    #[test]
    fn heaviside_convention_and_projection() {
        let g = LatticeGeometry::bulk_square(6, 1).unwrap();
        let l1 = lambda(g, 1);
        let at = |x1: i32, x2: i32| {
            let i = g.site_index(x1, x2, 0).unwrap();
            l1.matrix[[i, i]].re
        };
        assert_eq!(at(2, 0), 1.0);
        assert_eq!(at(-1, 0), 0.0);
        assert_eq!(at(0, -2), 1.0);
        // Lambda^2 = Lambda exactly.
        let sq = l1.mul(&l1).unwrap();
        assert_eq!(sq.matrix, l1.matrix);
        // X as a position multiplier.
        let x1 = position(g, 1);
        let i = g.site_index(-2, 1, 0).unwrap();
        assert_eq!(x1.matrix[[i, i]], C64::new(-2.0, 0.0));
    }

    #[test]
    fn flux_phase_values_and_unitarity() {
        let g = LatticeGeometry::bulk_square(6, 1).unwrap();
        let u = flux_phase(g).unwrap();
        let at = |x1: i32, x2: i32| {
            let i = g.site_index(x1, x2, 0).unwrap();
            u.matrix[[i, i]]
        };
        let pi = std::f64::consts::PI;
        assert_abs_diff_eq!(at(0, 0).arg(), pi / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(at(-1, -1).arg(), -3.0 * pi / 4.0, epsilon = 1e-14);
        let prod = u.mul(&u.adjoint()).unwrap();
        let id = LatticeOperator::identity(g);
        assert!(prod.sub(&id).unwrap().max_norm() < 1e-14);
        // Commutes with any diagonal operator.
        let d = position_multiplier(g, 2, |x| C64::new((x * x) as f64, 0.3));
        let c = u.mul(&d).unwrap().sub(&d.mul(&u).unwrap()).unwrap();
        assert_eq!(c.max_norm(), 0.0);
    }

    #[test]
    fn branch_point_on_site_rejected() {
        let g = LatticeGeometry::bulk_square(6, 1).unwrap();
        assert!(g.with_origin_offset((0.0, 0.5)).is_err());
    }

    #[test]
    fn nc_derivative_basics() {
        let g = LatticeGeometry::bulk_square(6, 1).unwrap();
        // Diagonal operators commute with the step.
        let d = position_multiplier(g, 1, |x| C64::new(x as f64, 0.0));
        assert_eq!(nc_derivative(1, &d).max_norm(), 0.0);
        // Single hopping |(0,y)><(-1,y)|: d1 A = -i A.
        let mut m = Array2::<C64>::zeros((g.dim(), g.dim()));
        let i = g.site_index(0, 1, 0).unwrap();
        let j = g.site_index(-1, 1, 0).unwrap();
        m[[i, j]] = C64::new(1.0, 0.0);
        let a = LatticeOperator::new(g, m).unwrap();
        let da = nc_derivative(1, &a);
        let expect = a.scale(C64::new(0.0, -1.0));
        assert!(da.sub(&expect).unwrap().max_norm() < 1e-15);
    }

    #[test]
    fn nc_derivative_is_a_derivation_and_respects_adjoints() {
        let g = LatticeGeometry::bulk_square(5, 2).unwrap();
        let a = random_operator(g, 7);
        let b = random_operator(g, 8);
        let lhs = nc_derivative(1, &a.mul(&b).unwrap());
        let rhs = nc_derivative(1, &a)
            .mul(&b)
            .unwrap()
            .add(&a.mul(&nc_derivative(1, &b)).unwrap())
            .unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_norm() < 1e-12);
        // (d_j A)^* = d_j (A^*)
        let lhs2 = nc_derivative(2, &a).adjoint();
        let rhs2 = nc_derivative(2, &a.adjoint());
        assert!(lhs2.sub(&rhs2).unwrap().max_norm() < 1e-12);
    }

    #[test]
    fn injection_truncation_relations() {
        let bulk = LatticeGeometry::bulk_square(6, 2).unwrap();
        let strip = LatticeGeometry::strip(6, 3, 2).unwrap();
        let a_hat = random_operator(strip, 3);
        // restrict(embed(A)) = A exactly
        let embedded = embed_half_space(&a_hat, bulk, ComplementFill::Zero).unwrap();
        let back = restrict_half_space(&embedded).unwrap();
        assert_eq!(back.matrix, a_hat.matrix);
        // embed(identity) = Lambda_2 (on the rows the strip covers)
        let id = LatticeOperator::identity(strip);
        let emb_id = embed_half_space(&id, bulk, ComplementFill::Zero).unwrap();
        let l2 = lambda(bulk, 2);
        // bulk covers x2 in [-3, 2], strip rows [0, 2]; they agree here.
        assert!(emb_id.sub(&l2).unwrap().max_norm() < 1e-15);
        // rows with x2 < 0 vanish
        for i in 0..bulk.dim() {
            let (_, x2, _) = bulk.site_of(i);
            if x2 < 0 {
                assert!(embedded.matrix.row(i).iter().all(|z| z.norm() == 0.0));
                assert!(embedded.matrix.column(i).iter().all(|z| z.norm() == 0.0));
            }
        }
    }

    #[test]
    fn decay_fit_finite_range_and_zero() {
        let g = LatticeGeometry::bulk_square(10, 1).unwrap();
        // Exponentially decaying toy kernel.
        let mut m = Array2::<C64>::zeros((g.dim(), g.dim()));
        for (i, &x) in g.sites().iter().enumerate() {
            for (j, &y) in g.sites().iter().enumerate() {
                let r = (((x.0 - y.0).pow(2) + (x.1 - y.1).pow(2)) as f64).sqrt();
                m[[i, j]] = C64::new(0.7 * (-0.9 * r).exp(), 0.0);
            }
        }
        let a = LatticeOperator::new(g, m).unwrap();
        let fit = decay_fit(&a, DecayModel::Exponential, DecayFitOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.rate, 0.9, epsilon = 1e-6);
        assert!(fit.max_residual < 1e-8);
        assert!(fit.passes());

        let z = LatticeOperator::zeros(g);
        assert!(matches!(
            decay_fit(&z, DecayModel::Exponential, DecayFitOptions::default()),
            Err(Error::NumericallyZero { .. })
        ));
    }

    #[test]
    fn operator_dump_round_trip() {
        let g = LatticeGeometry::bulk_square(4, 2).unwrap();
        let a = random_hermitian(g, 11);
        let s = a.to_json().unwrap();
        let b = LatticeOperator::from_json(&s).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.geometry, b.geometry);
        assert_eq!(a.is_hermitian(), b.is_hermitian());
    }
}
