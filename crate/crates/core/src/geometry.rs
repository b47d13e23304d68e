//! Velocity and position constraint sets.
//!
//! Position sets are closed convex regions with an exact nearest-point
//! projection. Velocity sets are finite unions of bounded convex pieces; they
//! may be nonconvex, and the only operator applied to them is the radial
//! shrink that keeps the whole segment from the origin inside the set.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

pub type Vector = DVector<f64>;

/// Inclusion tolerance applied to every primitive's defining inequalities.
pub const TOL_MEM: f64 = 1e-12;
/// Two ray intervals closer than this are treated as touching.
pub const TOL_TOUCH: f64 = 1e-12;
pub const TOL_PROJ: f64 = 1e-10;
pub const MAX_PROJ_SWEEPS: usize = 10_000;
const TOL_UNIT: f64 = 1e-9;
const TOL_NORMAL: f64 = 1e-12;

fn check_finite(x: &Vector) -> Result<(), GeometryError> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::InvalidPoint(format!(
            "non-finite component in {:?}",
            x.as_slice()
        )))
    }
}

fn check_dim(expected: usize, x: &Vector) -> Result<(), GeometryError> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(GeometryError::DimensionMismatch {
            expected,
            got: x.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    center: Vector,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vector, radius: f64) -> Result<Self, GeometryError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidRegion(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        if center.is_empty() {
            return Err(GeometryError::InvalidRegion("ball has dimension 0".into()));
        }
        check_finite(&center)?;
        Ok(Self { center, radius })
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisBox {
    lower: Vector,
    upper: Vector,
}

impl AxisBox {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self, GeometryError> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(GeometryError::InvalidRegion(format!(
                "box bounds have dimensions {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        check_finite(&lower)?;
        check_finite(&upper)?;
        if let Some(k) = (0..lower.len()).find(|&k| lower[k] > upper[k]) {
            return Err(GeometryError::InvalidRegion(format!(
                "box lower bound exceeds upper bound in coordinate {k}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }
}

/// `{x : normal_i . x <= offset_i for all i}`, with a point known to satisfy
/// every constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    normals: Vec<Vector>,
    offsets: Vec<f64>,
    witness: Vector,
}

impl Polyhedron {
    pub fn new(
        normals: Vec<Vector>,
        offsets: Vec<f64>,
        witness: Vector,
    ) -> Result<Self, GeometryError> {
        let m = witness.len();
        if m == 0 {
            return Err(GeometryError::InvalidRegion(
                "halfspace witness has dimension 0".into(),
            ));
        }
        if normals.len() != offsets.len() {
            return Err(GeometryError::InvalidRegion(format!(
                "{} normals but {} offsets",
                normals.len(),
                offsets.len()
            )));
        }
        check_finite(&witness)?;
        for (i, (n, o)) in normals.iter().zip(&offsets).enumerate() {
            check_dim(m, n)?;
            check_finite(n)?;
            if !o.is_finite() {
                return Err(GeometryError::InvalidRegion(format!(
                    "offset {i} is not finite"
                )));
            }
            if (n.norm() - 1.0).abs() > TOL_NORMAL {
                return Err(GeometryError::InvalidRegion(format!(
                    "normal {i} has norm {}, expected 1",
                    n.norm()
                )));
            }
            if n.dot(&witness) > o + TOL_MEM {
                return Err(GeometryError::InvalidRegion(format!(
                    "witness violates halfspace {i}; region may be empty"
                )));
            }
        }
        Ok(Self {
            normals,
            offsets,
            witness,
        })
    }

    pub fn normals(&self) -> &[Vector] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn witness(&self) -> &Vector {
        &self.witness
    }

    fn contains(&self, x: &Vector, tol: f64) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, o)| n.dot(x) <= o + tol)
    }

    /// True iff the recession cone `{d : N d <= 0}` is trivial.
    pub fn is_bounded(&self) -> bool {
        let m = self.witness.len();
        if self.normals.is_empty() {
            return false;
        }
        let stacked = DMatrix::from_fn(self.normals.len(), m, |i, j| self.normals[i][j]);
        if stacked.clone().rank(1e-10) < m {
            return false;
        }
        // A pointed nontrivial cone has an extreme ray lying on m-1
        // linearly independent active constraints.
        let candidates: Vec<Vector> = if m == 1 {
            vec![Vector::from_element(1, 1.0)]
        } else {
            (0..self.normals.len())
                .combinations(m - 1)
                .filter_map(|rows| null_direction(&self.normals, &rows, m))
                .collect()
        };
        !candidates.iter().any(|d| {
            [1.0, -1.0].iter().any(|s| {
                let dir = d * *s;
                self.normals.iter().all(|n| n.dot(&dir) <= 1e-12)
            })
        })
    }

    /// Largest norm over the vertices. Only meaningful when bounded.
    fn vertex_radius(&self) -> f64 {
        let m = self.witness.len();
        let mut best = self.witness.norm();
        for rows in (0..self.normals.len()).combinations(m) {
            let a = DMatrix::from_fn(m, m, |i, j| self.normals[rows[i]][j]);
            let b = Vector::from_iterator(m, rows.iter().map(|&r| self.offsets[r]));
            if let Some(v) = a.lu().solve(&b) {
                if v.iter().all(|c| c.is_finite()) && self.contains(&v, 1e-9) {
                    best = best.max(v.norm());
                }
            }
        }
        best
    }

    fn project(&self, y: &Vector) -> Vector {
        if self.contains(y, 0.0) {
            return y.clone();
        }
        // Dykstra's alternating projections: converges to the nearest point,
        // not merely to some feasible point.
        let k = self.normals.len();
        let mut x = y.clone();
        let mut increments = vec![Vector::zeros(y.len()); k];
        for _ in 0..MAX_PROJ_SWEEPS {
            let mut moved = 0.0;
            for ((normal, offset), inc) in
                self.normals.iter().zip(&self.offsets).zip(&mut increments)
            {
                let shifted = &x + &*inc;
                let excess = normal.dot(&shifted) - offset;
                let next = if excess > 0.0 {
                    &shifted - normal * excess
                } else {
                    shifted.clone()
                };
                *inc = shifted - &next;
                moved += (&next - &x).norm_squared();
                x = next;
            }
            if moved.sqrt() < TOL_PROJ {
                break;
            }
        }
        x
    }
}

/// Generalized cross product of the selected normals: a vector orthogonal to
/// all of them, or `None` when they are linearly dependent.
fn null_direction(normals: &[Vector], rows: &[usize], m: usize) -> Option<Vector> {
    let minor = DMatrix::from_fn(rows.len(), m, |i, j| normals[rows[i]][j]);
    let d = Vector::from_iterator(
        m,
        (0..m).map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.clone().remove_column(j).determinant()
        }),
    );
    let norm = d.norm();
    (norm > 1e-10).then(|| d / norm)
}

/// A closed convex set with a nearest-point projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRepr", into = "RegionRepr")]
pub enum ConvexRegion {
    Ball(Ball),
    Box(AxisBox),
    Halfspaces(Polyhedron),
    WholeSpace,
}

impl ConvexRegion {
    pub fn ball(center: Vector, radius: f64) -> Result<Self, GeometryError> {
        Ball::new(center, radius).map(ConvexRegion::Ball)
    }

    pub fn axis_box(lower: Vector, upper: Vector) -> Result<Self, GeometryError> {
        AxisBox::new(lower, upper).map(ConvexRegion::Box)
    }

    pub fn halfspaces(
        normals: Vec<Vector>,
        offsets: Vec<f64>,
        witness: Vector,
    ) -> Result<Self, GeometryError> {
        Polyhedron::new(normals, offsets, witness).map(ConvexRegion::Halfspaces)
    }

    /// Ambient dimension, or `None` for the whole space.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ConvexRegion::Ball(b) => Some(b.center.len()),
            ConvexRegion::Box(b) => Some(b.lower.len()),
            ConvexRegion::Halfspaces(h) => Some(h.witness.len()),
            ConvexRegion::WholeSpace => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            ConvexRegion::Ball(_) | ConvexRegion::Box(_) => true,
            ConvexRegion::Halfspaces(h) => h.is_bounded(),
            ConvexRegion::WholeSpace => false,
        }
    }

    /// Membership with the given slack on each defining inequality.
    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            ConvexRegion::Ball(b) => (x - &b.center).norm() <= b.radius + tol,
            ConvexRegion::Box(b) => x
                .iter()
                .zip(b.lower.iter().zip(b.upper.iter()))
                .all(|(c, (l, u))| *c >= l - tol && *c <= u + tol),
            ConvexRegion::Halfspaces(h) => h.contains(x, tol),
            ConvexRegion::WholeSpace => true,
        }
    }

    /// Nearest point of the region to `x`.
    pub fn project(&self, x: &Vector) -> Result<Vector, GeometryError> {
        check_finite(x)?;
        if let Some(m) = self.dim() {
            check_dim(m, x)?;
        }
        Ok(match self {
            ConvexRegion::Ball(b) => {
                let offset = x - &b.center;
                let dist = offset.norm();
                if dist <= b.radius {
                    x.clone()
                } else {
                    &b.center + offset * (b.radius / dist)
                }
            }
            ConvexRegion::Box(b) => Vector::from_iterator(
                x.len(),
                x.iter()
                    .zip(b.lower.iter().zip(b.upper.iter()))
                    .map(|(c, (l, u))| c.clamp(*l, *u)),
            ),
            ConvexRegion::Halfspaces(h) => h.project(x),
            ConvexRegion::WholeSpace => x.clone(),
        })
    }

    /// The region shrunk inward by `delta`: every point of the result has a
    /// `delta`-ball around it inside `self`. `None` when nothing is left.
    pub fn eroded(&self, delta: f64) -> Option<ConvexRegion> {
        match self {
            ConvexRegion::Ball(b) => (b.radius > delta).then(|| {
                ConvexRegion::Ball(Ball {
                    center: b.center.clone(),
                    radius: b.radius - delta,
                })
            }),
            ConvexRegion::Box(b) => {
                let lower = b.lower.add_scalar(delta);
                let upper = b.upper.add_scalar(-delta);
                lower
                    .iter()
                    .zip(upper.iter())
                    .all(|(l, u)| l <= u)
                    .then_some(ConvexRegion::Box(AxisBox { lower, upper }))
            }
            // The witness is not carried over; it may not survive erosion.
            ConvexRegion::Halfspaces(h) => Some(ConvexRegion::Halfspaces(Polyhedron {
                normals: h.normals.clone(),
                offsets: h.offsets.iter().map(|o| o - delta).collect(),
                witness: h.witness.clone(),
            })),
            ConvexRegion::WholeSpace => Some(ConvexRegion::WholeSpace),
        }
    }

    /// Upper bound on the norm of any point in a bounded region.
    fn radius_bound(&self) -> Option<f64> {
        match self {
            ConvexRegion::Ball(b) => Some(b.center.norm() + b.radius),
            ConvexRegion::Box(b) => Some(
                b.lower
                    .iter()
                    .zip(b.upper.iter())
                    .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
            ConvexRegion::Halfspaces(h) if h.is_bounded() => Some(h.vertex_radius()),
            _ => None,
        }
    }

    /// `{t >= 0 : t d in region}` in closed form, for the primitives that
    /// admit one. `Err(())` marks pieces that need the sampled fallback.
    fn analytic_ray_interval(&self, d: &Vector) -> Result<Option<(f64, f64)>, ()> {
        match self {
            ConvexRegion::Ball(b) => {
                let along = d.dot(&b.center);
                let disc = along * along - (b.center.norm_squared() - b.radius * b.radius);
                if disc < 0.0 {
                    return Ok(None);
                }
                let root = disc.sqrt();
                let (lo, hi) = ((along - root).max(0.0), along + root);
                Ok((hi >= 0.0 && lo <= hi).then_some((lo, hi)))
            }
            ConvexRegion::Box(b) => {
                let mut lo = 0.0_f64;
                let mut hi = f64::INFINITY;
                for k in 0..d.len() {
                    let (l, u, dk) = (b.lower[k], b.upper[k], d[k]);
                    if dk == 0.0 {
                        if l > TOL_MEM || u < -TOL_MEM {
                            return Ok(None);
                        }
                    } else {
                        let (a, c) = (l / dk, u / dk);
                        lo = lo.max(a.min(c));
                        hi = hi.min(a.max(c));
                    }
                }
                Ok((lo <= hi + TOL_TOUCH).then_some((lo, hi.max(lo))))
            }
            ConvexRegion::Halfspaces(_) | ConvexRegion::WholeSpace => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum RegionRepr {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Halfspaces {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
        witness: Vec<f64>,
    },
    WholeSpace,
}

impl TryFrom<RegionRepr> for ConvexRegion {
    type Error = GeometryError;

    fn try_from(r: RegionRepr) -> Result<Self, Self::Error> {
        match r {
            RegionRepr::Ball { center, radius } => {
                ConvexRegion::ball(Vector::from_vec(center), radius)
            }
            RegionRepr::Box { lower, upper } => {
                ConvexRegion::axis_box(Vector::from_vec(lower), Vector::from_vec(upper))
            }
            RegionRepr::Halfspaces {
                normals,
                offsets,
                witness,
            } => ConvexRegion::halfspaces(
                normals.into_iter().map(Vector::from_vec).collect(),
                offsets,
                Vector::from_vec(witness),
            ),
            RegionRepr::WholeSpace => Ok(ConvexRegion::WholeSpace),
        }
    }
}

impl From<ConvexRegion> for RegionRepr {
    fn from(r: ConvexRegion) -> Self {
        match r {
            ConvexRegion::Ball(b) => RegionRepr::Ball {
                center: b.center.as_slice().to_vec(),
                radius: b.radius,
            },
            ConvexRegion::Box(b) => RegionRepr::Box {
                lower: b.lower.as_slice().to_vec(),
                upper: b.upper.as_slice().to_vec(),
            },
            ConvexRegion::Halfspaces(h) => RegionRepr::Halfspaces {
                normals: h.normals.iter().map(|n| n.as_slice().to_vec()).collect(),
                offsets: h.offsets,
                witness: h.witness.as_slice().to_vec(),
            },
            ConvexRegion::WholeSpace => RegionRepr::WholeSpace,
        }
    }
}

/// Sampling parameters for the bisection search on segment containment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSearch {
    pub n_alpha: usize,
    pub tol_beta: f64,
}

impl Default for SegmentSearch {
    fn default() -> Self {
        Self {
            n_alpha: 256,
            tol_beta: 1e-9,
        }
    }
}

/// Velocity constraint set: a union of bounded convex pieces that contains
/// the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VelocitySetRepr", into = "VelocitySetRepr")]
pub struct VelocitySet {
    pieces: Vec<ConvexRegion>,
    bounding_radius: f64,
    declared_radius: Option<f64>,
    search: SegmentSearch,
}

/// Sampled estimates of the two radii that bound the shrink operator:
/// the largest achievable shrink norm and the smallest shrink norm of a
/// point outside the set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub rho_max: f64,
    pub rho_min: f64,
    pub n_dirs: usize,
    /// Always true: both values come from a finite direction sample.
    pub sampled: bool,
    pub valid: bool,
}

impl VelocitySet {
    pub fn new(
        pieces: Vec<ConvexRegion>,
        bounding_radius: Option<f64>,
    ) -> Result<Self, GeometryError> {
        let first = pieces
            .first()
            .ok_or_else(|| GeometryError::InvalidVelocitySet("no pieces".into()))?;
        let m = first
            .dim()
            .ok_or_else(|| GeometryError::InvalidVelocitySet("pieces must be bounded".into()))?;
        let mut bound = 0.0_f64;
        for (i, piece) in pieces.iter().enumerate() {
            if piece.dim() != Some(m) {
                return Err(GeometryError::InvalidVelocitySet(format!(
                    "piece {i} has dimension {:?}, expected {m}",
                    piece.dim()
                )));
            }
            let r = piece.radius_bound().ok_or_else(|| {
                GeometryError::InvalidVelocitySet(format!("piece {i} is unbounded"))
            })?;
            bound = bound.max(r);
        }
        let origin = Vector::zeros(m);
        if !pieces.iter().any(|p| p.contains(&origin, TOL_MEM)) {
            return Err(GeometryError::InvalidVelocitySet(
                "the origin must belong to some piece".into(),
            ));
        }
        if let Some(r) = bounding_radius {
            if !(r.is_finite() && r > 0.0) {
                return Err(GeometryError::InvalidVelocitySet(format!(
                    "bounding radius must be positive, got {r}"
                )));
            }
            if r + 1e-9 < bound {
                return Err(GeometryError::InvalidVelocitySet(format!(
                    "bounding radius {r} does not enclose the set (needs {bound})"
                )));
            }
        }
        Ok(Self {
            pieces,
            bounding_radius: bounding_radius.unwrap_or(bound).max(f64::MIN_POSITIVE),
            declared_radius: bounding_radius,
            search: SegmentSearch::default(),
        })
    }

    pub fn with_search(mut self, search: SegmentSearch) -> Result<Self, GeometryError> {
        if search.n_alpha < 2 || !(search.tol_beta > 0.0) {
            return Err(GeometryError::InvalidVelocitySet(format!(
                "segment search needs n_alpha >= 2 and tol_beta > 0, got {search:?}"
            )));
        }
        self.search = search;
        Ok(self)
    }

    pub fn pieces(&self) -> &[ConvexRegion] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.pieces[0].dim().unwrap_or(0)
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    pub fn search(&self) -> SegmentSearch {
        self.search
    }

    pub fn membership(&self, x: &Vector) -> Result<bool, GeometryError> {
        check_finite(x)?;
        check_dim(self.dim(), x)?;
        Ok(self.contains(x))
    }

    fn contains(&self, x: &Vector) -> bool {
        self.pieces.iter().any(|p| p.contains(x, TOL_MEM))
    }

    fn check_direction(&self, direction: &Vector) -> Result<(), GeometryError> {
        check_finite(direction)?;
        check_dim(self.dim(), direction)?;
        let norm = direction.norm();
        if (norm - 1.0).abs() > TOL_UNIT {
            return Err(GeometryError::NotUnit(norm));
        }
        Ok(())
    }

    /// Largest `beta <= bounding_radius` such that the whole segment
    /// `[0, beta * direction]` lies in the set.
    pub fn max_segment_beta(&self, direction: &Vector) -> Result<f64, GeometryError> {
        self.check_direction(direction)?;
        Ok(self.segment_beta(direction))
    }

    /// Sampled bisection for the same quantity as [`Self::max_segment_beta`].
    /// Used for pieces without a closed-form ray intersection.
    pub fn max_segment_beta_bisection(&self, direction: &Vector) -> Result<f64, GeometryError> {
        self.check_direction(direction)?;
        Ok(self.bisect_beta(direction))
    }

    fn segment_beta(&self, d: &Vector) -> f64 {
        let mut intervals = Vec::with_capacity(self.pieces.len());
        for piece in &self.pieces {
            match piece.analytic_ray_interval(d) {
                Ok(Some(iv)) => intervals.push(iv),
                Ok(None) => {}
                Err(()) => return self.bisect_beta(d),
            }
        }
        merge_from_origin(intervals).min(self.bounding_radius)
    }

    fn segment_fits(&self, d: &Vector, beta: f64) -> bool {
        let last = (self.search.n_alpha - 1) as f64;
        (0..self.search.n_alpha).all(|j| self.contains(&(d * (beta * j as f64 / last))))
    }

    fn bisect_beta(&self, d: &Vector) -> f64 {
        let (mut lo, mut hi) = (0.0, self.bounding_radius);
        if self.segment_fits(d, hi) {
            return hi;
        }
        while hi - lo > self.search.tol_beta {
            let mid = 0.5 * (lo + hi);
            if self.segment_fits(d, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// The radial shrink: the longest vector along `x`, no longer than `x`,
    /// whose segment from the origin stays in the set.
    pub fn shrink(&self, x: &Vector) -> Result<Vector, GeometryError> {
        check_finite(x)?;
        check_dim(self.dim(), x)?;
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(Vector::zeros(x.len()));
        }
        let direction = x / norm;
        let beta = self.segment_beta(&direction);
        Ok(if beta >= norm {
            x.clone()
        } else {
            direction * beta
        })
    }

    pub fn certify(&self, n_dirs: usize) -> Result<CertReport, GeometryError> {
        if n_dirs < 8 {
            return Err(GeometryError::InvalidVelocitySet(format!(
                "certification needs at least 8 directions, got {n_dirs}"
            )));
        }
        let mut rho_max = 0.0_f64;
        let mut rho_min = f64::INFINITY;
        for d in sample_directions(self.dim(), n_dirs) {
            let beta = self.segment_beta(&d);
            rho_max = rho_max.max(beta);
            // The set is bounded, so every ray leaves it somewhere.
            rho_min = rho_min.min(beta);
        }
        Ok(CertReport {
            rho_max,
            rho_min,
            n_dirs,
            sampled: true,
            valid: rho_max > TOL_MEM && rho_min > TOL_MEM,
        })
    }
}

/// Right end of the maximal run of overlapping or touching intervals that
/// starts at the origin.
fn merge_from_origin(mut intervals: Vec<(f64, f64)>) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut reach: Option<f64> = None;
    for (lo, hi) in intervals {
        match reach {
            None if lo <= TOL_TOUCH => reach = Some(hi),
            None => break,
            Some(r) if lo <= r + TOL_TOUCH => reach = Some(r.max(hi)),
            Some(_) => break,
        }
    }
    reach.unwrap_or(0.0)
}

/// Nearest point of the intersection of `regions` (assumed nonempty), by
/// Dykstra's method over the exact per-region projections.
pub fn project_intersection(regions: &[ConvexRegion], x: &Vector) -> Result<Vector, GeometryError> {
    check_finite(x)?;
    match regions {
        [] => return Ok(x.clone()),
        [only] => return only.project(x),
        _ => {}
    }
    let mut cur = x.clone();
    let mut increments = vec![Vector::zeros(x.len()); regions.len()];
    for _ in 0..MAX_PROJ_SWEEPS {
        let mut moved = 0.0;
        for (region, inc) in regions.iter().zip(increments.iter_mut()) {
            let shifted = &cur + &*inc;
            let next = region.project(&shifted)?;
            *inc = shifted - &next;
            moved += (&next - &cur).norm_squared();
            cur = next;
        }
        if moved.sqrt() < TOL_PROJ {
            break;
        }
    }
    Ok(cur)
}

/// Deterministic direction sample: evenly spaced angles in the plane,
/// otherwise the signed axes followed by seeded random directions.
pub fn sample_directions(m: usize, count: usize) -> Vec<Vector> {
    if m == 2 {
        return (0..count)
            .map(|j| {
                let a = std::f64::consts::TAU * j as f64 / count as f64;
                Vector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let mut dirs: Vec<Vector> = (0..m)
        .flat_map(|k| {
            [1.0, -1.0].map(|s| {
                let mut e = Vector::zeros(m);
                e[k] = s;
                e
            })
        })
        .take(count)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while dirs.len() < count {
        let v = Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            dirs.push(v / n);
        }
    }
    dirs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VelocitySetRepr {
    #[serde(rename = "type")]
    kind: String,
    pieces: Vec<ConvexRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounding_radius: Option<f64>,
}

impl TryFrom<VelocitySetRepr> for VelocitySet {
    type Error = GeometryError;

    fn try_from(r: VelocitySetRepr) -> Result<Self, Self::Error> {
        if r.kind != "union" {
            return Err(GeometryError::InvalidVelocitySet(format!(
                "unknown velocity set type {:?}",
                r.kind
            )));
        }
        VelocitySet::new(r.pieces, r.bounding_radius)
    }
}

impl From<VelocitySet> for VelocitySetRepr {
    fn from(v: VelocitySet) -> Self {
        Self {
            kind: "union".into(),
            pieces: v.pieces,
            bounding_radius: v.declared_radius,
        }
    }
}
