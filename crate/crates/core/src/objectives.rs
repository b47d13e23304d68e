//! Local objectives and the reference minimizer for the team sum.

use serde::{Deserialize, Serialize};

use crate::error::ObjectiveError;
use crate::geometry::{project_intersection, ConvexRegion, Vector};

pub const ORACLE_MAX_ITERS: usize = 1_000_000;
const ORACLE_STEP_TOL: f64 = 1e-10;
const BACKTRACK_INIT: f64 = 1.0;
const BACKTRACK_SHRINK: f64 = 0.5;
const SUFFICIENT_DECREASE: f64 = 1e-4;

/// Separable convex objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ObjectiveRepr", into = "ObjectiveRepr")]
pub enum ObjectiveFn {
    /// `sum_d w_d (x_d - c_d)^2`
    Quadratic {
        center: Vector,
        weights: Vector,
    },
    /// `sum_d w_d (x_d - c_d)^4`
    Quartic {
        center: Vector,
        weights: Vector,
    },
    Sum(Vec<ObjectiveFn>),
}

fn check_shifted(center: &Vector, weights: &Vector) -> Result<(), ObjectiveError> {
    if center.is_empty() || center.len() != weights.len() {
        return Err(ObjectiveError::Invalid(format!(
            "center has {} components but weights has {}",
            center.len(),
            weights.len()
        )));
    }
    if !center.iter().all(|c| c.is_finite()) {
        return Err(ObjectiveError::Invalid("center is not finite".into()));
    }
    if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(ObjectiveError::Invalid("weights must be positive".into()));
    }
    Ok(())
}

impl ObjectiveFn {
    pub fn quadratic(center: Vector, weights: Vector) -> Result<Self, ObjectiveError> {
        check_shifted(&center, &weights)?;
        Ok(ObjectiveFn::Quadratic { center, weights })
    }

    pub fn quartic(center: Vector, weights: Vector) -> Result<Self, ObjectiveError> {
        check_shifted(&center, &weights)?;
        Ok(ObjectiveFn::Quartic { center, weights })
    }

    pub fn sum(members: Vec<ObjectiveFn>) -> Result<Self, ObjectiveError> {
        let dim = members
            .first()
            .map(|f| f.dim())
            .ok_or_else(|| ObjectiveError::Invalid("empty sum".into()))?;
        if let Some(bad) = members.iter().find(|f| f.dim() != dim) {
            return Err(ObjectiveError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(ObjectiveFn::Sum(members))
    }

    pub fn dim(&self) -> usize {
        match self {
            ObjectiveFn::Quadratic { center, .. } | ObjectiveFn::Quartic { center, .. } => {
                center.len()
            }
            ObjectiveFn::Sum(members) => members[0].dim(),
        }
    }

    fn check_input(&self, x: &Vector) -> Result<(), ObjectiveError> {
        if x.len() != self.dim() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &Vector) -> Result<f64, ObjectiveError> {
        self.check_input(x)?;
        Ok(self.eval_unchecked(x))
    }

    fn eval_unchecked(&self, x: &Vector) -> f64 {
        match self {
            ObjectiveFn::Quadratic { center, weights } => (0..x.len())
                .map(|d| weights[d] * (x[d] - center[d]).powi(2))
                .sum(),
            ObjectiveFn::Quartic { center, weights } => (0..x.len())
                .map(|d| weights[d] * (x[d] - center[d]).powi(4))
                .sum(),
            ObjectiveFn::Sum(members) => members.iter().map(|f| f.eval_unchecked(x)).sum(),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector, ObjectiveError> {
        self.check_input(x)?;
        Ok(self.gradient_unchecked(x))
    }

    fn gradient_unchecked(&self, x: &Vector) -> Vector {
        match self {
            ObjectiveFn::Quadratic { center, weights } => {
                Vector::from_fn(x.len(), |d, _| 2.0 * weights[d] * (x[d] - center[d]))
            }
            ObjectiveFn::Quartic { center, weights } => Vector::from_fn(x.len(), |d, _| {
                4.0 * weights[d] * (x[d] - center[d]).powi(3)
            }),
            ObjectiveFn::Sum(members) => members.iter().fold(Vector::zeros(x.len()), |acc, f| {
                acc + f.gradient_unchecked(x)
            }),
        }
    }

    /// Central differences with step `h` in each coordinate.
    pub fn finite_diff_gradient(&self, x: &Vector, h: f64) -> Result<Vector, ObjectiveError> {
        self.check_input(x)?;
        if !(h > 0.0) {
            return Err(ObjectiveError::Invalid(format!(
                "step must be positive, got {h}"
            )));
        }
        Ok(Vector::from_fn(x.len(), |d, _| {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[d] += h;
            lo[d] -= h;
            (self.eval_unchecked(&hi) - self.eval_unchecked(&lo)) / (2.0 * h)
        }))
    }

    /// Centroid of the shift centers, used to seed the oracle.
    fn mean_center(&self) -> Vector {
        match self {
            ObjectiveFn::Quadratic { center, .. } | ObjectiveFn::Quartic { center, .. } => {
                center.clone()
            }
            ObjectiveFn::Sum(members) => {
                members
                    .iter()
                    .fold(Vector::zeros(self.dim()), |acc, f| acc + f.mean_center())
                    / members.len() as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum ObjectiveRepr {
    Quadratic { center: Vec<f64>, weights: Vec<f64> },
    Quartic { center: Vec<f64>, weights: Vec<f64> },
    Sum(Vec<ObjectiveFn>),
}

impl TryFrom<ObjectiveRepr> for ObjectiveFn {
    type Error = ObjectiveError;

    fn try_from(r: ObjectiveRepr) -> Result<Self, Self::Error> {
        match r {
            ObjectiveRepr::Quadratic { center, weights } => {
                ObjectiveFn::quadratic(Vector::from_vec(center), Vector::from_vec(weights))
            }
            ObjectiveRepr::Quartic { center, weights } => {
                ObjectiveFn::quartic(Vector::from_vec(center), Vector::from_vec(weights))
            }
            ObjectiveRepr::Sum(members) => ObjectiveFn::sum(members),
        }
    }
}

impl From<ObjectiveFn> for ObjectiveRepr {
    fn from(f: ObjectiveFn) -> Self {
        match f {
            ObjectiveFn::Quadratic { center, weights } => ObjectiveRepr::Quadratic {
                center: center.as_slice().to_vec(),
                weights: weights.as_slice().to_vec(),
            },
            ObjectiveFn::Quartic { center, weights } => ObjectiveRepr::Quartic {
                center: center.as_slice().to_vec(),
                weights: weights.as_slice().to_vec(),
            },
            ObjectiveFn::Sum(members) => ObjectiveRepr::Sum(members),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamObjective {
    members: Vec<ObjectiveFn>,
}

impl TeamObjective {
    pub fn new(members: Vec<ObjectiveFn>) -> Result<Self, ObjectiveError> {
        let dim = members
            .first()
            .map(|f| f.dim())
            .ok_or_else(|| ObjectiveError::Invalid("team has no members".into()))?;
        if let Some(bad) = members.iter().find(|f| f.dim() != dim) {
            return Err(ObjectiveError::DimensionMismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ObjectiveFn] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn eval(&self, x: &Vector) -> Result<f64, ObjectiveError> {
        self.members.iter().map(|f| f.eval(x)).sum()
    }

    pub fn gradient(&self, x: &Vector) -> Result<Vector, ObjectiveError> {
        self.members
            .iter()
            .try_fold(Vector::zeros(self.dim()), |acc, f| Ok(acc + f.gradient(x)?))
    }
}

/// Minimizer of the team sum over the intersection of `regions` (the whole
/// space when empty), by projected gradient descent with backtracking.
pub fn minimize_team(
    team: &TeamObjective,
    regions: &[ConvexRegion],
) -> Result<Vector, ObjectiveError> {
    let start = team
        .members
        .iter()
        .fold(Vector::zeros(team.dim()), |acc, f| acc + f.mean_center())
        / team.members.len() as f64;
    let mut x = project_intersection(regions, &start)?;
    let mut fx = team.eval(&x)?;
    for _ in 0..ORACLE_MAX_ITERS {
        let g = team.gradient(&x)?;
        let mut t = BACKTRACK_INIT;
        let (next, f_next) = loop {
            let cand = project_intersection(regions, &(&x - &g * t))?;
            let f_cand = team.eval(&cand)?;
            if f_cand <= fx + SUFFICIENT_DECREASE * g.dot(&(&cand - &x)) || t < 1e-30 {
                break (cand, f_cand);
            }
            t *= BACKTRACK_SHRINK;
        };
        let moved = (&next - &x).norm();
        x = next;
        fx = f_next;
        if moved < ORACLE_STEP_TOL {
            return Ok(x);
        }
    }
    Err(ObjectiveError::OracleFailed(format!(
        "no convergence within {ORACLE_MAX_ITERS} iterations"
    )))
}
