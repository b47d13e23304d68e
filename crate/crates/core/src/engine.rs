//! Per-step updates of the two distributed algorithms.
//!
//! Algorithm A handles velocity constraints only and adapts the damping gain
//! from the shrink factor. Algorithm B adds a convex position set per agent
//! and keeps the gain fixed.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Violation};
use crate::geometry::{project_intersection, ConvexRegion, Vector, VelocitySet};
use crate::objectives::ObjectiveFn;
use crate::topology::{GraphSchedule, TopologyReport, WeightedDigraph};

pub const TOL_EQ: f64 = 1e-9;
pub const TOL_ZERO: f64 = 1e-12;
const TOL_INITIAL: f64 = 1e-9;
/// Radius of the ball that must fit inside the common position set.
const INTERIOR_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaBranch {
    /// `sqrt(y) < |grad|^2`: the gradient is too large for the stepsize.
    RuleA,
    /// The gradient-corrected velocity would be shrunk.
    RuleB,
    Gradient,
}

impl ThetaBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            ThetaBranch::RuleA => "rule_a",
            ThetaBranch::RuleB => "rule_b",
            ThetaBranch::Gradient => "gradient",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rule_a" => Some(ThetaBranch::RuleA),
            "rule_b" => Some(ThetaBranch::RuleB),
            "gradient" => Some(ThetaBranch::Gradient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub r: Vector,
    pub v: Vector,
    pub y: f64,
    pub p: f64,
}

/// Intermediate quantities of one agent's update.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub pi: Vector,
    pub q: Vector,
    pub w: Vector,
    pub grad: Vector,
    pub theta: Vector,
    pub theta_branch: ThetaBranch,
    pub sigma: f64,
    pub b: f64,
    pub u: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub agents: Vec<AgentRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub objective: ObjectiveFn,
    pub velocity_set: VelocitySet,
    pub position_region: Option<ConvexRegion>,
    pub r0: Vector,
    pub v0: Vector,
    pub y0: f64,
    pub p0: f64,
}

impl AgentSpec {
    pub fn initial_state(&self) -> AgentState {
        AgentState {
            r: self.r0.clone(),
            v: self.v0.clone(),
            y: self.y0,
            p: self.p0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub algorithm: Algorithm,
    pub dt: f64,
    pub horizon: usize,
    pub schedule: GraphSchedule,
    pub agents: Vec<AgentSpec>,
    pub tol_eq: f64,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn m(&self) -> usize {
        self.agents.first().map_or(0, |a| a.r0.len())
    }

    fn gain_assumption(&self) -> &'static str {
        match self.algorithm {
            Algorithm::A => "Assumption 3",
            Algorithm::B => "Assumption 7",
        }
    }

    /// Every violated modelling assumption, empty when the scenario is
    /// runnable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n();
        if n == 0 {
            push(&mut out, "Scenario consistency", "no agents".into());
            return out;
        }
        if self.schedule.n() != n {
            push(
                &mut out,
                "Scenario consistency",
                format!(
                    "schedule has {} nodes but there are {n} agents",
                    self.schedule.n()
                ),
            );
            return out;
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            push(
                &mut out,
                "Scenario consistency",
                format!("sampling period must be positive, got {}", self.dt),
            );
            return out;
        }
        if !(self.tol_eq.is_finite() && self.tol_eq >= 0.0) {
            push(
                &mut out,
                "Scenario consistency",
                format!("tol_eq must be nonnegative, got {}", self.tol_eq),
            );
        }
        let m = self.m();
        for (i, a) in self.agents.iter().enumerate() {
            let id = i + 1;
            let dims = [
                ("r0", a.r0.len()),
                ("v0", a.v0.len()),
                ("objective", a.objective.dim()),
                ("velocity set", a.velocity_set.dim()),
            ];
            for (what, d) in dims {
                if d != m {
                    push(
                        &mut out,
                        "Scenario consistency",
                        format!("agent {id}: {what} has dimension {d}, expected {m}"),
                    );
                }
            }
            if let Some(d) = a.position_region.as_ref().and_then(|h| h.dim()) {
                if d != m {
                    push(
                        &mut out,
                        "Scenario consistency",
                        format!("agent {id}: position region has dimension {d}, expected {m}"),
                    );
                }
            }
            if !a.r0.iter().chain(a.v0.iter()).all(|c| c.is_finite()) {
                push(
                    &mut out,
                    "Scenario consistency",
                    format!("agent {id}: initial state is not finite"),
                );
            }
            if !(a.y0.is_finite() && a.y0 > 0.0) {
                push(
                    &mut out,
                    "Scenario consistency",
                    format!("agent {id}: y(0) must be positive, got {}", a.y0),
                );
            }
        }
        if !out.is_empty() {
            return out;
        }

        let report = self.schedule.validate();
        for &(entry, node) in &report.unbalanced {
            push(
                &mut out,
                "Assumption 5",
                format!("graph entry {} unbalanced at node {}", entry + 1, node + 1),
            );
        }
        if !report.jointly_connected {
            push(
                &mut out,
                "Assumption 4",
                "the union of the graphs over a period is not strongly connected".into(),
            );
        }

        let gain = self.gain_assumption();
        for (i, a) in self.agents.iter().enumerate() {
            let id = i + 1;
            if !(a.p0.is_finite() && a.p0 > 0.0) {
                push(
                    &mut out,
                    gain,
                    format!("agent {id}: p must be positive, got {}", a.p0),
                );
                continue;
            }
            if a.p0 * self.dt >= 1.0 {
                push(
                    &mut out,
                    gain,
                    format!("agent {id}: p*T = {} >= 1", a.p0 * self.dt),
                );
            }
            let max_l = report.max_out_degree_row[i];
            if 2.0 * max_l >= a.p0 {
                push(
                    &mut out,
                    gain,
                    format!(
                        "agent {id}: p = {} does not exceed 2*max L_ii = {}",
                        a.p0,
                        2.0 * max_l
                    ),
                );
            }
            match a.velocity_set.shrink(&a.v0) {
                Ok(s) if (&s - &a.v0).amax() <= TOL_INITIAL => {}
                _ => push(
                    &mut out,
                    "Initial feasibility",
                    format!("agent {id}: v(0) is not a fixed point of the velocity shrink"),
                ),
            }
        }

        if self.algorithm == Algorithm::B {
            let mut regions = Vec::with_capacity(n);
            for (i, a) in self.agents.iter().enumerate() {
                let id = i + 1;
                match &a.position_region {
                    None => push(
                        &mut out,
                        "Assumption 6",
                        format!("agent {id}: no position region"),
                    ),
                    Some(h) => {
                        if !h.is_bounded() {
                            push(
                                &mut out,
                                "Assumption 6",
                                format!("agent {id}: position region is unbounded"),
                            );
                        }
                        match h.project(&a.r0) {
                            Ok(p) if (&p - &a.r0).amax() <= TOL_INITIAL => {}
                            _ => push(
                                &mut out,
                                "Initial feasibility",
                                format!("agent {id}: r(0) is not inside its position region"),
                            ),
                        }
                        regions.push(h.clone());
                    }
                }
            }
            if regions.len() == n && !has_interior(&regions) {
                push(
                    &mut out,
                    "Assumption 6",
                    format!("the position regions share no ball of radius {INTERIOR_DELTA}"),
                );
            }
        }
        out
    }

    pub fn topology_report(&self) -> TopologyReport {
        self.schedule.validate()
    }

    pub fn initial_states(&self) -> Vec<AgentState> {
        self.agents.iter().map(AgentSpec::initial_state).collect()
    }
}

fn push(out: &mut Vec<Violation>, assumption: &'static str, detail: String) {
    out.push(Violation { assumption, detail });
}

/// True when a small ball fits inside every region at once.
fn has_interior(regions: &[ConvexRegion]) -> bool {
    let Some(eroded) = regions
        .iter()
        .map(|h| h.eroded(INTERIOR_DELTA))
        .collect::<Option<Vec<_>>>()
    else {
        return false;
    };
    let m = regions.iter().find_map(|h| h.dim()).unwrap_or(0);
    match project_intersection(&eroded, &Vector::zeros(m)) {
        Ok(x) => eroded.iter().all(|h| h.contains(&x, 1e-9)),
        Err(_) => false,
    }
}

/// `atan(exp(s))`, saturating where `exp` would overflow.
pub fn stepsize_increment(s: f64) -> f64 {
    if s > 700.0 {
        std::f64::consts::FRAC_PI_2
    } else {
        s.exp().atan()
    }
}

/// `T * sum_j a_ij (r_j - r_i)` over the neighbours agent `i` hears.
pub fn consensus_term(i: usize, states: &[AgentState], g: &WeightedDigraph, dt: f64) -> Vector {
    let ri = &states[i].r;
    g.in_neighbors(i)
        .fold(Vector::zeros(ri.len()), |acc, (j, a)| {
            acc + (&states[j].r - ri) * a
        })
        * dt
}

fn finite(
    step: usize,
    agent: usize,
    quantity: &'static str,
    x: &Vector,
) -> Result<(), EngineError> {
    if x.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(EngineError::NonFinite {
            step,
            agent,
            quantity,
        })
    }
}

fn finite_scalar(
    step: usize,
    agent: usize,
    quantity: &'static str,
    x: f64,
) -> Result<(), EngineError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(EngineError::NonFinite {
            step,
            agent,
            quantity,
        })
    }
}

fn step_agent(
    k: usize,
    i: usize,
    states: &[AgentState],
    scenario: &Scenario,
    g: &WeightedDigraph,
) -> Result<(AgentState, AgentRecord), EngineError> {
    let spec = &scenario.agents[i];
    let s = &states[i];
    let dt = scenario.dt;
    let p = s.p;
    let alg = scenario.algorithm;
    let geo = |source| EngineError::Geometry {
        step: k,
        agent: i,
        source,
    };

    if !(p > 0.0 && p * dt < 1.0) {
        return Err(EngineError::GainViolation {
            step: k,
            agent: i,
            detail: format!("p*T = {} outside (0, 1)", p * dt),
        });
    }

    let y_next = s.y + stepsize_increment(s.r.norm()) * dt;
    let pi = consensus_term(i, states, g, dt);
    let (q, w) = match alg {
        Algorithm::A => (
            &s.v - &s.v * (p * dt) + &pi * (p / 2.0),
            &s.r + &s.v * (2.0 / p) - &s.v * dt + &pi,
        ),
        Algorithm::B => (
            &s.v - &s.v * (p * dt) + &pi * (p / 4.0),
            &s.r + &s.v * (2.0 / p) - &s.v * dt + &pi * 0.5,
        ),
    };
    finite(k, i, "q", &q)?;
    finite(k, i, "w", &w)?;
    let grad = spec
        .objective
        .gradient(&w)
        .map_err(|source| EngineError::Objective {
            step: k,
            agent: i,
            source,
        })?;
    finite(k, i, "gradient", &grad)?;

    let sqrt_y = s.y.sqrt();
    let correction = &grad * (p / (2.0 * sqrt_y));
    let (theta_branch, theta) = if alg == Algorithm::A && sqrt_y < grad.norm_squared() {
        (ThetaBranch::RuleA, Vector::zeros(q.len()))
    } else {
        let candidate = &q - &correction;
        let shrunk = spec.velocity_set.shrink(&candidate).map_err(geo)?;
        if (&shrunk - &candidate).amax() > scenario.tol_eq {
            (ThetaBranch::RuleB, Vector::zeros(q.len()))
        } else {
            (ThetaBranch::Gradient, correction)
        }
    };

    let target = &q - &theta;
    let u = spec.velocity_set.shrink(&target).map_err(geo)?;
    let target_norm = target.norm();
    let sigma = if target_norm <= TOL_ZERO {
        1.0
    } else {
        u.norm() / target_norm
    };
    // Same value as [1 - sigma (1 - pT)] / T, arranged so sigma = 1 gives
    // b = p exactly.
    let b = p + (1.0 - sigma) * (1.0 - p * dt) / dt;
    finite_scalar(k, i, "sigma", sigma)?;
    finite_scalar(k, i, "b", b)?;
    finite_scalar(k, i, "y", y_next)?;

    let p_next = match alg {
        Algorithm::A => {
            if b * dt >= 1.0 {
                return Err(EngineError::GainViolation {
                    step: k,
                    agent: i,
                    detail: format!("b*T = {} >= 1 (sigma = {sigma})", b * dt),
                });
            }
            b
        }
        Algorithm::B => p,
    };

    let drift = &s.r + &s.v * dt;
    let r_next = match (alg, &spec.position_region) {
        (Algorithm::B, Some(h)) => h.project(&drift).map_err(geo)?,
        _ => drift,
    };
    finite(k, i, "r", &r_next)?;

    Ok((
        AgentState {
            r: r_next,
            v: u.clone(),
            y: y_next,
            p: p_next,
        },
        AgentRecord {
            pi,
            q,
            w,
            grad,
            theta,
            theta_branch,
            sigma,
            b,
            u,
        },
    ))
}

/// Advances every agent from the step-`k` snapshot.
pub fn step(
    k: usize,
    states: &[AgentState],
    scenario: &Scenario,
) -> Result<(Vec<AgentState>, StepRecord), EngineError> {
    let g = scenario.schedule.graph_at(k);
    let mut next = Vec::with_capacity(states.len());
    let mut agents = Vec::with_capacity(states.len());
    for i in 0..states.len() {
        let (s, rec) = step_agent(k, i, states, scenario, g)?;
        next.push(s);
        agents.push(rec);
    }
    Ok((next, StepRecord { k, agents }))
}

pub fn step_algorithm_a(
    k: usize,
    states: &[AgentState],
    scenario: &Scenario,
) -> Result<(Vec<AgentState>, StepRecord), EngineError> {
    if scenario.algorithm != Algorithm::A {
        return Err(EngineError::InvalidScenario(
            "scenario is configured for Algorithm B".into(),
        ));
    }
    step(k, states, scenario)
}

pub fn step_algorithm_b(
    k: usize,
    states: &[AgentState],
    scenario: &Scenario,
) -> Result<(Vec<AgentState>, StepRecord), EngineError> {
    if scenario.algorithm != Algorithm::B {
        return Err(EngineError::InvalidScenario(
            "scenario is configured for Algorithm A".into(),
        ));
    }
    step(k, states, scenario)
}

/// States at steps `0..=horizon` and the records of steps `0..horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub dt: f64,
    pub states: Vec<Vec<AgentState>>,
    pub records: Vec<StepRecord>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.records.len()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// The partial trajectory up to the failure, together with the error.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EngineError,
    pub partial: Trajectory,
}

pub fn run(scenario: &Scenario) -> Result<Trajectory, EngineError> {
    run_with_partial(scenario).map_err(|f| f.error)
}

pub fn run_with_partial(scenario: &Scenario) -> Result<Trajectory, Box<RunFailure>> {
    let mut traj = Trajectory {
        algorithm: scenario.algorithm,
        dt: scenario.dt,
        states: Vec::with_capacity(scenario.horizon + 1),
        records: Vec::with_capacity(scenario.horizon),
    };
    let violations = scenario.validate();
    if !violations.is_empty() {
        let msg = violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Box::new(RunFailure {
            error: EngineError::InvalidScenario(msg),
            partial: traj,
        }));
    }
    traj.states.push(scenario.initial_states());
    for k in 0..scenario.horizon {
        match step(k, &traj.states[k], scenario) {
            Ok((next, rec)) => {
                traj.states.push(next);
                traj.records.push(rec);
            }
            Err(error) => {
                return Err(Box::new(RunFailure {
                    error,
                    partial: traj,
                }))
            }
        }
    }
    Ok(traj)
}
