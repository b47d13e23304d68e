use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid velocity set: {0}")]
    InvalidVelocitySet(String),
    #[error("direction must have unit norm (got norm {0})")]
    NotUnit(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("edge {from}->{to} references a node outside 0..{n}")]
    NodeOutOfRange { from: usize, to: usize, n: usize },
    #[error("edge {from}->{to} has weight {weight}, below the floor {floor}")]
    WeightBelowFloor {
        from: usize,
        to: usize,
        weight: f64,
        floor: f64,
    },
    #[error("duplicate edge {from}->{to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("graphs have mismatched node counts ({0} vs {1})")]
    NodeCountMismatch(usize, usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid objective: {0}")]
    Invalid(String),
    #[error("oracle failed: {0}")]
    OracleFailed(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Failures raised while advancing a run. `step` is the index of the step
/// being computed when the failure happened; `agent` is 0-based but shown
/// 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("step {step}, agent {}: Assumption 3 violated ({detail})", .agent + 1)]
    GainViolation {
        step: usize,
        agent: usize,
        detail: String,
    },
    #[error("step {step}, agent {}: non-finite value in {quantity}", .agent + 1)]
    NonFinite {
        step: usize,
        agent: usize,
        quantity: &'static str,
    },
    #[error("step {step}, agent {}: {source}", .agent + 1)]
    Geometry {
        step: usize,
        agent: usize,
        source: GeometryError,
    },
    #[error("step {step}, agent {}: {source}", .agent + 1)]
    Objective {
        step: usize,
        agent: usize,
        source: ObjectiveError,
    },
    #[error("scenario is invalid: {0}")]
    InvalidScenario(String),
}

impl EngineError {
    pub fn step(&self) -> Option<usize> {
        match self {
            EngineError::GainViolation { step, .. }
            | EngineError::NonFinite { step, .. }
            | EngineError::Geometry { step, .. }
            | EngineError::Objective { step, .. } => Some(*step),
            EngineError::InvalidScenario(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("transformation valid only for Algorithm A")]
    NotAlgorithmA,
    #[error("step range {from}..={to} is outside the log (0..{len})")]
    RangeOutOfLog { from: usize, to: usize, len: usize },
    #[error("damping gain must be positive (agent {agent}, step {step}, p = {p})")]
    NonPositiveGain { step: usize, agent: usize, p: f64 },
    #[error("record is inconsistent: {0}")]
    Inconsistent(String),
}

/// A single violated modelling assumption, named so a user can look it up.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: &'static str,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violated: {}", self.assumption, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported format_version {0:?} (expected \"1\")")]
    Version(String),
    #[error("{}", join_violations(.0))]
    Validation(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl ScenarioError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ScenarioError::Validation(v) => v,
            _ => &[],
        }
    }
}
