//! Versioned scenario files and the two bundled eight-agent setups.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{AgentSpec, Algorithm, Scenario, TOL_EQ};
use crate::error::{ScenarioError, Violation};
use crate::geometry::{ConvexRegion, SegmentSearch, Vector, VelocitySet};
use crate::objectives::ObjectiveFn;
use crate::topology::{
    Edge, GraphSchedule, ScheduleEntry, ScheduleMode, WeightedDigraph, DEFAULT_WEIGHT_FLOOR,
};

pub const FORMAT_VERSION: &str = "1";
pub const PAPER_HORIZON: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub format_version: String,
    pub scenario: ScenarioBody,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBody {
    pub name: String,
    pub algorithm: Algorithm,
    #[serde(rename = "T")]
    pub dt: f64,
    pub horizon: usize,
    #[serde(default = "default_tol_eq")]
    pub tol_eq: f64,
    #[serde(default = "default_weight_floor")]
    pub weight_floor: f64,
    #[serde(default)]
    pub segment_search: SegmentSearch,
    pub schedule: ScheduleBlock,
    pub agents: Vec<AgentBlock>,
}

fn default_tol_eq() -> f64 {
    TOL_EQ
}

fn default_weight_floor() -> f64 {
    DEFAULT_WEIGHT_FLOOR
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Cyclic,
    RandomPermutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub period_steps: usize,
    #[serde(default)]
    pub mode: ModeName,
    pub entries: Vec<EntryBlock>,
}

/// Edges are `[from, to, weight]` with 1-based agent indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryBlock {
    pub dwell: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentBlock {
    pub objective: ObjectiveFn,
    pub velocity_set: VelocitySet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position_region: Option<ConvexRegion>,
    pub r0: Vec<f64>,
    pub v0: Vec<f64>,
    pub y0: f64,
    pub p0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub trajectory_csv: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plots_dir: Option<PathBuf>,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            trajectory_csv: "trajectory.csv".into(),
            metrics_csv: "metrics.csv".into(),
            summary_json: "summary.json".into(),
            plots_dir: Some("plots".into()),
        }
    }
}

/// A scenario plus where its results go.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub outputs: Outputs,
    pub seed: Option<u64>,
}

fn structural(assumption: &'static str, detail: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(vec![Violation {
        assumption,
        detail: detail.into(),
    }])
}

impl ScenarioFile {
    pub fn from_scenario(scenario: &Scenario, outputs: Outputs, seed: Option<u64>) -> Self {
        let entries = scenario
            .schedule
            .entries()
            .iter()
            .map(|e| EntryBlock {
                dwell: e.dwell,
                edges: e
                    .graph
                    .edges()
                    .iter()
                    .map(|x| (x.from + 1, x.to + 1, x.weight))
                    .collect(),
            })
            .collect();
        let (mode, seed) = match scenario.schedule.mode() {
            ScheduleMode::Cyclic => (ModeName::Cyclic, seed),
            ScheduleMode::RandomPermutation { seed } => (ModeName::RandomPermutation, Some(seed)),
        };
        ScenarioFile {
            format_version: FORMAT_VERSION.into(),
            scenario: ScenarioBody {
                name: scenario.name.clone(),
                algorithm: scenario.algorithm,
                dt: scenario.dt,
                horizon: scenario.horizon,
                tol_eq: scenario.tol_eq,
                weight_floor: DEFAULT_WEIGHT_FLOOR,
                segment_search: scenario
                    .agents
                    .first()
                    .map(|a| a.velocity_set.search())
                    .unwrap_or_default(),
                schedule: ScheduleBlock {
                    period_steps: scenario.schedule.period_steps(),
                    mode,
                    entries,
                },
                agents: scenario
                    .agents
                    .iter()
                    .map(|a| AgentBlock {
                        objective: a.objective.clone(),
                        velocity_set: a.velocity_set.clone(),
                        position_region: a.position_region.clone(),
                        r0: a.r0.as_slice().to_vec(),
                        v0: a.v0.as_slice().to_vec(),
                        y0: a.y0,
                        p0: a.p0,
                    })
                    .collect(),
            },
            outputs,
            seed,
        }
    }

    /// Builds the scenario without checking the modelling assumptions.
    pub fn build(&self) -> Result<LoadedScenario, ScenarioError> {
        if self.format_version != FORMAT_VERSION {
            return Err(ScenarioError::Version(self.format_version.clone()));
        }
        let body = &self.scenario;
        let n = body.agents.len();
        let mode = match (body.schedule.mode, self.seed) {
            (ModeName::Cyclic, _) => ScheduleMode::Cyclic,
            (ModeName::RandomPermutation, Some(seed)) => ScheduleMode::RandomPermutation { seed },
            (ModeName::RandomPermutation, None) => {
                return Err(structural(
                    "Scenario consistency",
                    "random_permutation schedules need a top-level seed",
                ))
            }
        };
        let mut entries = Vec::with_capacity(body.schedule.entries.len());
        for (idx, e) in body.schedule.entries.iter().enumerate() {
            let mut edges = Vec::with_capacity(e.edges.len());
            for &(from, to, weight) in &e.edges {
                if from == 0 || to == 0 {
                    return Err(structural(
                        "Scenario consistency",
                        format!("schedule entry {}: agent indices are 1-based", idx + 1),
                    ));
                }
                edges.push(Edge {
                    from: from - 1,
                    to: to - 1,
                    weight,
                });
            }
            let graph = WeightedDigraph::new(n, edges, body.weight_floor).map_err(|err| {
                structural(
                    "Graph definition",
                    format!("schedule entry {}: {err}", idx + 1),
                )
            })?;
            entries.push(ScheduleEntry {
                dwell: e.dwell,
                graph,
            });
        }
        let schedule = GraphSchedule::new(body.schedule.period_steps, entries, mode)
            .map_err(|err| structural("Graph definition", err.to_string()))?;
        let agents = body
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let velocity_set = a
                    .velocity_set
                    .clone()
                    .with_search(body.segment_search)
                    .map_err(|err| {
                        structural("Scenario consistency", format!("agent {}: {err}", i + 1))
                    })?;
                Ok(AgentSpec {
                    objective: a.objective.clone(),
                    velocity_set,
                    position_region: a.position_region.clone(),
                    r0: Vector::from_vec(a.r0.clone()),
                    v0: Vector::from_vec(a.v0.clone()),
                    y0: a.y0,
                    p0: a.p0,
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        Ok(LoadedScenario {
            scenario: Scenario {
                name: body.name.clone(),
                algorithm: body.algorithm,
                dt: body.dt,
                horizon: body.horizon,
                schedule,
                agents,
                tol_eq: body.tol_eq,
            },
            outputs: self.outputs.clone(),
            seed: self.seed,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

fn parse_error(e: serde_json::Error) -> ScenarioError {
    ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses, builds, and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<LoadedScenario, ScenarioError> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
    match raw.get("format_version") {
        Some(serde_json::Value::String(v)) if v == FORMAT_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(ScenarioError::Version(v.clone())),
        Some(other) => return Err(ScenarioError::Version(other.to_string())),
        None => return Err(ScenarioError::Version(String::new())),
    }
    let file: ScenarioFile = serde_json::from_str(text).map_err(parse_error)?;
    let loaded = file.build()?;
    let violations = loaded.scenario.validate();
    if violations.is_empty() {
        Ok(loaded)
    } else {
        Err(ScenarioError::Validation(violations))
    }
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

fn v(xs: &[f64]) -> Vector {
    Vector::from_row_slice(xs)
}

pub fn paper_velocity_set() -> VelocitySet {
    VelocitySet::new(
        vec![
            ConvexRegion::ball(v(&[0.0, 0.0]), 1.0).expect("valid ball"),
            ConvexRegion::axis_box(v(&[-0.5, 0.0]), v(&[0.5, 1.5])).expect("valid box"),
        ],
        None,
    )
    .expect("valid velocity set")
}

/// The eight local objectives, in agent order.
pub fn paper_objectives() -> Vec<ObjectiveFn> {
    let ones = v(&[1.0, 1.0]);
    let quad = |c: &[f64]| ObjectiveFn::quadratic(v(c), ones.clone()).expect("valid");
    let quart = |c: &[f64]| ObjectiveFn::quartic(v(c), ones.clone()).expect("valid");
    vec![
        quad(&[1.0, 1.0]),
        quad(&[0.0, 0.0]),
        quart(&[1.0, 1.0]),
        quart(&[0.0, 0.0]),
        quad(&[1.0, 0.0]),
        quad(&[0.0, 1.0]),
        quart(&[1.0, 0.0]),
        quart(&[0.0, 1.0]),
    ]
}

/// Position regions: the unit ball for agents 1-4, a box left of
/// `x = -0.5` for agents 5-8.
pub fn paper_position_regions() -> Vec<ConvexRegion> {
    let h1 = ConvexRegion::ball(v(&[0.0, 0.0]), 1.0).expect("valid ball");
    let h2 = ConvexRegion::axis_box(v(&[-6.5, -3.0]), v(&[-0.5, 3.0])).expect("valid box");
    (0..8)
        .map(|i| if i < 4 { h1.clone() } else { h2.clone() })
        .collect()
}

/// Bidirectional 8-ring split into five matchings, each held for 10 steps.
pub fn paper_schedule() -> GraphSchedule {
    let groups: [&[(usize, usize)]; 5] = [
        &[(1, 2), (3, 4)],
        &[(5, 6), (7, 8)],
        &[(2, 3), (4, 5)],
        &[(6, 7)],
        &[(8, 1)],
    ];
    let entries = groups
        .iter()
        .map(|pairs| {
            let edges = pairs
                .iter()
                .flat_map(|&(a, b)| {
                    [
                        Edge {
                            from: a - 1,
                            to: b - 1,
                            weight: 0.5,
                        },
                        Edge {
                            from: b - 1,
                            to: a - 1,
                            weight: 0.5,
                        },
                    ]
                })
                .collect();
            ScheduleEntry {
                dwell: 10,
                graph: WeightedDigraph::new(8, edges, DEFAULT_WEIGHT_FLOOR).expect("valid graph"),
            }
        })
        .collect();
    GraphSchedule::new(50, entries, ScheduleMode::Cyclic).expect("valid schedule")
}

fn circle_start(i: usize) -> Vector {
    let a = std::f64::consts::TAU * i as f64 / 8.0;
    v(&[2.0 * a.cos(), 2.0 * a.sin()])
}

fn paper_scenario(algorithm: Algorithm) -> Scenario {
    let velocity_set = paper_velocity_set();
    let regions = paper_position_regions();
    let agents = paper_objectives()
        .into_iter()
        .enumerate()
        .map(|(i, objective)| {
            let start = circle_start(i);
            let (position_region, r0) = match algorithm {
                Algorithm::A => (None, start),
                Algorithm::B => {
                    let h = regions[i].clone();
                    let r0 = h.project(&start).expect("finite start");
                    (Some(h), r0)
                }
            };
            AgentSpec {
                objective,
                velocity_set: velocity_set.clone(),
                position_region,
                r0,
                v0: v(&[0.0, 0.0]),
                y0: 1.0,
                p0: 1.5,
            }
        })
        .collect();
    Scenario {
        name: match algorithm {
            Algorithm::A => "paper_A".into(),
            Algorithm::B => "paper_B".into(),
        },
        algorithm,
        dt: 0.2,
        horizon: PAPER_HORIZON,
        schedule: paper_schedule(),
        agents,
        tol_eq: TOL_EQ,
    }
}

/// Eight agents in the plane, velocity constraints only.
pub fn scenario_paper_a() -> Scenario {
    paper_scenario(Algorithm::A)
}

/// The same agents with position constraints and fixed gains.
pub fn scenario_paper_b() -> Scenario {
    paper_scenario(Algorithm::B)
}
