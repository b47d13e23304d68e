//! Post-run analysis and offline verification of trajectory logs.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::diagnostics::{
    build_psi_from, mean_position, metrics, min_entry, replay_check, replay_records, row_sum_error,
    MetricsSeries, TOL_MIN_ENTRY, TOL_REPLAY, TOL_ROW_SUM,
};
use crate::engine::{step, Algorithm, Scenario, Trajectory};
use crate::error::DiagnosticsError;
use crate::geometry::{ConvexRegion, Vector, TOL_MEM};
use crate::objectives::{minimize_team, TeamObjective};
use crate::output::{
    plots_from_metrics_csv, write_metrics_csv, write_trajectory_csv, RunSummary, TrajectoryLog,
};
use crate::scenario::Outputs;

/// Tolerance on position-region membership of logged Algorithm B states.
pub const TOL_REGION: f64 = 1e-9;

pub fn team_objective(scenario: &Scenario) -> TeamObjective {
    TeamObjective::new(
        scenario
            .agents
            .iter()
            .map(|a| a.objective.clone())
            .collect(),
    )
    .expect("validated scenarios have consistent objectives")
}

/// Regions the team optimum is constrained to: none for Algorithm A.
pub fn optimum_regions(scenario: &Scenario) -> Vec<ConvexRegion> {
    match scenario.algorithm {
        Algorithm::A => Vec::new(),
        Algorithm::B => scenario
            .agents
            .iter()
            .filter_map(|a| a.position_region.clone())
            .collect(),
    }
}

pub fn oracle_optimum(scenario: &Scenario) -> Result<Vector, DiagnosticsError> {
    minimize_team(&team_objective(scenario), &optimum_regions(scenario))
        .map_err(|e| DiagnosticsError::Inconsistent(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub metrics: MetricsSeries,
    pub summary: RunSummary,
}

pub fn analyze(
    scenario: &Scenario,
    traj: &Trajectory,
    wall_time: f64,
) -> Result<Analysis, DiagnosticsError> {
    let opt = oracle_optimum(scenario)?;
    let series = metrics(traj, &scenario.schedule, &team_objective(scenario), &opt)?;
    let replay = match traj.algorithm {
        Algorithm::A => Some(replay_check(traj, &scenario.schedule)?.max_residual),
        Algorithm::B => None,
    };
    let last = *series.last();
    let summary = RunSummary {
        scenario: scenario.name.clone(),
        algorithm: format!("{:?}", scenario.algorithm),
        final_consensus_spread: last.consensus_spread,
        final_optimality_gap: last.optimality_gap,
        final_y_ratio_spread: last.y_ratio_spread,
        max_state_envelope: series.max_envelope(),
        psi_max_row_sum_err: series.max_psi_row_sum_err(),
        replay_max_residual: replay,
        final_mean_position: mean_position(traj.states.last().expect("non-empty"))
            .iter()
            .copied()
            .collect(),
        oracle_optimum: opt.iter().copied().collect(),
        steps: traj.steps(),
        wall_time,
    };
    Ok(Analysis {
        metrics: series,
        summary,
    })
}

pub fn write_trajectory_file(path: &Path, traj: &Trajectory) -> std::io::Result<()> {
    write_trajectory_csv(BufWriter::new(fs::File::create(path)?), traj)
}

/// Writes the trajectory, metrics, summary and (optionally) plots under `dir`.
pub fn write_outputs(
    dir: &Path,
    outputs: &Outputs,
    traj: &Trajectory,
    analysis: &Analysis,
    plots: bool,
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory_file(&dir.join(&outputs.trajectory_csv), traj)?;
    let mut metrics_text = Vec::new();
    write_metrics_csv(&mut metrics_text, &analysis.metrics)?;
    fs::write(dir.join(&outputs.metrics_csv), &metrics_text)?;
    let mut summary = serde_json::to_string_pretty(&analysis.summary)?;
    summary.push('\n');
    fs::write(dir.join(&outputs.summary_json), summary)?;
    if let (true, Some(plot_dir)) = (plots, &outputs.plots_dir) {
        let plot_dir = dir.join(plot_dir);
        fs::create_dir_all(&plot_dir)?;
        let text = String::from_utf8_lossy(&metrics_text);
        let svgs = plots_from_metrics_csv(&text).map_err(std::io::Error::other)?;
        for (name, svg) in svgs {
            fs::write(plot_dir.join(name), svg)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail { step: Option<usize> },
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, failed_at: Option<Option<usize>>, detail: String) -> Self {
        let status = match failed_at {
            None => CheckStatus::Pass,
            Some(step) => CheckStatus::Fail { step },
        };
        Check {
            name,
            status,
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        !matches!(self.status, CheckStatus::Fail { .. })
    }

    pub fn line(&self) -> String {
        let tag = match self.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail { .. } => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        let at = match self.status {
            CheckStatus::Fail { step: Some(k) } => format!(" (offending step {k})"),
            _ => String::new(),
        };
        format!("{tag} {}: {}{at}", self.name, self.detail)
    }
}

fn first_failure(bad: impl IntoIterator<Item = usize>) -> Option<Option<usize>> {
    bad.into_iter().next().map(Some)
}

fn log_trajectory(log: &TrajectoryLog, scenario: &Scenario) -> Trajectory {
    Trajectory {
        algorithm: scenario.algorithm,
        dt: scenario.dt,
        states: log.states.clone(),
        records: Vec::new(),
    }
}

/// Checks a logged trajectory against its scenario without trusting any
/// derived quantity beyond what the log records.
pub fn verify_log(log: &TrajectoryLog, scenario: &Scenario) -> Vec<Check> {
    let mut checks = Vec::new();
    let steps = log.steps.len();

    let init = scenario.initial_states();
    checks.push(Check::new(
        "initial state",
        (log.states[0] != init).then_some(Some(0)),
        "step 0 matches the scenario's r0, v0, y0, p0".into(),
    ));

    let mut worst_row = (0.0_f64, 0);
    let mut worst_min = (f64::INFINITY, 0);
    let mut psi_error = None;
    for (k, rec) in log.steps.iter().enumerate() {
        let p: Vec<f64> = log.states[k].iter().map(|s| s.p).collect();
        let b: Vec<f64> = rec.iter().map(|s| s.b).collect();
        let sigma: Vec<f64> = rec.iter().map(|s| s.sigma).collect();
        match build_psi_from(&p, &b, &sigma, scenario.schedule.graph_at(k), scenario.dt) {
            Ok(sys) => {
                let e = row_sum_error(&sys.psi);
                if e > worst_row.0 || e.is_nan() {
                    worst_row = (e, k);
                }
                let lo = min_entry(&sys.psi);
                if lo < worst_min.0 || lo.is_nan() {
                    worst_min = (lo, k);
                }
            }
            Err(e) => {
                psi_error = Some((k, e));
                break;
            }
        }
    }
    let (row_fail, min_fail) = match &psi_error {
        Some((k, _)) => (Some(Some(*k)), Some(Some(*k))),
        None => (
            (!(worst_row.0 <= TOL_ROW_SUM)).then_some(Some(worst_row.1)),
            (!(worst_min.0 >= -TOL_MIN_ENTRY)).then_some(Some(worst_min.1)),
        ),
    };
    let psi_note = psi_error
        .as_ref()
        .map(|(_, e)| format!("; {e}"))
        .unwrap_or_default();
    checks.push(Check::new(
        "psi row sums",
        row_fail,
        format!(
            "max |row sum - 1| = {:.3e} over {steps} steps (tolerance {TOL_ROW_SUM:e}){psi_note}",
            worst_row.0
        ),
    ));
    checks.push(Check::new(
        "psi nonnegativity",
        min_fail,
        format!(
            "min entry = {:.3e} (tolerance -{TOL_MIN_ENTRY:e}){psi_note}",
            if worst_min.0.is_finite() {
                worst_min.0
            } else {
                0.0
            }
        ),
    ));

    let fixed_gain = scenario.algorithm == Algorithm::B;
    let gain_bad = (0..steps).filter(|&k| {
        log.steps[k].iter().enumerate().any(|(i, s)| {
            let next = if fixed_gain { log.states[k][i].p } else { s.b };
            next * scenario.dt >= 1.0 || next <= 0.0 || log.states[k + 1][i].p != next
        })
    });
    checks.push(Check::new(
        "gain sequence",
        first_failure(gain_bad),
        if fixed_gain {
            "p stays fixed with 0 < p*T < 1".into()
        } else {
            "every logged b satisfies 0 < b*T < 1 and becomes the next p".into()
        },
    ));

    let vel_bad = (0..log.states.len()).filter(|&k| {
        log.states[k]
            .iter()
            .zip(&scenario.agents)
            .any(|(s, a)| !matches!(a.velocity_set.membership(&s.v), Ok(true)))
    });
    checks.push(Check::new(
        "velocity feasibility",
        first_failure(vel_bad),
        format!("every v lies in its velocity set (tolerance {TOL_MEM:e})"),
    ));

    if scenario.algorithm == Algorithm::B {
        let pos_bad = (0..log.states.len()).filter(|&k| {
            log.states[k].iter().zip(&scenario.agents).any(|(s, a)| {
                a.position_region
                    .as_ref()
                    .is_some_and(|h| !h.contains(&s.r, TOL_REGION))
            })
        });
        checks.push(Check::new(
            "position feasibility",
            first_failure(pos_bad),
            format!("every r lies in its position region (tolerance {TOL_REGION:e})"),
        ));
    }

    let positive_bad =
        (0..log.states.len()).filter(|&k| log.states[k].iter().any(|s| !(s.y > 0.0 && s.p > 0.0)));
    checks.push(Check::new(
        "positive y and p",
        first_failure(positive_bad),
        "y and p stay strictly positive".into(),
    ));

    checks.push(recompute_check(log, scenario));

    match scenario.algorithm {
        Algorithm::A => checks.push(replay_from_log(log, scenario)),
        Algorithm::B => checks.push(Check {
            name: "linear replay",
            status: CheckStatus::Skipped,
            detail: "the linear-system form is defined for Algorithm A only".into(),
        }),
    }
    checks
}

/// Re-executes every step from the logged pre-step state and compares the
/// successor and the logged sigma, b and branch.
fn recompute_check(log: &TrajectoryLog, scenario: &Scenario) -> Check {
    let mut worst = 0.0_f64;
    for k in 0..log.steps.len() {
        let bad = match step(k, &log.states[k], scenario) {
            Err(_) => true,
            Ok((next, rec)) => {
                let mut bad = false;
                for (i, (a, b)) in next.iter().zip(&log.states[k + 1]).enumerate() {
                    let d = (&a.r - &b.r)
                        .amax()
                        .max((&a.v - &b.v).amax())
                        .max((a.y - b.y).abs())
                        .max((a.p - b.p).abs());
                    worst = if d.is_nan() {
                        f64::INFINITY
                    } else {
                        worst.max(d)
                    };
                    let logged = &log.steps[k][i];
                    let ra = &rec.agents[i];
                    bad |= d > TOL_REPLAY
                        || (ra.sigma - logged.sigma).abs() > TOL_REPLAY
                        || (ra.b - logged.b).abs() > TOL_REPLAY
                        || ra.theta_branch != logged.theta_branch;
                }
                bad
            }
        };
        if bad {
            return Check::new(
                "step recomputation",
                Some(Some(k)),
                format!("re-running step {k} does not reproduce the log"),
            );
        }
    }
    Check::new(
        "step recomputation",
        None,
        format!(
            "re-running each step reproduces the log (max deviation {worst:.3e}, tolerance {TOL_REPLAY:e})"
        ),
    )
}

fn replay_from_log(log: &TrajectoryLog, scenario: &Scenario) -> Check {
    let mut records = Vec::with_capacity(log.steps.len());
    for k in 0..log.steps.len() {
        match step(k, &log.states[k], scenario) {
            Ok((_, mut rec)) => {
                // sigma and b come from the log; theta is only recoverable by recomputation
                for (a, logged) in rec.agents.iter_mut().zip(&log.steps[k]) {
                    a.sigma = logged.sigma;
                    a.b = logged.b;
                }
                records.push(rec);
            }
            Err(e) => {
                return Check::new("linear replay", Some(Some(k)), e.to_string());
            }
        }
    }
    match replay_records(&log_trajectory(log, scenario), &records, &scenario.schedule) {
        Ok(rep) => Check::new(
            "linear replay",
            first_failure(rep.failing_steps.iter().copied()),
            format!(
                "max |phi(k+1) - (Psi phi(k) - gradF)| = {:.3e} (tolerance {TOL_REPLAY:e})",
                rep.max_residual
            ),
        ),
        Err(e) => Check::new("linear replay", Some(None), e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::output::read_trajectory_csv;
    use crate::scenario::{scenario_paper_a, scenario_paper_b};

    fn round_trip(sc: &Scenario) -> TrajectoryLog {
        let traj = run(sc).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        read_trajectory_csv(buf.as_slice(), sc.n(), sc.m()).unwrap()
    }

    #[test]
    fn clean_logs_verify() {
        for mut sc in [scenario_paper_a(), scenario_paper_b()] {
            sc.horizon = 60;
            let checks = verify_log(&round_trip(&sc), &sc);
            assert!(checks.iter().all(Check::passed), "{checks:#?}");
        }
    }

    #[test]
    fn tampered_velocity_is_caught_at_its_step() {
        let mut sc = scenario_paper_a();
        sc.horizon = 40;
        let mut log = round_trip(&sc);
        log.states[17][3].v[0] = 1.2;
        let checks = verify_log(&log, &sc);
        let vel = checks
            .iter()
            .find(|c| c.name == "velocity feasibility")
            .unwrap();
        assert_eq!(vel.status, CheckStatus::Fail { step: Some(17) });
        let rec = checks
            .iter()
            .find(|c| c.name == "step recomputation")
            .unwrap();
        assert_eq!(rec.status, CheckStatus::Fail { step: Some(16) });
    }

    #[test]
    fn tampered_sigma_breaks_the_replay() {
        let mut sc = scenario_paper_a();
        sc.horizon = 40;
        let mut log = round_trip(&sc);
        log.steps[5][0].sigma *= 0.5;
        let checks = verify_log(&log, &sc);
        assert!(checks
            .iter()
            .any(|c| c.status == CheckStatus::Fail { step: Some(5) }));
    }

    #[test]
    fn analysis_reports_the_final_row() {
        let mut sc = scenario_paper_a();
        sc.horizon = 20;
        let traj = run(&sc).unwrap();
        let a = analyze(&sc, &traj, 0.0).unwrap();
        assert_eq!(a.summary.steps, 20);
        assert_eq!(a.metrics.rows.len(), 21);
        assert!(a.summary.replay_max_residual.unwrap() < TOL_REPLAY);
        assert!((a.summary.oracle_optimum[0] - 0.5).abs() < 1e-6);
    }
}
