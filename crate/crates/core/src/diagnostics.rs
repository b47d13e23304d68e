//! Linear-system view of Algorithm A and convergence metrics.
//!
//! Per coordinate, stacking `phi = [r_1, z_1, ..., r_n, z_n]` with
//! `z_i = r_i + (2/p_i) v_i` turns one step of the algorithm into
//! `phi(k+1) = Psi(k) phi(k) - gradF(k)`, where `Psi(k)` is row stochastic.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::Serialize;

use crate::engine::{AgentState, Algorithm, StepRecord, Trajectory};
use crate::error::DiagnosticsError;
use crate::geometry::Vector;
use crate::objectives::TeamObjective;
use crate::topology::{GraphSchedule, WeightedDigraph};

pub const TOL_ROW_SUM: f64 = 1e-9;
pub const TOL_MIN_ENTRY: f64 = 1e-12;
pub const TOL_REPLAY: f64 = 1e-9;
pub const TOL_PRODUCT_PER_FACTOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    /// `E(k+1) E(k)^-1`, block diagonal.
    pub e_ratio: DMatrix<f64>,
    /// Block diagonal of the per-agent `A_i`.
    pub a: DMatrix<f64>,
    /// Diagonal of `Lambda`: the shrink factors.
    pub lambda: DVector<f64>,
    pub w: Matrix2<f64>,
    pub laplacian: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl SystemMatrices {
    /// `A - (Lambda L) kron W`, the matrix whose nonzero entries are bounded
    /// away from zero.
    pub fn coupled(&self) -> DMatrix<f64> {
        let n = self.lambda.len();
        let mut out = self.a.clone();
        for i in 0..n {
            for j in 0..n {
                let c = self.lambda[i] * self.laplacian[(i, j)];
                for (a, b) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    out[(2 * i + a, 2 * j + b)] -= c * self.w[(a, b)];
                }
            }
        }
        out
    }
}

/// Assembles the system matrices from per-agent gains `p(k)`, `p(k+1)` and
/// shrink factors.
pub fn build_psi_from(
    p: &[f64],
    p_next: &[f64],
    sigma: &[f64],
    g: &WeightedDigraph,
    dt: f64,
) -> Result<SystemMatrices, DiagnosticsError> {
    let n = p.len();
    if p_next.len() != n || sigma.len() != n || g.n() != n {
        return Err(DiagnosticsError::Inconsistent(format!(
            "expected {n} agents throughout"
        )));
    }
    for i in 0..n {
        for (val, at_next) in [(p[i], false), (p_next[i], true)] {
            if !(val > 0.0) {
                return Err(DiagnosticsError::NonPositiveGain {
                    step: usize::from(at_next),
                    agent: i,
                    p: val,
                });
            }
        }
    }
    let mut e_ratio = DMatrix::zeros(2 * n, 2 * n);
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let (pk, b) = (p[i], p_next[i]);
        let ratio = pk / b;
        e_ratio[(2 * i, 2 * i)] = 1.0;
        e_ratio[(2 * i + 1, 2 * i)] = 1.0 - ratio;
        e_ratio[(2 * i + 1, 2 * i + 1)] = ratio;

        let half = pk * dt / 2.0;
        a[(2 * i, 2 * i)] = 1.0 - half;
        a[(2 * i, 2 * i + 1)] = half;
        a[(2 * i + 1, 2 * i)] = b * dt - half;
        a[(2 * i + 1, 2 * i + 1)] = 1.0 - b * dt + half;
    }
    let w = Matrix2::new(0.0, 0.0, dt, 0.0);
    let mut sys = SystemMatrices {
        e_ratio,
        a,
        lambda: DVector::from_column_slice(sigma),
        w,
        laplacian: g.laplacian(),
        psi: DMatrix::zeros(0, 0),
    };
    sys.psi = &sys.e_ratio * sys.coupled();
    Ok(sys)
}

/// System matrices for step `k`, from the pre-step states and the step's
/// record. The next gain is the logged `b`.
pub fn build_psi(
    states: &[AgentState],
    record: &StepRecord,
    g: &WeightedDigraph,
    dt: f64,
) -> Result<SystemMatrices, DiagnosticsError> {
    let p: Vec<f64> = states.iter().map(|s| s.p).collect();
    let b: Vec<f64> = record.agents.iter().map(|a| a.b).collect();
    let sigma: Vec<f64> = record.agents.iter().map(|a| a.sigma).collect();
    build_psi_from(&p, &b, &sigma, g, dt).map_err(|e| match e {
        DiagnosticsError::NonPositiveGain { agent, p, step } => DiagnosticsError::NonPositiveGain {
            step: record.k + step,
            agent,
            p,
        },
        other => other,
    })
}

pub fn psi_at(
    traj: &Trajectory,
    schedule: &GraphSchedule,
    k: usize,
) -> Result<SystemMatrices, DiagnosticsError> {
    let record = traj.records.get(k).ok_or(DiagnosticsError::RangeOutOfLog {
        from: k,
        to: k,
        len: traj.records.len(),
    })?;
    build_psi(&traj.states[k], record, schedule.graph_at(k), traj.dt)
}

/// Stacked `[r_1, z_1, ..., r_n, z_n]` in coordinate `c`.
pub fn phi(states: &[AgentState], c: usize) -> DVector<f64> {
    DVector::from_iterator(
        2 * states.len(),
        states
            .iter()
            .flat_map(|s| [s.r[c], s.r[c] + 2.0 / s.p * s.v[c]]),
    )
}

pub fn z_of(s: &AgentState) -> Vector {
    &s.r + &s.v * (2.0 / s.p)
}

/// The gradient input of the linear system in coordinate `c`: zero on the
/// position slots, `2 sigma theta / p(k+1)` on the `z` slots.
pub fn grad_input(record: &StepRecord, c: usize) -> DVector<f64> {
    DVector::from_iterator(
        2 * record.agents.len(),
        record
            .agents
            .iter()
            .flat_map(|a| [0.0, 2.0 * a.sigma * a.theta[c] / a.b]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub max_residual: f64,
    pub worst_step: usize,
    /// Steps whose replayed successor misses the logged one by more than
    /// the replay tolerance.
    pub failing_steps: Vec<usize>,
}

/// Compares the logged `phi(k+1)` against `Psi(k) phi(k) - gradF(k)` at every
/// step.
pub fn replay_check(
    traj: &Trajectory,
    schedule: &GraphSchedule,
) -> Result<ReplayReport, DiagnosticsError> {
    replay_records(traj, &traj.records, schedule)
}

/// Like [`replay_check`] but with externally supplied records (for example
/// ones recomputed from a log that does not store them).
pub fn replay_records(
    traj: &Trajectory,
    records: &[StepRecord],
    schedule: &GraphSchedule,
) -> Result<ReplayReport, DiagnosticsError> {
    if traj.algorithm != Algorithm::A {
        return Err(DiagnosticsError::NotAlgorithmA);
    }
    if traj.states.len() < records.len() + 1 {
        return Err(DiagnosticsError::Inconsistent(format!(
            "{} records but only {} states",
            records.len(),
            traj.states.len()
        )));
    }
    let m = traj.states[0].first().map_or(0, |s| s.r.len());
    let mut report = ReplayReport {
        max_residual: 0.0,
        worst_step: 0,
        failing_steps: Vec::new(),
    };
    for (k, record) in records.iter().enumerate() {
        let sys = build_psi(&traj.states[k], record, schedule.graph_at(k), traj.dt)?;
        let mut worst: f64 = 0.0;
        for c in 0..m {
            let predicted = &sys.psi * phi(&traj.states[k], c) - grad_input(record, c);
            let actual = phi(&traj.states[k + 1], c);
            let res = (predicted - actual).amax();
            worst = if res.is_nan() {
                f64::INFINITY
            } else {
                worst.max(res)
            };
        }
        if worst > report.max_residual {
            report.max_residual = worst;
            report.worst_step = k;
        }
        if worst > TOL_REPLAY {
            report.failing_steps.push(k);
        }
    }
    Ok(report)
}

/// `sum` with Neumaier compensation.
fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for t in terms {
        let next = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - next) + t;
        } else {
            comp += (t - next) + sum;
        }
        sum = next;
    }
    sum + comp
}

/// Matrix product with compensated inner sums.
pub fn compensated_mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.nrows(), "matrix shapes do not conform");
    DMatrix::from_fn(a.nrows(), b.ncols(), |i, j| {
        compensated_sum((0..a.ncols()).map(|l| a[(i, l)] * b[(l, j)]))
    })
}

/// `Gamma(to, from) = Psi(to) ... Psi(from)`.
pub fn transition_product(
    traj: &Trajectory,
    schedule: &GraphSchedule,
    from: usize,
    to: usize,
) -> Result<DMatrix<f64>, DiagnosticsError> {
    if from > to || to >= traj.records.len() {
        return Err(DiagnosticsError::RangeOutOfLog {
            from,
            to,
            len: traj.records.len(),
        });
    }
    let mut gamma = psi_at(traj, schedule, from)?.psi;
    for k in from + 1..=to {
        gamma = compensated_mul(&psi_at(traj, schedule, k)?.psi, &gamma);
    }
    Ok(gamma)
}

/// Largest deviation of a row sum from 1.
pub fn row_sum_error(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| (compensated_sum(r.iter().copied()) - 1.0).abs())
        .fold(0.0, f64::max)
}

pub fn min_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Column with the largest minimum entry, and that minimum.
pub fn best_positive_column(m: &DMatrix<f64>) -> (usize, f64) {
    m.column_iter()
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, v)| {
            if v > best.1 {
                (j, v)
            } else {
                best
            }
        })
}

fn min_nonzero_entry(m: &DMatrix<f64>) -> f64 {
    m.iter()
        .copied()
        .filter(|v| *v != 0.0)
        .map(f64::abs)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StochasticityReport {
    pub steps: usize,
    pub max_row_sum_err: f64,
    pub worst_row_sum_step: usize,
    pub min_entry: f64,
    pub worst_entry_step: usize,
    /// Running minimum of the smallest nonzero entry of `A - (Lambda L) kron W`.
    pub nonzero_floor: Vec<f64>,
    pub min_sigma: f64,
}

impl StochasticityReport {
    pub fn passes(&self) -> bool {
        self.max_row_sum_err <= TOL_ROW_SUM && self.min_entry >= -TOL_MIN_ENTRY
    }
}

pub fn stochasticity(
    traj: &Trajectory,
    schedule: &GraphSchedule,
) -> Result<StochasticityReport, DiagnosticsError> {
    let mut rep = StochasticityReport {
        steps: traj.records.len(),
        max_row_sum_err: 0.0,
        worst_row_sum_step: 0,
        min_entry: f64::INFINITY,
        worst_entry_step: 0,
        nonzero_floor: Vec::with_capacity(traj.records.len()),
        min_sigma: f64::INFINITY,
    };
    let mut floor = f64::INFINITY;
    for k in 0..traj.records.len() {
        let sys = psi_at(traj, schedule, k)?;
        let err = row_sum_error(&sys.psi);
        if err > rep.max_row_sum_err {
            rep.max_row_sum_err = err;
            rep.worst_row_sum_step = k;
        }
        let lo = min_entry(&sys.psi);
        if lo < rep.min_entry {
            rep.min_entry = lo;
            rep.worst_entry_step = k;
        }
        floor = floor.min(min_nonzero_entry(&sys.coupled()));
        rep.nonzero_floor.push(floor);
        rep.min_sigma = sys.lambda.iter().copied().fold(rep.min_sigma, f64::min);
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub from: usize,
    pub to: usize,
    pub row_sum_err: f64,
    pub min_entry: f64,
    pub positive_column: usize,
    /// Observed lower bound of the best column.
    pub mu_hat: f64,
}

impl WindowReport {
    pub fn passes(&self) -> bool {
        let factors = (self.to - self.from + 1) as f64;
        self.row_sum_err <= TOL_PRODUCT_PER_FACTOR * factors
            && self.min_entry >= -TOL_PRODUCT_PER_FACTOR * factors
            && self.mu_hat > 0.0
    }
}

/// Consecutive non-overlapping windows of `len` steps covering the log.
pub fn window_products(
    traj: &Trajectory,
    schedule: &GraphSchedule,
    len: usize,
) -> Result<Vec<WindowReport>, DiagnosticsError> {
    if len == 0 {
        return Err(DiagnosticsError::Inconsistent(
            "window length is zero".into(),
        ));
    }
    let mut out = Vec::new();
    let mut from = 0;
    while from + len <= traj.records.len() {
        let to = from + len - 1;
        let gamma = transition_product(traj, schedule, from, to)?;
        let (col, mu) = best_positive_column(&gamma);
        out.push(WindowReport {
            from,
            to,
            row_sum_err: row_sum_error(&gamma),
            min_entry: min_entry(&gamma),
            positive_column: col,
            mu_hat: mu,
        });
        from += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub consensus_spread: f64,
    pub optimality_gap: f64,
    pub y_ratio_spread: f64,
    pub state_envelope: f64,
    /// Absent at the final state, which has no step record.
    pub psi_row_sum_err: Option<f64>,
    pub psi_min_entry: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSeries {
    pub rows: Vec<MetricsRow>,
}

impl MetricsSeries {
    pub fn last(&self) -> &MetricsRow {
        self.rows.last().expect("series has the initial row")
    }

    pub fn max_envelope(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.state_envelope)
            .fold(0.0, f64::max)
    }

    pub fn max_psi_row_sum_err(&self) -> f64 {
        self.rows
            .iter()
            .filter_map(|r| r.psi_row_sum_err)
            .fold(0.0, f64::max)
    }
}

pub fn consensus_spread(states: &[AgentState]) -> f64 {
    let m = states.first().map_or(0, |s| s.r.len());
    (0..m)
        .map(|c| {
            let p = phi(states, c);
            p.max() - p.min()
        })
        .fold(0.0, f64::max)
}

pub fn mean_position(states: &[AgentState]) -> Vector {
    let m = states.first().map_or(0, |s| s.r.len());
    states.iter().fold(Vector::zeros(m), |acc, s| acc + &s.r) / states.len() as f64
}

pub fn y_ratio_spread(states: &[AgentState]) -> f64 {
    let (lo, hi) = states
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.y), hi.max(s.y))
        });
    hi / lo - 1.0
}

pub fn state_envelope(states: &[AgentState]) -> f64 {
    states
        .iter()
        .map(|s| s.r.norm().max(z_of(s).norm()))
        .fold(0.0, f64::max)
}

pub fn metrics(
    traj: &Trajectory,
    schedule: &GraphSchedule,
    team: &TeamObjective,
    oracle_opt: &Vector,
) -> Result<MetricsSeries, DiagnosticsError> {
    let bad = |e: crate::error::ObjectiveError| DiagnosticsError::Inconsistent(e.to_string());
    let opt_value = team.eval(oracle_opt).map_err(bad)?;
    let mut rows = Vec::with_capacity(traj.states.len());
    for (k, states) in traj.states.iter().enumerate() {
        let (row_err, lo) = if k < traj.records.len() {
            let sys = psi_at(traj, schedule, k)?;
            (Some(row_sum_error(&sys.psi)), Some(min_entry(&sys.psi)))
        } else {
            (None, None)
        };
        let gap = team.eval(&mean_position(states)).map_err(bad)? - opt_value;
        rows.push(MetricsRow {
            k,
            consensus_spread: consensus_spread(states),
            optimality_gap: gap.abs(),
            y_ratio_spread: y_ratio_spread(states),
            state_envelope: state_envelope(states),
            psi_row_sum_err: row_err,
            psi_min_entry: lo,
        });
    }
    Ok(MetricsSeries { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub stride: usize,
    pub start: usize,
    /// Largest `|gradF(k)|_inf` at or after `start`.
    pub epsilon: f64,
    pub slack: f64,
    pub checkpoints: Vec<(usize, f64)>,
    /// Checkpoints whose spread exceeds the previous one plus the slack.
    pub violations: Vec<usize>,
}

/// Samples `max_i phi_i - min_i phi_i` every `4 n eta` steps from `start`
/// and checks it never grows by more than `8 n (eta + 1) epsilon`.
pub fn spread_contraction(
    traj: &Trajectory,
    eta: usize,
    start: usize,
) -> Result<ContractionReport, DiagnosticsError> {
    let n = traj.n();
    let stride = 4 * n * eta;
    if stride == 0 || start > traj.records.len() {
        return Err(DiagnosticsError::RangeOutOfLog {
            from: start,
            to: traj.records.len(),
            len: traj.records.len(),
        });
    }
    let m = traj.states[0].first().map_or(0, |s| s.r.len());
    let epsilon = traj.records[start..]
        .iter()
        .flat_map(|rec| (0..m).map(move |c| grad_input(rec, c).amax()))
        .fold(0.0, f64::max);
    let slack = 8.0 * n as f64 * (eta as f64 + 1.0) * epsilon;
    let checkpoints: Vec<(usize, f64)> = (start..traj.states.len())
        .step_by(stride)
        .map(|k| (k, consensus_spread(&traj.states[k])))
        .collect();
    let violations = checkpoints
        .windows(2)
        .filter(|w| w[1].1 > w[0].1 + slack)
        .map(|w| w[1].0)
        .collect();
    Ok(ContractionReport {
        stride,
        start,
        epsilon,
        slack,
        checkpoints,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, AgentSpec, Scenario, TOL_EQ};
    use crate::geometry::{ConvexRegion, VelocitySet};
    use crate::objectives::ObjectiveFn;
    use crate::topology::Edge;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn pair() -> WeightedDigraph {
        WeightedDigraph::new(
            2,
            vec![
                Edge {
                    from: 0,
                    to: 1,
                    weight: 0.5,
                },
                Edge {
                    from: 1,
                    to: 0,
                    weight: 0.5,
                },
            ],
            1e-6,
        )
        .unwrap()
    }

    fn two_agent_scenario(horizon: usize) -> Scenario {
        let set = VelocitySet::new(
            vec![
                ConvexRegion::ball(v(&[0.0, 0.0]), 1.0).unwrap(),
                ConvexRegion::axis_box(v(&[-0.5, 0.0]), v(&[0.5, 1.5])).unwrap(),
            ],
            None,
        )
        .unwrap();
        let agent = |c: &[f64], r0: &[f64]| AgentSpec {
            objective: ObjectiveFn::quadratic(v(c), v(&[1.0, 1.0])).unwrap(),
            velocity_set: set.clone(),
            position_region: None,
            r0: v(r0),
            v0: v(&[0.0, 0.0]),
            y0: 1.0,
            p0: 1.5,
        };
        Scenario {
            name: "pair".into(),
            algorithm: Algorithm::A,
            dt: 0.2,
            horizon,
            schedule: GraphSchedule::constant(pair()),
            agents: vec![
                agent(&[1.0, 1.0], &[3.0, 0.0]),
                agent(&[0.0, 0.0], &[-3.0, 1.0]),
            ],
            tol_eq: TOL_EQ,
        }
    }

    #[test]
    fn isolated_agent_psi() {
        let (p, dt) = (1.5, 0.2);
        let sys = build_psi_from(&[p], &[p], &[1.0], &WeightedDigraph::empty(1), dt).unwrap();
        let h = p * dt / 2.0;
        assert_abs_diff_eq!(
            sys.psi,
            DMatrix::from_row_slice(2, 2, &[1.0 - h, h, h, 1.0 - h]),
            epsilon = 1e-15
        );
        assert!(matches!(
            build_psi_from(&[0.0], &[1.0], &[1.0], &WeightedDigraph::empty(1), dt),
            Err(DiagnosticsError::NonPositiveGain { .. })
        ));
    }

    #[test]
    fn replay_and_negative_control() {
        let sc = two_agent_scenario(300);
        let traj = run(&sc).unwrap();
        let rep = replay_check(&traj, &sc.schedule).unwrap();
        assert!(rep.max_residual < 1e-12, "{rep:?}");
        assert!(traj
            .records
            .iter()
            .any(|r| r.agents.iter().any(|a| a.theta.amax() > 0.0)));

        let mut broken = traj.clone();
        let k = broken
            .records
            .iter()
            .position(|r| r.agents[0].theta.amax() > 1e-6)
            .unwrap();
        broken.records[k].agents[0].theta.fill(0.0);
        let rep = replay_check(&broken, &sc.schedule).unwrap();
        assert!(rep.max_residual > 1e-9);
        assert_eq!(rep.failing_steps, vec![k]);
    }

    #[test]
    fn replay_rejects_algorithm_b() {
        let sc = two_agent_scenario(2);
        let mut traj = run(&sc).unwrap();
        traj.algorithm = Algorithm::B;
        assert_eq!(
            replay_check(&traj, &sc.schedule),
            Err(DiagnosticsError::NotAlgorithmA)
        );
    }

    #[test]
    fn optimum_replays_exactly() {
        let mut sc = two_agent_scenario(20);
        for a in &mut sc.agents {
            a.objective = ObjectiveFn::quadratic(v(&[0.2, 0.3]), v(&[1.0, 1.0])).unwrap();
            a.r0 = v(&[0.2, 0.3]);
        }
        let traj = run(&sc).unwrap();
        // Zero up to the rounding of (1 - pT/2) x + (pT/2) x.
        assert!(replay_check(&traj, &sc.schedule).unwrap().max_residual < 1e-15);
        let team =
            TeamObjective::new(sc.agents.iter().map(|a| a.objective.clone()).collect()).unwrap();
        let m = metrics(&traj, &sc.schedule, &team, &v(&[0.2, 0.3])).unwrap();
        assert_eq!(m.last().consensus_spread, 0.0);
        assert_eq!(m.last().optimality_gap, 0.0);
    }

    #[test]
    fn psi_is_stochastic_and_doubly_so_on_balanced_graphs() {
        let sc = two_agent_scenario(400);
        let traj = run(&sc).unwrap();
        let rep = stochasticity(&traj, &sc.schedule).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert!(rep.nonzero_floor.windows(2).all(|w| w[1] <= w[0]));
        assert!(*rep.nonzero_floor.last().unwrap() > 0.0);
        for k in [0, 10, 399] {
            let sys = psi_at(&traj, &sc.schedule, k).unwrap();
            if traj.records[k].agents.iter().all(|a| a.sigma == 1.0) {
                let cols = sys.psi.row_sum();
                for c in cols.iter() {
                    assert_abs_diff_eq!(*c, 1.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn transition_products() {
        let sc = two_agent_scenario(50);
        let traj = run(&sc).unwrap();
        assert_eq!(
            transition_product(&traj, &sc.schedule, 7, 7).unwrap(),
            psi_at(&traj, &sc.schedule, 7).unwrap().psi
        );
        let g = transition_product(&traj, &sc.schedule, 0, 49).unwrap();
        assert!(row_sum_error(&g) < 1e-8 * 50.0);
        assert!(best_positive_column(&g).1 > 0.0);
        assert!(transition_product(&traj, &sc.schedule, 10, 50).is_err());
        assert!(transition_product(&traj, &sc.schedule, 5, 4).is_err());
        let windows = window_products(&traj, &sc.schedule, 16).unwrap();
        assert_eq!(windows.len(), 3);
        assert!(windows.iter().all(WindowReport::passes));
    }

    #[test]
    fn metric_definitions() {
        let s = |r: &[f64], y: f64| AgentState {
            r: v(r),
            v: v(&[0.0, 0.0]),
            y,
            p: 1.5,
        };
        let states = vec![s(&[0.0, 0.0], 1.0), s(&[1.0, 0.0], 1.5)];
        assert_eq!(consensus_spread(&states), 1.0);
        assert_eq!(y_ratio_spread(&states), 0.5);
        assert_eq!(state_envelope(&states), 1.0);
        assert_eq!(mean_position(&states), v(&[0.5, 0.0]));
    }

    #[test]
    fn spread_contraction_on_pair() {
        let sc = two_agent_scenario(2000);
        let traj = run(&sc).unwrap();
        let rep = spread_contraction(&traj, 1, 200).unwrap();
        assert_eq!(rep.stride, 8);
        assert!(rep.violations.is_empty(), "{rep:?}");
    }

    proptest! {
        #[test]
        fn compensated_product_matches_plain(
            a in proptest::collection::vec(-1.0f64..1.0, 9),
            b in proptest::collection::vec(-1.0f64..1.0, 9),
        ) {
            let a = DMatrix::from_row_slice(3, 3, &a);
            let b = DMatrix::from_row_slice(3, 3, &b);
            let diff = (compensated_mul(&a, &b) - &a * &b).amax();
            prop_assert!(diff < 1e-14);
        }

        #[test]
        fn random_valid_records_give_stochastic_psi(
            p in proptest::collection::vec(1.0f64..2.4, 3),
            sigma in proptest::collection::vec(0.05f64..1.0, 3),
        ) {
            let dt = 0.2;
            // b = p + (1 - sigma)(1 - pT)/T, always in [p, 1/T)
            let b: Vec<f64> = p.iter().zip(&sigma).map(|(p, s)| p + (1.0 - s) * (1.0 - p * dt) / dt).collect();
            let ring = WeightedDigraph::new(3, vec![
                Edge { from: 0, to: 1, weight: 0.4 }, Edge { from: 1, to: 2, weight: 0.4 }, Edge { from: 2, to: 0, weight: 0.4 },
            ], 1e-6).unwrap();
            let sys = build_psi_from(&p, &b, &sigma, &ring, dt).unwrap();
            prop_assert!(row_sum_error(&sys.psi) < 1e-12);
            prop_assert!(min_entry(&sys.psi) >= -1e-12);
        }
    }
}
