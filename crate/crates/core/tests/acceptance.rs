//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::fs::File;
use std::io::{BufReader, Read};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarm_opt::diagnostics::{
    metrics, replay_check, spread_contraction, stochasticity, window_products, MetricsSeries,
};
use swarm_opt::engine::{run, Scenario, Trajectory};
use swarm_opt::geometry::{sample_directions, ConvexRegion, TOL_PROJ};
use swarm_opt::objectives::{minimize_team, ObjectiveFn, TeamObjective};
use swarm_opt::report::{oracle_optimum, team_objective};
use swarm_opt::scenario::{
    paper_objectives, paper_position_regions, paper_velocity_set, scenario_paper_a,
    scenario_paper_b,
};
use swarm_opt::Vector;

const MEAN_TOL: f64 = 0.1;
const SPREAD_TOL: f64 = 0.05;
const REGION_TOL: f64 = 1e-9;
const ROW_SUM_TOL: f64 = 1e-9;
const MIN_ENTRY_TOL: f64 = 1e-12;
const REPLAY_TOL: f64 = 1e-9;
const Y_RATIO_TOL: f64 = 0.02;
const ENVELOPE_FACTOR: f64 = 10.0;
const SHRINK_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-5;
const OPT_GRAD_TOL: f64 = 1e-6;
const OPT_A_TOL: f64 = 1e-6;
const OPT_B_TOL: f64 = 1e-4;
const SAMPLES: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Run {
    scenario: Scenario,
    traj: Trajectory,
    series: MetricsSeries,
    opt: Vector,
}

fn full_run(scenario: Scenario) -> Run {
    let traj = run(&scenario).expect("run completes");
    let opt = oracle_optimum(&scenario).expect("oracle converges");
    let series = metrics(&traj, &scenario.schedule, &team_objective(&scenario), &opt)
        .expect("metrics are defined");
    Run {
        scenario,
        traj,
        series,
        opt,
    }
}

fn mean_error(r: &Run) -> f64 {
    let last = r.traj.states.last().unwrap();
    let mean = last.iter().fold(Vector::zeros(2), |acc, s| acc + &s.r) / last.len() as f64;
    (mean - &r.opt).norm()
}

fn criterion_1(a: &Run) -> Outcome {
    let spread = a.series.last().consensus_spread;
    let err = mean_error(a);
    let gaps: Vec<f64> = a.series.rows.iter().map(|r| r.optimality_gap).collect();
    let averages: Vec<(usize, f64)> = (1000..=gaps.len() - 10)
        .map(|k| (k, gaps[k..k + 10].iter().sum::<f64>() / 10.0))
        .collect();
    let rises: Vec<usize> = averages
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| w[1].0)
        .collect();
    let pass = spread < SPREAD_TOL && err < MEAN_TOL && rises.is_empty();
    outcome(
        pass,
        format!(
            "consensus_spread = {spread:.4e} (< {SPREAD_TOL}), |mean r - optimum| = {err:.4e} (< {MEAN_TOL}), \
             optimality-gap moving average rises at {} of {} windows after step 1000{}",
            rises.len(),
            averages.len().saturating_sub(1),
            rises.first().map(|k| format!(" (first at window start {k})")).unwrap_or_default()
        ),
    )
}

fn criterion_2(b: &Run) -> Outcome {
    let err = mean_error(b);
    let mut region_worst: (f64, usize) = (0.0, 0);
    let mut velocity_bad: Option<usize> = None;
    for (k, states) in b.traj.states.iter().enumerate() {
        for (s, spec) in states.iter().zip(&b.scenario.agents) {
            let h = spec.position_region.as_ref().expect("constrained scenario");
            let d = (h.project(&s.r).unwrap() - &s.r).norm();
            if d > region_worst.0 {
                region_worst = (d, k);
            }
            if velocity_bad.is_none() && !spec.velocity_set.membership(&s.v).unwrap() {
                velocity_bad = Some(k);
            }
        }
    }
    let pass = err < MEAN_TOL && region_worst.0 <= REGION_TOL && velocity_bad.is_none();
    outcome(
        pass,
        format!(
            "|mean r - optimum| = {err:.4e} (< {MEAN_TOL}), max distance to H_i = {:.3e} at step {} (<= {REGION_TOL:e}), \
             velocity violations: {}",
            region_worst.0,
            region_worst.1,
            velocity_bad.map_or("none".to_string(), |k| format!("first at step {k}"))
        ),
    )
}

fn criterion_3(a: &Run) -> Outcome {
    let st = stochasticity(&a.traj, &a.scenario.schedule).unwrap();
    let eta = a.scenario.topology_report().eta_steps;
    let len = 4 * a.scenario.n() * eta;
    let windows = window_products(&a.traj, &a.scenario.schedule, len).unwrap();
    let failing: Vec<usize> = windows
        .iter()
        .filter(|w| !w.passes())
        .map(|w| w.from)
        .collect();
    let min_gamma = windows
        .iter()
        .map(|w| w.min_entry)
        .fold(f64::INFINITY, f64::min);
    let min_mu = windows
        .iter()
        .map(|w| w.mu_hat)
        .fold(f64::INFINITY, f64::min);
    let worst_gamma_row = windows.iter().map(|w| w.row_sum_err).fold(0.0, f64::max);
    let step_pass = st.max_row_sum_err <= ROW_SUM_TOL && st.min_entry >= -MIN_ENTRY_TOL;
    let pass = step_pass && failing.is_empty() && !windows.is_empty();
    outcome(
        pass,
        format!(
            "{} steps: max |row sum - 1| = {:.3e} (<= {ROW_SUM_TOL:e}), min entry = {:.3e} (>= -{MIN_ENTRY_TOL:e}); \
             {} windows of {len} steps (eta = {eta}): max row-sum error {worst_gamma_row:.3e}, \
             min entry {min_gamma:.3e}, smallest positive-column bound {min_mu:.3e}, failing windows {failing:?}; \
             observed min sigma {:.6}",
            st.steps,
            st.max_row_sum_err,
            st.min_entry,
            windows.len(),
            st.min_sigma,
        ),
    )
}

fn criterion_4(a: &Run) -> Outcome {
    let rep = replay_check(&a.traj, &a.scenario.schedule).unwrap();
    outcome(
        rep.max_residual < REPLAY_TOL && rep.failing_steps.is_empty(),
        format!(
            "max replay residual = {:.3e} at step {} (< {REPLAY_TOL:e}) over {} steps",
            rep.max_residual,
            rep.worst_step,
            a.traj.steps()
        ),
    )
}

fn criterion_5(a: &Run) -> Outcome {
    let dt = a.scenario.dt;
    let (mut decreasing, mut too_large, mut sigma_bad) = (0usize, 0usize, 0usize);
    let mut first: Option<usize> = None;
    for k in 0..a.traj.steps() {
        let mut bad = false;
        for (i, s) in a.traj.states[k + 1].iter().enumerate() {
            if s.p < a.traj.states[k][i].p {
                decreasing += 1;
                bad = true;
            }
            if s.p * dt >= 1.0 {
                too_large += 1;
                bad = true;
            }
            let rec = &a.traj.records[k].agents[i];
            if rec.theta.iter().any(|x| *x != 0.0) && rec.sigma != 1.0 {
                sigma_bad += 1;
                bad = true;
            }
        }
        if bad && first.is_none() {
            first = Some(k);
        }
    }
    let p_max = a
        .traj
        .states
        .last()
        .unwrap()
        .iter()
        .map(|s| s.p)
        .fold(0.0, f64::max);
    outcome(
        decreasing + too_large + sigma_bad == 0,
        format!(
            "p decreases: {decreasing}, p*T >= 1: {too_large}, sigma != 1 with theta != 0: {sigma_bad}; final max p = {p_max}{}",
            first.map(|k| format!("; first violation at step {k}")).unwrap_or_default()
        ),
    )
}

fn criterion_6(a: &Run) -> Outcome {
    let end = a.series.rows[50_000].y_ratio_spread;
    let early = a.series.rows[5_000].y_ratio_spread;
    outcome(
        end < Y_RATIO_TOL && end < early,
        format!(
            "y_ratio_spread at step 50000 = {end:.4e} (< {Y_RATIO_TOL}), at step 5000 = {early:.4e}"
        ),
    )
}

fn criterion_7(a: &Run, b: &Run) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, r) in [("A", a), ("B", b)] {
        let init = r.series.rows[0].state_envelope;
        let max = r.series.max_envelope();
        let finite = r
            .series
            .rows
            .iter()
            .all(|row| row.state_envelope.is_finite());
        pass &= finite && max <= ENVELOPE_FACTOR * init;
        parts.push(format!(
            "{name}: max {max:.4} vs initial {init:.4} (ratio {:.3})",
            max / init
        ));
    }
    outcome(
        pass,
        format!("{} (<= {ENVELOPE_FACTOR}x)", parts.join(", ")),
    )
}

fn nonexpansive(
    region: &ConvexRegion,
    rng: &mut ChaCha8Rng,
    dim: usize,
    slack: f64,
) -> (usize, f64) {
    let mut bad = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..SAMPLES {
        let x = Vector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
        let y = Vector::from_fn(dim, |_, _| rng.random_range(-5.0..5.0));
        let excess =
            (region.project(&x).unwrap() - region.project(&y).unwrap()).norm() - (&x - &y).norm();
        worst = worst.max(excess);
        if excess > slack {
            bad += 1;
        }
    }
    (bad, worst)
}

fn criterion_8() -> Outcome {
    let set = paper_velocity_set();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let d = Vector::from_row_slice(&[angle.cos(), angle.sin()]);
        let analytic = set.max_segment_beta(&d).unwrap();
        let bisection = set.max_segment_beta_bisection(&d).unwrap();
        worst = worst.max((analytic - bisection).abs());
    }
    // the grid of sampled directions too, which includes the box corners
    for d in sample_directions(2, SAMPLES) {
        let gap =
            (set.max_segment_beta(&d).unwrap() - set.max_segment_beta_bisection(&d).unwrap()).abs();
        worst = worst.max(gap);
    }
    let slack = 10.0 * TOL_PROJ;
    let ball = ConvexRegion::ball(Vector::from_row_slice(&[0.5, -1.0, 0.25]), 1.3).unwrap();
    let bx = ConvexRegion::axis_box(
        Vector::from_row_slice(&[-1.0, -2.0, 0.0]),
        Vector::from_row_slice(&[1.0, 0.5, 3.0]),
    )
    .unwrap();
    let poly = ConvexRegion::halfspaces(
        vec![
            Vector::from_row_slice(&[1.0, 0.0, 0.0]),
            Vector::from_row_slice(&[0.0, 1.0, 0.0]),
            Vector::from_row_slice(&[-1.0, -1.0, 1.0]) / 3.0_f64.sqrt(),
        ],
        vec![1.0, 1.0, 1.0],
        Vector::zeros(3),
    )
    .unwrap();
    let mut parts = Vec::new();
    let mut bad_total = 0;
    for (name, region) in [("ball", &ball), ("box", &bx), ("3-halfspace", &poly)] {
        let (bad, w) = nonexpansive(region, &mut rng, 3, slack);
        bad_total += bad;
        parts.push(format!("{name} {bad} violations (max excess {w:.2e})"));
    }
    outcome(
        worst <= SHRINK_TOL && bad_total == 0,
        format!(
            "shrink analytic vs bisection max |beta difference| = {worst:.3e} over {} directions (<= {SHRINK_TOL:e}); \
             nonexpansiveness on {SAMPLES} pairs each: {}",
            2 * SAMPLES,
            parts.join(", ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut fns: Vec<(String, ObjectiveFn)> = paper_objectives()
        .into_iter()
        .enumerate()
        .map(|(i, f)| (format!("f{}", i + 1), f))
        .collect();
    fns.push(("sum".into(), ObjectiveFn::sum(paper_objectives()).unwrap()));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut worst_name = String::new();
    for _ in 0..SAMPLES {
        let x = Vector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
        for (name, f) in &fns {
            let g = f.gradient(&x).unwrap();
            let fd = f.finite_diff_gradient(&x, 1e-5).unwrap();
            let rel = (&g - &fd).amax() / g.amax().max(1.0);
            if rel > worst {
                worst = rel;
                worst_name = name.clone();
            }
        }
    }
    let team = TeamObjective::new(paper_objectives()).unwrap();
    let a = minimize_team(&team, &[]).unwrap();
    let grad_norm = team.gradient(&a).unwrap().norm();
    let mut regions = paper_position_regions();
    regions.dedup();
    let b = minimize_team(&team, &regions).unwrap();
    let ea = (&a - Vector::from_row_slice(&[0.5, 0.5])).amax();
    let eb = (&b - Vector::from_row_slice(&[-0.5, 0.5])).amax();
    outcome(
        worst <= GRAD_REL_TOL && grad_norm < OPT_GRAD_TOL && ea <= OPT_A_TOL && eb <= OPT_B_TOL,
        format!(
            "max relative gradient error {worst:.3e} ({worst_name}) over {SAMPLES} points x {} objectives (<= {GRAD_REL_TOL:e}); \
             unconstrained optimum [{:.8}, {:.8}] with |grad| = {grad_norm:.2e} (< {OPT_GRAD_TOL:e}), error {ea:.2e} (<= {OPT_A_TOL:e}); \
             constrained optimum [{:.6}, {:.6}], error {eb:.2e} (<= {OPT_B_TOL:e})",
            fns.len(),
            a[0],
            a[1],
            b[0],
            b[1]
        ),
    )
}

fn same_bytes(a: &std::path::Path, b: &std::path::Path) -> std::io::Result<bool> {
    let (mut fa, mut fb) = (
        BufReader::new(File::open(a)?),
        BufReader::new(File::open(b)?),
    );
    let (mut ba, mut bb) = (vec![0u8; 1 << 16], vec![0u8; 1 << 16]);
    loop {
        let na = fa.read(&mut ba)?;
        let mut nb = 0;
        while nb < na {
            let got = fb.read(&mut bb[nb..na])?;
            if got == 0 {
                return Ok(false);
            }
            nb += got;
        }
        if na == 0 {
            return Ok(fb.read(&mut bb)? == 0);
        }
        if ba[..na] != bb[..na] {
            return Ok(false);
        }
    }
}

fn criterion_10() -> Outcome {
    let scn = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_A.scn");
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for sub in ["first", "second"] {
        let out = dir.path().join(sub);
        let status = Command::new(env!("CARGO_BIN_EXE_swarm-opt"))
            .arg("run")
            .arg(&scn)
            .arg("--no-plots")
            .arg("--out")
            .arg(&out)
            .env_remove("SWARM_OPT_OUT")
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("run failed: {}", String::from_utf8_lossy(&status.stderr)),
            );
        }
        paths.push(out.join("trajectory.csv"));
    }
    let size = std::fs::metadata(&paths[0]).map(|m| m.len()).unwrap_or(0);
    let same = same_bytes(&paths[0], &paths[1]).unwrap();
    outcome(
        same,
        format!("two full runs of paper_A.scn: trajectory CSVs ({size} bytes) identical = {same}"),
    )
}

fn main() {
    let started = Instant::now();
    let a = full_run(scenario_paper_a());
    let b = full_run(scenario_paper_b());
    let contraction =
        spread_contraction(&a.traj, a.scenario.topology_report().eta_steps, 1000).ok();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "scenario A convergence", criterion_1(&a)),
        (2, "scenario B convergence and feasibility", criterion_2(&b)),
        (
            3,
            "stochasticity of Psi and windowed products",
            criterion_3(&a),
        ),
        (4, "transformation replay", criterion_4(&a)),
        (5, "gain recursion", criterion_5(&a)),
        (6, "stepsize ratio", criterion_6(&a)),
        (7, "boundedness", criterion_7(&a, &b)),
        (8, "geometry oracle equivalence", criterion_8()),
        (9, "gradient checks and team optima", criterion_9()),
        (10, "determinism", criterion_10()),
    ];
    println!();
    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {}: {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if let Some(c) = contraction {
        println!(
            "note: spread checkpoints every {} steps from step {}: {} growths beyond the slack {:.3e}",
            c.stride,
            c.start,
            c.violations.len(),
            c.slack
        );
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
