//! CSV logs, the JSON run summary, and SVG metric plots.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{MetricsRow, MetricsSeries};
use crate::engine::{AgentState, ThetaBranch, Trajectory};
use crate::geometry::Vector;

/// Seventeen significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

pub fn trajectory_header(m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "agent".to_string()];
    h.extend((1..=m).map(|c| format!("r_{c}")));
    h.extend((1..=m).map(|c| format!("v_{c}")));
    h.extend(["y", "p", "sigma", "b", "theta_branch"].map(String::from));
    h
}

/// One row per step and agent; the step-record columns are blank on the
/// final state.
pub fn write_trajectory_csv<W: Write>(out: W, traj: &Trajectory) -> std::io::Result<()> {
    let m = traj.states[0].first().map_or(0, |s| s.r.len());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(m)).map_err(csv_err)?;
    let mut row = Vec::with_capacity(2 * m + 7);
    for (k, states) in traj.states.iter().enumerate() {
        let rec = traj.records.get(k);
        for (i, s) in states.iter().enumerate() {
            row.clear();
            row.push(k.to_string());
            row.push((i + 1).to_string());
            row.extend(s.r.iter().map(|x| fmt_f64(*x)));
            row.extend(s.v.iter().map(|x| fmt_f64(*x)));
            row.push(fmt_f64(s.y));
            row.push(fmt_f64(s.p));
            match rec.map(|r| &r.agents[i]) {
                Some(a) => {
                    row.push(fmt_f64(a.sigma));
                    row.push(fmt_f64(a.b));
                    row.push(a.theta_branch.as_str().to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()
}

/// Per-step quantities recoverable from a trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedStep {
    pub sigma: f64,
    pub b: f64,
    pub theta_branch: ThetaBranch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub states: Vec<Vec<AgentState>>,
    /// `steps[k][i]`, one entry per step that has a record.
    pub steps: Vec<Vec<LoggedStep>>,
}

#[derive(Debug, thiserror::Error)]
#[error("malformed trajectory log at line {line}: {message}")]
pub struct LogError {
    pub line: usize,
    pub message: String,
}

pub fn read_trajectory_csv<R: Read>(
    input: R,
    n: usize,
    m: usize,
) -> Result<TrajectoryLog, LogError> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| LogError {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(String::from)
        .collect();
    if header != trajectory_header(m) {
        return Err(LogError {
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut log = TrajectoryLog {
        states: Vec::new(),
        steps: Vec::new(),
    };
    let mut tails: Vec<Vec<Option<LoggedStep>>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let bad = |message: String| LogError { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |j: usize| -> Result<f64, LogError> {
            let s = rec.get(j).unwrap_or("");
            let x: f64 = s
                .parse()
                .map_err(|_| bad(format!("column {} is not a number: {s:?}", header[j])))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(bad(format!("column {} is not finite", header[j])))
            }
        };
        let int = |j: usize| -> Result<usize, LogError> {
            rec.get(j)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(format!("column {} is not an index", header[j])))
        };
        let (k, agent) = (int(0)?, int(1)?);
        if k != idx / n || agent != idx % n + 1 {
            return Err(bad(format!(
                "expected step {} agent {}, found step {k} agent {agent}",
                idx / n,
                idx % n + 1
            )));
        }
        let coords = |off: usize| -> Result<Vector, LogError> {
            let xs = (0..m)
                .map(|c| num(off + c))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Vector::from_vec(xs))
        };
        let state = AgentState {
            r: coords(2)?,
            v: coords(2 + m)?,
            y: num(2 * m + 2)?,
            p: num(2 * m + 3)?,
        };
        let tail = if rec.iter().skip(2 * m + 4).all(str::is_empty) {
            None
        } else {
            let branch = rec.get(2 * m + 6).unwrap_or("");
            Some(LoggedStep {
                sigma: num(2 * m + 4)?,
                b: num(2 * m + 5)?,
                theta_branch: ThetaBranch::parse(branch)
                    .ok_or_else(|| bad(format!("unknown theta_branch {branch:?}")))?,
            })
        };
        if agent == 1 {
            log.states.push(Vec::with_capacity(n));
            tails.push(Vec::with_capacity(n));
        }
        log.states[k].push(state);
        tails[k].push(tail);
    }
    if log.states.is_empty() || log.states.last().map(Vec::len) != Some(n) {
        return Err(LogError {
            line: 0,
            message: "log ends with an incomplete step".into(),
        });
    }
    let last = tails.len() - 1;
    for (k, row) in tails.into_iter().enumerate() {
        let complete = row.iter().all(Option::is_some);
        let blank = row.iter().all(Option::is_none);
        if k == last && !blank {
            return Err(LogError {
                line: 2 + k * n,
                message: "final state carries step record columns".into(),
            });
        }
        if k < last {
            if !complete {
                return Err(LogError {
                    line: 2 + k * n,
                    message: format!("step {k} is missing step record columns"),
                });
            }
            log.steps.push(row.into_iter().flatten().collect());
        }
    }
    Ok(log)
}

pub const METRICS_HEADER: [&str; 7] = [
    "k",
    "consensus_spread",
    "optimality_gap",
    "y_ratio_spread",
    "state_envelope",
    "psi_row_sum_err",
    "psi_min_entry",
];

pub fn write_metrics_csv<W: Write>(out: W, series: &MetricsSeries) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in &series.rows {
        w.write_record([
            r.k.to_string(),
            fmt_f64(r.consensus_spread),
            fmt_f64(r.optimality_gap),
            fmt_f64(r.y_ratio_spread),
            fmt_f64(r.state_envelope),
            opt(r.psi_row_sum_err),
            opt(r.psi_min_entry),
        ])
        .map_err(csv_err)?;
    }
    w.flush()
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>, LogError> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let bad = |message: String| LogError { line, message };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |j: usize| -> Result<f64, LogError> {
            rec.get(j)
                .unwrap_or("")
                .parse()
                .map_err(|_| bad(format!("column {} is not a number", METRICS_HEADER[j])))
        };
        let opt = |j: usize| -> Result<Option<f64>, LogError> {
            match rec.get(j).unwrap_or("") {
                "" => Ok(None),
                _ => num(j).map(Some),
            }
        };
        rows.push(MetricsRow {
            k: num(0)? as usize,
            consensus_spread: num(1)?,
            optimality_gap: num(2)?,
            y_ratio_spread: num(3)?,
            state_envelope: num(4)?,
            psi_row_sum_err: opt(5)?,
            psi_min_entry: opt(6)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub algorithm: String,
    pub final_consensus_spread: f64,
    pub final_optimality_gap: f64,
    pub final_y_ratio_spread: f64,
    pub max_state_envelope: f64,
    pub psi_max_row_sum_err: f64,
    /// Absent for Algorithm B, where the linear replay does not apply.
    pub replay_max_residual: Option<f64>,
    pub final_mean_position: Vec<f64>,
    pub oracle_optimum: Vec<f64>,
    pub steps: usize,
    pub wall_time: f64,
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const MARGIN: f64 = 56.0;
const MAX_POINTS: usize = 2000;

/// Line plot of one metric column against `k`; log-scaled when every value
/// is positive.
pub fn svg_plot(title: &str, points: &[(f64, f64)]) -> String {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1.is_finite()).collect();
    let log_scale = !pts.is_empty() && pts.iter().all(|p| p.1 > 0.0);
    let ty = |y: f64| if log_scale { y.log10() } else { y };
    let stride = pts.len().div_ceil(MAX_POINTS).max(1);
    let sampled: Vec<(f64, f64)> = pts
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == pts.len())
        .map(|(_, &(x, y))| (x, ty(y)))
        .collect();
    let (x0, x1) = sampled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (y0, y1) = sampled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| MARGIN + (x - x0) / sx * (PLOT_W - 2.0 * MARGIN);
    let py = |y: f64| PLOT_H - MARGIN - (y - y0) / sy * (PLOT_H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        PLOT_W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN
    );
    if !sampled.is_empty() {
        let label = |y: f64| {
            if log_scale {
                format!("1e{y:.1}")
            } else {
                format!("{y:.3e}")
            }
        };
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            MARGIN,
            label(y1)
        );
        let _ = writeln!(
            s,
            r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{}</text>"#,
            PLOT_H - MARGIN,
            label(y0)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">k = {}</text>"#,
            PLOT_W - MARGIN,
            PLOT_H - MARGIN + 16.0,
            x1
        );
        let mut d = String::new();
        for (i, &(x, y)) in sampled.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if i == 0 { "M" } else { " L" },
                px(x),
                py(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<path d="{d}" stroke="steelblue" stroke-width="1.2" fill="none"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// One SVG per metric column, rendered from the metrics CSV text alone.
pub fn plots_from_metrics_csv(text: &str) -> Result<Vec<(String, String)>, LogError> {
    let rows = read_metrics_csv(text.as_bytes())?;
    type Column = (&'static str, fn(&MetricsRow) -> Option<f64>);
    let cols: [Column; 6] = [
        ("consensus_spread", |r| Some(r.consensus_spread)),
        ("optimality_gap", |r| Some(r.optimality_gap)),
        ("y_ratio_spread", |r| Some(r.y_ratio_spread)),
        ("state_envelope", |r| Some(r.state_envelope)),
        ("psi_row_sum_err", |r| r.psi_row_sum_err),
        ("psi_min_entry", |r| r.psi_min_entry),
    ];
    Ok(cols
        .iter()
        .map(|(name, get)| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|r| get(r).map(|y| (r.k as f64, y)))
                .collect();
            (format!("{name}.svg"), svg_plot(name, &pts))
        })
        .collect())
}
