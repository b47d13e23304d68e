use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use swarm_opt::engine::run_with_partial;
use swarm_opt::error::EngineError;
use swarm_opt::output::read_trajectory_csv;
use swarm_opt::report::{analyze, verify_log, write_outputs, write_trajectory_file};
use swarm_opt::scenario::{
    load_scenario, scenario_paper_a, scenario_paper_b, Outputs, ScenarioFile,
};

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(
    name = "swarm-opt",
    version,
    about = "Distributed optimization for double-integrator swarms"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory, metrics, summary and plots.
    Run {
        scenario: PathBuf,
        /// Override the scenario's horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Output directory.
        #[arg(long, env = "SWARM_OPT_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Check a trajectory log against its scenario.
    Verify {
        trajectory_csv: PathBuf,
        scenario: PathBuf,
    },
    /// Run several scenarios concurrently, each into `<out>/<file stem>`.
    Sweep {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, env = "SWARM_OPT_OUT", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        no_plots: bool,
    },
    /// Write the bundled example scenarios.
    InitExamples {
        #[arg(long, default_value = "scenarios")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            horizon,
            out,
            no_plots,
        } => run_one(&scenario, horizon, &out, !no_plots, ""),
        Command::Verify {
            trajectory_csv,
            scenario,
        } => verify(&trajectory_csv, &scenario),
        Command::Sweep {
            scenarios,
            horizon,
            out,
            no_plots,
        } => sweep(&scenarios, horizon, &out, !no_plots),
        Command::InitExamples { dir } => init_examples(&dir),
    };
    ExitCode::from(code)
}

fn run_one(path: &Path, horizon: Option<usize>, out: &Path, plots: bool, tag: &str) -> u8 {
    let mut loaded = match load_scenario(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{tag}error: {}: {e}", path.display());
            return EXIT_INVALID;
        }
    };
    if let Some(h) = horizon {
        loaded.scenario.horizon = h;
    }
    let sc = &loaded.scenario;
    let started = Instant::now();
    let traj = match run_with_partial(sc) {
        Ok(t) => t,
        Err(failure) => {
            eprintln!("{tag}error: {}", failure.error);
            if matches!(failure.error, EngineError::InvalidScenario(_)) {
                return EXIT_INVALID;
            }
            let dest = out.join(&loaded.outputs.trajectory_csv);
            let written = fs::create_dir_all(out)
                .and_then(|_| write_trajectory_file(&dest, &failure.partial));
            match written {
                Ok(()) => eprintln!(
                    "{tag}partial trajectory ({} steps) written to {}",
                    failure.partial.steps(),
                    dest.display()
                ),
                Err(e) => eprintln!("{tag}error: cannot write {}: {e}", dest.display()),
            }
            return EXIT_RUNTIME;
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let analysis = match analyze(sc, &traj, wall) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{tag}error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = write_outputs(out, &loaded.outputs, &traj, &analysis, plots) {
        eprintln!(
            "{tag}error: cannot write outputs under {}: {e}",
            out.display()
        );
        return EXIT_INVALID;
    }
    let s = &analysis.summary;
    println!(
        "{tag}{}: {} steps in {:.2}s, consensus spread {:.3e}, optimality gap {:.3e}, outputs in {}",
        s.scenario,
        s.steps,
        s.wall_time,
        s.final_consensus_spread,
        s.final_optimality_gap,
        out.display()
    );
    0
}

fn verify(log_path: &Path, scenario_path: &Path) -> u8 {
    let loaded = match load_scenario(scenario_path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario_path.display());
            return EXIT_INVALID;
        }
    };
    let sc = &loaded.scenario;
    let file = match fs::File::open(log_path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", log_path.display());
            return EXIT_INVALID;
        }
    };
    let log = match read_trajectory_csv(std::io::BufReader::new(file), sc.n(), sc.m()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {}: {e}", log_path.display());
            return EXIT_INVALID;
        }
    };
    let checks = verify_log(&log, sc);
    for c in &checks {
        println!("{}", c.line());
    }
    if checks.iter().all(|c| c.passed()) {
        0
    } else {
        EXIT_INVALID
    }
}

fn sweep(paths: &[PathBuf], horizon: Option<usize>, out: &Path, plots: bool) -> u8 {
    let dirs: Vec<PathBuf> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = p
                .file_stem()
                .map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
            let clash = paths[..i].iter().any(|q| q.file_stem() == p.file_stem());
            out.join(if clash { format!("{stem}-{i}") } else { stem })
        })
        .collect();
    let codes: Vec<u8> = std::thread::scope(|s| {
        let handles: Vec<_> = paths
            .iter()
            .zip(&dirs)
            .map(|(p, d)| {
                let tag = format!("[{}] ", p.display());
                s.spawn(move || run_one(p, horizon, d, plots, &tag))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(EXIT_RUNTIME))
            .collect()
    });
    codes.into_iter().max().unwrap_or(0)
}

fn init_examples(dir: &Path) -> u8 {
    if let Err(e) = fs::create_dir_all(dir) {
        eprintln!("error: cannot create {}: {e}", dir.display());
        return EXIT_INVALID;
    }
    for sc in [scenario_paper_a(), scenario_paper_b()] {
        let path = dir.join(format!("{}.scn", sc.name));
        let text = ScenarioFile::from_scenario(&sc, Outputs::default(), None).to_json();
        if let Err(e) = fs::write(&path, text) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_INVALID;
        }
        println!("wrote {}", path.display());
    }
    0
}
