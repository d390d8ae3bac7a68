//! Command-line front end: config ingestion, condition checks, solves,
//! relaxation-vs-MICP comparison and export.
//!
//! Exit codes: 0 success, 1 bad usage or malformed config, 2 some condition
//! inconclusive, 3 some condition fails, 4 solver failure.

pub mod config;
pub mod export;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lcvx::conditions::{check_all_with, ConditionReport, Verdict};
use lcvx::micp::solve_micp_bnb_with;
use lcvx::presets::DockingParams;
use lcvx::problem::{ProblemSpec, TerminalCost};
use lcvx::solver::{min_time_with, solve_fixed_tf_with, verify_lossless, FixedTfOutcome, Solution, SolveStats};

use crate::config::{load_config, ProblemConfig};
use crate::export::{
    write_json, write_solution, BnbSummary, Comparison, Diagnostics, SolveSummary, COMPARISON_JSON, DIAGNOSTICS_JSON,
    SUMMARY_JSON,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_FAILS: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "lcvx", version, about = "Convex trajectory optimization with semi-continuous inputs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the conditions under which the relaxation is exact.
    Check {
        config: PathBuf,
        /// Report file; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the relaxed problem and verify the result.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        horizon: Horizon,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Relaxed solve against branch-and-bound at a fixed horizon.
    Compare {
        config: PathBuf,
        #[arg(long)]
        tf: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print a ready-made config.
    Preset {
        name: PresetName,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(multiple = false)]
struct Horizon {
    /// Fixed final time, s.
    #[arg(long)]
    tf: Option<f64>,
    /// Search for the smallest feasible final time.
    #[arg(long)]
    min_time: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetName {
    Docking,
}

/// Runs one invocation and returns its exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Check { config, out } => check(&config, out.as_deref()),
        Command::Solve { config, horizon, out } => solve(&config, &horizon, &out),
        Command::Compare { config, tf, out } => compare(&config, tf, &out),
        Command::Preset { name: PresetName::Docking, out } => preset_docking(out.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}

enum Loaded {
    Ok(Box<(ProblemConfig, ProblemSpec)>),
    Failed(i32),
}

fn load(path: &Path) -> Loaded {
    let parsed = load_config(path).and_then(|cfg| cfg.to_spec().map(|spec| (cfg, spec)));
    match parsed {
        Ok(pair) => Loaded::Ok(Box::new(pair)),
        Err(e) => {
            eprintln!("error: malformed config {}: {e}", path.display());
            Loaded::Failed(EXIT_USAGE)
        }
    }
}

macro_rules! load_or_exit {
    ($path:expr) => {
        match load($path) {
            Loaded::Ok(pair) => *pair,
            Loaded::Failed(code) => return Ok(code),
        }
    };
}

/// Condition 4 needs a terminal point for quadratic costs; before a solve the
/// report then says inconclusive.
fn conditions(cfg: &ProblemConfig, spec: &ProblemSpec, sol: Option<&Solution>) -> ConditionReport {
    let point = sol.map(|s| (s.tf, &s.trajectory.x[s.steps]));
    check_all_with(spec, point, cfg.rank_tolerance())
}

fn exit_code(verdict: Verdict) -> i32 {
    match verdict {
        Verdict::Holds => EXIT_OK,
        Verdict::Inconclusive => EXIT_INCONCLUSIVE,
        Verdict::Fails => EXIT_FAILS,
    }
}

fn check(path: &Path, out: Option<&Path>) -> anyhow::Result<i32> {
    let (cfg, spec) = load_or_exit!(path);
    let report = conditions(&cfg, &spec, None);
    match out {
        Some(file) => {
            write_json(file, &report).with_context(|| format!("writing {}", file.display()))?;
            for c in &report.conditions {
                println!("condition {}: {:?}: {}", c.condition, c.verdict, c.detail);
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &report)?;
            writeln!(lock)?;
        }
    }
    Ok(exit_code(report.overall()))
}

fn warn_conditions(report: &ConditionReport) {
    for c in &report.conditions {
        if c.verdict != Verdict::Holds {
            eprintln!(
                "warning: condition {} {:?} ({}); exactness of the relaxation is not guaranteed, checking the result a posteriori",
                c.condition, c.verdict, c.detail
            );
        }
    }
}

fn diagnose(dir: &Path, command: &str, error: String, tf: Option<f64>, steps: usize, stats: Option<SolveStats>) -> i32 {
    eprintln!("error: {error}");
    let diag = Diagnostics {
        command: command.into(),
        error,
        tf,
        steps,
        stats,
    };
    let file = dir.join(DIAGNOSTICS_JSON);
    if let Err(e) = write_json(&file, &diag) {
        eprintln!("error: writing {}: {e}", file.display());
    }
    EXIT_SOLVER
}

/// Solution at a fixed horizon, or the diagnostics exit code.
fn fixed(
    dir: &Path,
    command: &str,
    spec: &ProblemSpec,
    cfg: &ProblemConfig,
    tf: f64,
) -> std::result::Result<Solution, i32> {
    match solve_fixed_tf_with(spec, tf, cfg.steps, &cfg.solver_settings()) {
        Ok(FixedTfOutcome::Optimal(sol)) => Ok(*sol),
        Ok(FixedTfOutcome::Infeasible { tf, stats }) => Err(diagnose(
            dir,
            command,
            format!("problem infeasible at t_f = {tf}"),
            Some(tf),
            cfg.steps,
            Some(stats),
        )),
        Err(e) => Err(diagnose(dir, command, e.to_string(), Some(tf), cfg.steps, None)),
    }
}

fn solve(path: &Path, horizon: &Horizon, out: &Path) -> anyhow::Result<i32> {
    let (cfg, spec) = load_or_exit!(path);
    let min_time = horizon.min_time
        || (horizon.tf.is_none()
            && cfg.tf.is_none()
            && spec.terminal.fixed_time().is_none()
            && spec.terminal.cost == TerminalCost::MinTime
            && cfg.search.is_some());
    let tf = horizon.tf.or(cfg.tf).or(spec.terminal.fixed_time());
    if !min_time {
        match tf {
            Some(tf) if tf.is_finite() && tf > 0.0 => {}
            Some(tf) => {
                eprintln!("error: --tf must be positive, got {tf}");
                return Ok(EXIT_USAGE);
            }
            None => {
                eprintln!("error: no horizon: pass --tf or --min-time, or set tf in the config");
                return Ok(EXIT_USAGE);
            }
        }
    }
    let search = match (min_time, cfg.search) {
        (true, None) => {
            eprintln!("error: malformed config {}: search: required for --min-time", path.display());
            return Ok(EXIT_USAGE);
        }
        (_, s) => s,
    };

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let start = Instant::now();
    let (sol, log) = if min_time {
        let s = search.expect("checked above");
        let bracket = (s.bracket[0], s.bracket[1]);
        match min_time_with(&spec, cfg.steps, bracket, s.tol_t, &cfg.solver_settings()) {
            Ok(r) => (r.solution, Some(r.search)),
            Err(e) => return Ok(diagnose(out, "solve", e.to_string(), None, cfg.steps, None)),
        }
    } else {
        match fixed(out, "solve", &spec, &cfg, tf.expect("checked above")) {
            Ok(sol) => (sol, None),
            Err(code) => return Ok(code),
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let report = conditions(&cfg, &spec, Some(&sol));
    warn_conditions(&report);

    let verification = verify_lossless(&sol, &spec, &cfg.verify_tolerances(&spec));
    let mode = if min_time { "min_time" } else { "fixed_tf" };
    let mut summary = SolveSummary::new(mode, &sol, &verification, spec.max_active, report.overall(), wall);
    summary.search = log;
    write_solution(out, "", &sol).with_context(|| format!("writing into {}", out.display()))?;
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    for w in &sol.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "t_f = {} s, cost = {}, conformance = {:.4}, cardinality {}, pointing {}, wall {:.2} s",
        sol.tf,
        sol.cost,
        verification.conformance,
        ok(verification.cardinality_ok),
        ok(verification.pointing_ok),
        wall
    );
    Ok(EXIT_OK)
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "VIOLATED"
    }
}

fn compare(path: &Path, tf: f64, out: &Path) -> anyhow::Result<i32> {
    let (cfg, spec) = load_or_exit!(path);
    if !(tf.is_finite() && tf > 0.0) {
        eprintln!("error: --tf must be positive, got {tf}");
        return Ok(EXIT_USAGE);
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let tols = cfg.verify_tolerances(&spec);

    let start = Instant::now();
    let relaxed = match fixed(out, "compare", &spec, &cfg, tf) {
        Ok(sol) => sol,
        Err(code) => return Ok(code),
    };
    let relaxed_wall = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let micp = match solve_micp_bnb_with(&spec, tf, cfg.steps, &cfg.bnb_options()) {
        Ok(r) => r,
        Err(e) => return Ok(diagnose(out, "compare", e.to_string(), Some(tf), cfg.steps, None)),
    };
    let micp_wall = start.elapsed().as_secs_f64();
    let Some(mi_sol) = micp.solution.as_ref() else {
        let msg = format!("branch-and-bound found no feasible pattern ({:?})", micp.status);
        return Ok(diagnose(out, "compare", msg, Some(tf), cfg.steps, None));
    };

    let report = conditions(&cfg, &spec, Some(&relaxed));
    warn_conditions(&report);
    let rel_report = verify_lossless(&relaxed, &spec, &tols);
    let rel_summary = SolveSummary::new("fixed_tf", &relaxed, &rel_report, spec.max_active, report.overall(), relaxed_wall);
    let mi_report = verify_lossless(mi_sol, &spec, &tols);
    let mut mi_summary = SolveSummary::new("micp", mi_sol, &mi_report, spec.max_active, report.overall(), micp_wall);
    mi_summary.bnb = Some(BnbSummary {
        status: micp.status,
        certified: micp.certified,
        stats: micp.stats.clone(),
    });
    let comparison = Comparison {
        tf,
        relaxed_cost: relaxed.cost,
        micp_cost: mi_sol.cost,
        relaxed_objective: relaxed.objective,
        micp_objective: mi_sol.objective,
        relative_gap: (relaxed.objective - mi_sol.objective).abs() / mi_sol.objective.abs().max(1.0),
        relaxed_wall_time: relaxed_wall,
        micp_wall_time: micp_wall,
        speedup: micp_wall / relaxed_wall.max(f64::MIN_POSITIVE),
        micp_status: micp.status,
        micp_certified: micp.certified,
        nodes_explored: micp.stats.nodes_explored,
    };
    write_solution(out, "relaxed_", &relaxed)?;
    write_solution(out, "micp_", mi_sol)?;
    write_json(&out.join(format!("relaxed_{SUMMARY_JSON}")), &rel_summary)?;
    write_json(&out.join(format!("micp_{SUMMARY_JSON}")), &mi_summary)?;
    write_json(&out.join(COMPARISON_JSON), &comparison)?;
    println!(
        "relaxed {} in {:.3} s, branch-and-bound {} in {:.3} s ({:?}, {} nodes), gap {:.2e}",
        relaxed.objective,
        relaxed_wall,
        mi_sol.objective,
        micp_wall,
        micp.status,
        micp.stats.nodes_explored,
        comparison.relative_gap
    );
    Ok(EXIT_OK)
}

fn preset_docking(out: Option<&Path>) -> anyhow::Result<i32> {
    let json = ProblemConfig::docking(&DockingParams::default()).to_json();
    match out {
        Some(file) => std::fs::write(file, json).with_context(|| format!("writing {}", file.display()))?,
        None => print!("{json}"),
    }
    Ok(EXIT_OK)
}
