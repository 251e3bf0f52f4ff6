//! The `lander` command line: solve, batch, verify and export.
//!
//! Tables on stdout report angles in degrees; every file written keeps
//! radians. `--json` prints the same rows as a JSON document.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::control::SwitchDirection;
use crate::error::{Error, Result};
use crate::model::Mode;
use crate::scenario::{
    export_trajectory, load_box, load_scenario, read_json, read_trajectory_csv, solve_batch, write_json, BatchSummary,
    Check, DomainBox, ExportFormat, Scenario, SolutionFile,
};
use crate::shooting::multi_start;

/// Process exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// Non-convergence, a failed oracle or a batch below `--min-rate`.
    SolverFailure = 2,
    ConfigError = 3,
    IoError = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Io { .. } => ExitStatus::IoError,
            Error::Config(_) | Error::Parse { .. } => ExitStatus::ConfigError,
            _ => ExitStatus::SolverFailure,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lander",
    version,
    about = "Fuel-optimal lunar landing trajectories by indirect shooting"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scenario JSON; the reference descent when omitted.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// unconstrained or vertical; overrides the scenario's mode.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed of the random starts (and of the sampled states in a batch).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print JSON instead of a table.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one scenario.
    Solve {
        /// Number of starts tried.
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Solve states sampled uniformly from a box.
    Batch {
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Box JSON; the default domain when omitted.
        #[arg(long = "box")]
        domain: Option<PathBuf>,
        /// Exit with status 2 below this convergence rate.
        #[arg(long, default_value_t = 0.9)]
        min_rate: f64,
        #[arg(long)]
        starts: Option<usize>,
    },
    /// Run oracle checks against a stored solution.
    Verify {
        #[arg(long)]
        solution: PathBuf,
        /// Trajectory CSV written alongside the solution.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// drift, replay, steering or costate; all when omitted.
        #[arg(long = "check")]
        checks: Vec<Check>,
    },
    /// Re-propagate a stored solution and write its trajectory.
    Export {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
}

/// Parses `args` (program name first) and runs the command, writing tables
/// to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let status = if e.use_stderr() {
                ExitStatus::ConfigError
            } else {
                ExitStatus::Success
            };
            // Help and version go to stdout, usage errors to stderr.
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return status;
        }
    };
    match execute(&cli, out, err) {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            ExitStatus::of_error(&e)
        }
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<ExitStatus> {
    let g = &cli.global;
    match &cli.command {
        Command::Solve { starts } => cmd_solve(g, *starts, out, err),
        Command::Batch {
            n,
            domain,
            min_rate,
            starts,
        } => cmd_batch(g, *n, domain.as_deref(), *min_rate, *starts, out, err),
        Command::Verify {
            solution,
            trajectory,
            checks,
        } => cmd_verify(g, solution, trajectory.as_deref(), checks, out),
        Command::Export { solution, format } => cmd_export(g, solution, *format, out),
    }
}

fn load_template(g: &GlobalArgs) -> Result<(Scenario, Mode)> {
    let mut scenario = match &g.scenario {
        Some(path) => load_scenario(path)?,
        None => Scenario::reference(g.mode.unwrap_or(Mode::Unconstrained)),
    };
    if let Some(mode) = g.mode {
        scenario.mode = mode;
    }
    let mode = scenario.mode;
    Ok((scenario, mode))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Prints `rows` as aligned `key value` lines, or as one JSON object.
fn print_fields(out: &mut dyn Write, json: bool, rows: &[(&str, Value)]) -> Result<()> {
    if json {
        let map: serde_json::Map<String, Value> = rows.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        writeln!(out, "{}", Value::Object(map)).map_err(stdout_error)
    } else {
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in rows {
            let text = match v {
                Value::String(s) => s.clone(),
                Value::Array(items) => items.iter().map(plain).collect::<Vec<_>>().join(" "),
                other => other.to_string(),
            };
            writeln!(out, "{k:<width$}  {text}").map_err(stdout_error)?;
        }
        Ok(())
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Object(o) => o.values().map(plain).collect::<Vec<_>>().join(":"),
        other => other.to_string(),
    }
}

/// Prints a table with a header row, or a JSON array of row objects.
fn print_table(out: &mut dyn Write, json: bool, header: &[&str], rows: &[Vec<Value>]) -> Result<()> {
    if json {
        let array: Vec<Value> = rows
            .iter()
            .map(|r| Value::Object(header.iter().map(|h| h.to_string()).zip(r.iter().cloned()).collect()))
            .collect();
        return writeln!(out, "{}", Value::Array(array)).map_err(stdout_error);
    }
    let cells: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(plain).collect()).collect();
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| cells.iter().map(|r| r[i].len()).chain([h.len()]).max().unwrap_or(0))
        .collect();
    let line = |items: Vec<&str>| {
        items
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    writeln!(out, "{}", line(header.to_vec())).map_err(stdout_error)?;
    for r in &cells {
        writeln!(out, "{}", line(r.iter().map(String::as_str).collect())).map_err(stdout_error)?;
    }
    Ok(())
}

fn direction_label(d: SwitchDirection) -> &'static str {
    match d {
        SwitchDirection::OffToOn => "off-on",
        SwitchDirection::OnToOff => "on-off",
    }
}

fn cmd_solve(g: &GlobalArgs, starts: Option<usize>, out: &mut dyn Write, err: &mut dyn Write) -> Result<ExitStatus> {
    let (scenario, mode) = load_template(g)?;
    let n_starts = starts.unwrap_or(scenario.solver.n_starts);
    let seed = g.seed.unwrap_or(scenario.solver.seed);
    let rep = multi_start(&scenario, mode, n_starts, seed)?;
    let solution = SolutionFile::from_report(&scenario, mode, &rep);
    let s = &solution.summary;
    let switches: Vec<Value> = s
        .switches
        .iter()
        .map(|w| json!({ "time_s": w.time, "direction": direction_label(w.direction) }))
        .collect();
    print_fields(
        out,
        g.json,
        &[
            ("mode", json!(mode.as_str())),
            ("converged", json!(solution.converged)),
            ("final_time_s", json!(s.final_time)),
            ("final_mass_kg", json!(s.final_mass)),
            ("final_theta_deg", json!(s.final_theta.to_degrees())),
            ("fuel_used_kg", json!(s.fuel_used)),
            ("switches", Value::Array(switches)),
            ("final_speed_mps", json!(s.final_speed)),
            ("final_miss_m", json!(s.final_miss)),
            ("max_abs_hamiltonian", json!(s.max_abs_hamiltonian)),
            ("iterations", json!(s.iterations)),
            ("residual_norm", json!(s.residual_norm)),
            ("start_index", json!(s.start_index)),
        ],
    )?;
    if let Some(dir) = &g.out {
        create_dir(dir)?;
        write_json(&solution, dir.join("solution.json"))?;
        export_trajectory(&rep.trajectory, dir.join("trajectory.csv"), ExportFormat::Csv)?;
    }
    if !solution.converged {
        let _ = writeln!(
            err,
            "error: solve did not converge (|residual| = {:e})",
            s.residual_norm
        );
        return Ok(ExitStatus::SolverFailure);
    }
    Ok(ExitStatus::Success)
}

fn cmd_batch(
    g: &GlobalArgs,
    n: usize,
    domain: Option<&Path>,
    min_rate: f64,
    starts: Option<usize>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<ExitStatus> {
    if !(0.0..=1.0).contains(&min_rate) {
        return Err(Error::Config(format!("--min-rate must lie in [0, 1] (got {min_rate})")));
    }
    let (mut template, mode) = load_template(g)?;
    if let Some(k) = starts {
        template.solver.n_starts = k;
    }
    let domain = match domain {
        Some(path) => load_box(path)?,
        None => DomainBox::default(),
    };
    let seed = g.seed.unwrap_or(template.solver.seed);
    let cases = solve_batch(&template, &domain, n, seed, mode)?;
    if let Some(dir) = &g.out {
        create_dir(dir)?;
        for case in &cases {
            if let Some(rep) = &case.report {
                let path = dir.join(format!("case_{:03}.csv", case.record.index));
                export_trajectory(&rep.trajectory, path, ExportFormat::Csv)?;
            }
        }
    }
    let summary = BatchSummary::from_records(mode, seed, domain, cases.into_iter().map(|c| c.record).collect());
    if let Some(dir) = &g.out {
        write_json(&summary, dir.join("summary.json"))?;
    }
    print_batch(out, g.json, &summary)?;
    if summary.convergence_rate < min_rate {
        let _ = writeln!(
            err,
            "error: convergence rate {:.3} below --min-rate {min_rate}",
            summary.convergence_rate
        );
        return Ok(ExitStatus::SolverFailure);
    }
    Ok(ExitStatus::Success)
}

fn print_batch(out: &mut dyn Write, json: bool, summary: &BatchSummary) -> Result<()> {
    if json {
        // Same content as the table: per-case rows plus the totals.
        let doc = json!({
            "mode": summary.mode.as_str(),
            "seed": summary.seed,
            "n_total": summary.n_total,
            "n_converged": summary.n_converged,
            "n_infeasible": summary.n_infeasible,
            "convergence_rate": summary.convergence_rate,
            "cases": batch_rows(summary)
                .into_iter()
                .map(|r| Value::Object(BATCH_HEADER.iter().map(|h| h.to_string()).zip(r).collect()))
                .collect::<Vec<_>>(),
        });
        return writeln!(out, "{doc}").map_err(stdout_error);
    }
    print_table(out, false, &BATCH_HEADER, &batch_rows(summary))?;
    writeln!(
        out,
        "converged {}/{} ({:.1}%), infeasible {}",
        summary.n_converged,
        summary.n_total,
        100.0 * summary.convergence_rate,
        summary.n_infeasible
    )
    .map_err(stdout_error)
}

const BATCH_HEADER: [&str; 7] = [
    "case",
    "status",
    "final_time_s",
    "final_mass_kg",
    "final_theta_deg",
    "final_speed_mps",
    "final_miss_m",
];

fn batch_rows(summary: &BatchSummary) -> Vec<Vec<Value>> {
    summary
        .cases
        .iter()
        .map(|c| {
            let status = serde_json::to_value(c.status).unwrap_or(Value::Null);
            let fmt = |v: f64, prec: usize| json!(format!("{v:.prec$}"));
            match &c.solution {
                Some(s) => vec![
                    json!(c.index),
                    status,
                    fmt(s.final_time, 4),
                    fmt(s.final_mass, 2),
                    json!(format!("{:.2e}", s.final_theta.to_degrees())),
                    json!(format!("{:.2e}", s.final_speed)),
                    json!(format!("{:.2e}", s.final_miss)),
                ],
                None => {
                    let mut row = vec![json!(c.index), status];
                    row.extend(std::iter::repeat_n(json!("-"), 5));
                    row
                }
            }
        })
        .collect()
}

fn cmd_verify(
    g: &GlobalArgs,
    solution: &Path,
    trajectory: Option<&Path>,
    checks: &[Check],
    out: &mut dyn Write,
) -> Result<ExitStatus> {
    let sol: SolutionFile = read_json(solution)?;
    let table = match trajectory {
        Some(path) => Some(read_trajectory_csv(path, sol.mode)?),
        None => None,
    };
    let checks = if checks.is_empty() { &Check::ALL[..] } else { checks };
    let reports = crate::scenario::verify_solution(&sol, table.as_ref(), checks)?;
    let rows: Vec<Vec<Value>> = reports
        .iter()
        .map(|r| {
            vec![
                json!(r.name),
                json!(format!("{:.3e}", r.max_error)),
                json!(format!("{:.3e}", r.tolerance)),
                json!(r.samples),
                json!(if r.passed { "pass" } else { "FAIL" }),
            ]
        })
        .collect();
    print_table(
        out,
        g.json,
        &["check", "max_error", "tolerance", "samples", "result"],
        &rows,
    )?;
    Ok(if reports.iter().all(|r| r.passed) {
        ExitStatus::Success
    } else {
        ExitStatus::SolverFailure
    })
}

fn cmd_export(g: &GlobalArgs, solution: &Path, format: ExportFormat, out: &mut dyn Write) -> Result<ExitStatus> {
    let sol: SolutionFile = read_json(solution)?;
    let traj = sol.replay()?;
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&dir)?;
    let name = match format {
        ExportFormat::Csv => "trajectory.csv",
        ExportFormat::Json => "trajectory.json",
    };
    let path = dir.join(name);
    export_trajectory(&traj, &path, format)?;
    print_fields(
        out,
        g.json,
        &[("path", json!(path.display().to_string())), ("rows", json!(traj.len()))],
    )?;
    Ok(ExitStatus::Success)
}
