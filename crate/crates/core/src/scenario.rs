//! Scenario configuration, reference cases, batch runs and file output.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::control::SwitchRecord;
use crate::error::{Error, Result};
use crate::model::{braking_floor, ControlSample, LanderState, Mode, RegularizationParams, VehicleEnv};
use crate::ode::{propagate, IntegratorConfig, Trajectory};
use crate::oracle::{hamiltonian_drift_check, steering_grid_check, trajectory_costate_check, OracleReport};
use crate::shooting::{min_altitude, multi_start, ShootingUnknowns, SolveReport, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub initial_state: LanderState,
    #[serde(default)]
    pub env: VehicleEnv,
    #[serde(default)]
    pub reg: RegularizationParams,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_mode() -> Mode {
    Mode::Unconstrained
}

impl Scenario {
    pub fn new(initial_state: LanderState, mode: Mode) -> Self {
        Self {
            initial_state,
            env: VehicleEnv::default(),
            reg: RegularizationParams::default(),
            mode,
            integrator: IntegratorConfig::default(),
            solver: SolverOptions::default(),
        }
    }

    /// Reference descent from 145 m altitude.
    pub fn reference(mode: Mode) -> Self {
        Self::new(LanderState::new(-61.0, 145.0, 14.0, -28.0, 9444.0), mode)
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.initial_state;
        if !x.is_finite() {
            return Err(Error::Config("initial_state must be finite".into()));
        }
        if x.z <= 0.0 {
            return Err(Error::Config(format!("initial z > 0 violated (z = {})", x.z)));
        }
        if x.m <= 0.0 {
            return Err(Error::Config(format!("initial m > 0 violated (m = {})", x.m)));
        }
        self.env.validate()?;
        self.reg.validate()?;
        self.integrator.validate()?;
        self.solver.validate()
    }
}

/// Reads and validates a scenario file. Omitted sections take their defaults.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario(&text, path)
}

/// Parses scenario JSON; `origin` only labels error messages.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Per-component sampling intervals for initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainBox {
    /// Horizontal range [m].
    pub y0: [f64; 2],
    /// Altitude [m].
    pub z0: [f64; 2],
    /// Horizontal speed [m/s].
    pub vy0: [f64; 2],
    /// Vertical speed [m/s].
    pub vz0: [f64; 2],
    /// Mass [kg].
    pub m0: [f64; 2],
}

impl Default for DomainBox {
    fn default() -> Self {
        Self {
            y0: [-125.0, 600.0],
            z0: [50.0, 1500.0],
            vy0: [-50.0, 10.0],
            vz0: [-100.0, 10.0],
            m0: [9050.0, 9450.0],
        }
    }
}

impl DomainBox {
    fn intervals(&self) -> [(&'static str, [f64; 2]); 5] {
        [
            ("y0", self.y0),
            ("z0", self.z0),
            ("vy0", self.vy0),
            ("vz0", self.vz0),
            ("m0", self.m0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.intervals() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("box.{name} must be finite")));
            }
            if lo > hi {
                return Err(Error::Config(format!("box.{name}: lo <= hi violated ({lo} > {hi})")));
            }
        }
        if self.z0[0] <= 0.0 {
            return Err(Error::Config("box.z0 must lie above the surface".into()));
        }
        if self.m0[0] <= 0.0 {
            return Err(Error::Config("box.m0 must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: &LanderState) -> bool {
        self.intervals()
            .iter()
            .zip(x.to_array())
            .all(|((_, [lo, hi]), v)| (*lo..=*hi).contains(&v))
    }

    /// One state drawn uniformly and independently per component.
    pub fn sample(&self, rng: &mut impl Rng) -> LanderState {
        let v = self.intervals().map(|(_, [lo, hi])| rng.gen_range(lo..=hi));
        LanderState::from_slice(&v)
    }
}

/// Reads a [`DomainBox`] from JSON.
pub fn load_box(path: impl AsRef<Path>) -> Result<DomainBox> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let b: DomainBox = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    b.validate()?;
    Ok(b)
}

/// Initial states and per-case solver seeds of a batch, in case order.
pub fn batch_cases(domain: &DomainBox, n: usize, seed: u64) -> Vec<(LanderState, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x = domain.sample(&mut rng);
            (x, rng.gen())
        })
        .collect()
}

/// Headline numbers of a converged solve. Angles in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSummary {
    pub final_time: f64,
    pub final_mass: f64,
    pub final_theta: f64,
    pub switches: Vec<SwitchRecord>,
    pub fuel_used: f64,
    /// `|v(t_f)|` [m/s].
    pub final_speed: f64,
    /// `|r(t_f)|` [m].
    pub final_miss: f64,
    pub min_altitude: f64,
    pub max_abs_hamiltonian: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub start_index: usize,
}

impl SolutionSummary {
    pub fn from_report(rep: &SolveReport) -> Self {
        let last = rep.trajectory.final_state().copied().unwrap_or_default();
        Self {
            final_time: rep.trajectory.final_time(),
            final_mass: rep.final_mass(),
            final_theta: rep.final_theta(),
            switches: rep.switches(),
            fuel_used: rep.fuel_used,
            final_speed: last.speed(),
            final_miss: last.range(),
            min_altitude: min_altitude(&rep.trajectory),
            max_abs_hamiltonian: hamiltonian_drift_check(&rep.trajectory).max_error,
            iterations: rep.iterations,
            residual_norm: rep.residual_norm,
            start_index: rep.start_index,
        }
    }
}

/// How a batch case ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Converged,
    /// Full braking cannot stop the descent above the surface.
    Infeasible,
    /// The solver converged but the Hamiltonian drifted past the oracle bound.
    DriftRejected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub index: usize,
    pub initial_state: LanderState,
    pub seed: u64,
    pub status: CaseStatus,
    pub converged: bool,
    /// Lowest altitude reachable under full braking [m].
    pub braking_floor: f64,
    pub solution: Option<SolutionSummary>,
    pub message: Option<String>,
}

/// Minimum, mean and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            n += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (n > 0).then(|| Stats {
            min,
            mean: sum / n as f64,
            max,
        })
    }
}

/// Statistics over the converged cases of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub final_time: Option<Stats>,
    pub final_mass: Option<Stats>,
    pub fuel_used: Option<Stats>,
    /// Statistics of `|theta(t_f)|` [rad].
    pub abs_final_theta: Option<Stats>,
    pub final_speed: Option<Stats>,
    pub final_miss: Option<Stats>,
}

impl Aggregates {
    pub fn from_solutions<'a>(solutions: impl Iterator<Item = &'a SolutionSummary> + Clone) -> Self {
        let of = |f: fn(&SolutionSummary) -> f64| Stats::of(solutions.clone().map(f));
        Self {
            final_time: of(|s| s.final_time),
            final_mass: of(|s| s.final_mass),
            fuel_used: of(|s| s.fuel_used),
            abs_final_theta: of(|s| s.final_theta.abs()),
            final_speed: of(|s| s.final_speed),
            final_miss: of(|s| s.final_miss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSummary {
    pub mode: Mode,
    pub seed: u64,
    pub domain: DomainBox,
    pub n_total: usize,
    pub n_converged: usize,
    pub n_infeasible: usize,
    pub convergence_rate: f64,
    pub aggregates: Aggregates,
    pub cases: Vec<CaseRecord>,
}

impl BatchSummary {
    pub fn from_records(mode: Mode, seed: u64, domain: DomainBox, cases: Vec<CaseRecord>) -> Self {
        let n_total = cases.len();
        let n_converged = cases.iter().filter(|c| c.converged).count();
        let n_infeasible = cases.iter().filter(|c| c.status == CaseStatus::Infeasible).count();
        let aggregates =
            Aggregates::from_solutions(cases.iter().filter(|c| c.converged).filter_map(|c| c.solution.as_ref()));
        Self {
            mode,
            seed,
            domain,
            n_total,
            n_converged,
            n_infeasible,
            convergence_rate: if n_total == 0 {
                0.0
            } else {
                n_converged as f64 / n_total as f64
            },
            aggregates,
            cases,
        }
    }
}

/// One finished batch case with its solve report, when there is one.
#[derive(Debug, Clone)]
pub struct BatchCase {
    pub record: CaseRecord,
    pub report: Option<SolveReport>,
}

/// Thread count requested through `LANDER_THREADS`, if set.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var("LANDER_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "LANDER_THREADS must be a positive integer (got {s:?})"
            ))),
        },
    }
}

fn run_case(template: &Scenario, mode: Mode, index: usize, x0: LanderState, seed: u64) -> BatchCase {
    let scenario = Scenario {
        initial_state: x0,
        mode,
        ..template.clone()
    };
    let floor = braking_floor(&x0, &scenario.env);
    let mut record = CaseRecord {
        index,
        initial_state: x0,
        seed,
        status: CaseStatus::Failed,
        converged: false,
        braking_floor: floor,
        solution: None,
        message: None,
    };
    match multi_start(&scenario, mode, scenario.solver.n_starts, seed) {
        Ok(rep) => {
            let drift = hamiltonian_drift_check(&rep.trajectory);
            record.converged = rep.converged && drift.passed;
            record.status = if record.converged {
                CaseStatus::Converged
            } else {
                CaseStatus::DriftRejected
            };
            if !drift.passed {
                record.message = Some(format!("max |H| = {:e}", drift.max_error));
            }
            record.solution = Some(SolutionSummary::from_report(&rep));
            BatchCase {
                record,
                report: Some(rep),
            }
        }
        Err(e) => {
            if matches!(e, Error::Infeasible { .. }) {
                record.status = CaseStatus::Infeasible;
            }
            record.message = Some(e.to_string());
            BatchCase { record, report: None }
        }
    }
}

/// Solves `n` cases sampled from `domain`, with every setting except the
/// initial state taken from `template`. Cases run in parallel; the result is
/// in case order and does not depend on the thread count.
pub fn solve_batch(template: &Scenario, domain: &DomainBox, n: usize, seed: u64, mode: Mode) -> Result<Vec<BatchCase>> {
    if n == 0 {
        return Err(Error::Config("batch size n must be >= 1".into()));
    }
    domain.validate()?;
    template.env.validate()?;
    template.reg.validate()?;
    template.integrator.validate()?;
    template.solver.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = thread_limit()? {
        builder = builder.num_threads(threads);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker threads: {e}")))?;
    let cases = batch_cases(domain, n, seed);
    Ok(pool.install(|| {
        cases
            .into_par_iter()
            .enumerate()
            .map(|(i, (x0, s))| run_case(template, mode, i, x0, s))
            .collect()
    }))
}

/// Batch with default vehicle, regularization and solver settings.
pub fn run_batch(domain: &DomainBox, n: usize, seed: u64, mode: Mode) -> Result<BatchSummary> {
    let template = Scenario::reference(mode);
    let cases = solve_batch(&template, domain, n, seed, mode)?;
    Ok(BatchSummary::from_records(
        mode,
        seed,
        *domain,
        cases.into_iter().map(|c| c.record).collect(),
    ))
}

/// File layouts accepted by [`export_trajectory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!(
                "unknown export format {other:?} (expected csv or json)"
            ))),
        }
    }
}

/// Column names of the trajectory CSV, in order.
pub const CSV_HEADER: [&str; 11] = ["t", "y", "z", "vy", "vz", "m", "theta", "u", "S", "H", "Delta"];

/// One stored trajectory sample. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRow {
    pub t: f64,
    pub y: f64,
    pub z: f64,
    pub vy: f64,
    pub vz: f64,
    pub m: f64,
    pub theta: f64,
    pub u: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "Delta")]
    pub delta: f64,
}

impl TrajectoryRow {
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.t, self.y, self.z, self.vy, self.vz, self.m, self.theta, self.u, self.s, self.h, self.delta,
        ]
    }

    pub fn state(&self) -> LanderState {
        LanderState::new(self.y, self.z, self.vy, self.vz, self.m)
    }
}

/// Trajectory samples as written to and read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryTable {
    pub mode: Mode,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let rows = (0..traj.len())
            .map(|i| {
                let x = traj.states[i];
                let c = traj.controls[i];
                TrajectoryRow {
                    t: traj.times[i],
                    y: x.y,
                    z: x.z,
                    vy: x.vy,
                    vz: x.vz,
                    m: x.m,
                    theta: c.theta,
                    u: c.u,
                    s: traj.switching_values[i],
                    h: traj.hamiltonian_values[i],
                    delta: traj.delta_values[i],
                }
            })
            .collect();
        Self { mode: traj.mode, rows }
    }

    /// Sample-only trajectory (no costates, no dense output) for the checks
    /// that need nothing more, such as the Hamiltonian drift.
    pub fn to_trajectory(&self, env: VehicleEnv, reg: RegularizationParams) -> Trajectory {
        let mut traj = Trajectory::from_samples(env, reg, self.mode);
        for r in &self.rows {
            traj.times.push(r.t);
            traj.states.push(r.state());
            traj.controls.push(ControlSample::new(r.u, r.theta));
            traj.switching_values.push(r.s);
            traj.hamiltonian_values.push(r.h);
            traj.delta_values.push(r.delta);
        }
        traj
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

/// Writes the stored samples of `traj`. CSV values carry 17 significant
/// digits, so reading them back is exact.
pub fn export_trajectory(traj: &Trajectory, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    if traj.is_empty() {
        return Err(Error::domain("cannot export an empty trajectory"));
    }
    create_parent(path)?;
    let table = TrajectoryTable::from_trajectory(traj);
    match format {
        ExportFormat::Csv => write_csv(&table, path),
        ExportFormat::Json => write_json(&table, path),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

fn write_csv(table: &TrajectoryTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(CSV_HEADER).map_err(|e| csv_error(path, e))?;
    for row in &table.rows {
        let fields = row.to_array().map(|v| format!("{v:.16e}"));
        w.write_record(&fields).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON, creating parent directories as needed.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads JSON written by [`write_json`].
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads a trajectory CSV. The header must match [`CSV_HEADER`] exactly.
/// The file does not record the mode, so the caller supplies it.
pub fn read_trajectory_csv(path: impl AsRef<Path>, mode: Mode) -> Result<TrajectoryTable> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!(
                "unexpected header {:?}, expected {}",
                header.iter().collect::<Vec<_>>(),
                CSV_HEADER.join(",")
            ),
        });
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<TrajectoryRow>, _>>()
        .map_err(|e| csv_error(path, e))?;
    Ok(TrajectoryTable { mode, rows })
}

/// Everything needed to reproduce and check a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub scenario: Scenario,
    pub mode: Mode,
    pub unknowns: ShootingUnknowns,
    /// Integrator settings of the final propagation.
    pub integrator: IntegratorConfig,
    pub converged: bool,
    pub summary: SolutionSummary,
}

impl SolutionFile {
    pub fn from_report(scenario: &Scenario, mode: Mode, rep: &SolveReport) -> Self {
        Self {
            scenario: scenario.clone(),
            mode,
            unknowns: rep.unknowns,
            integrator: rep.integrator,
            converged: rep.converged,
            summary: SolutionSummary::from_report(rep),
        }
    }

    /// Re-propagates the stored extremal with the recorded integrator settings.
    pub fn replay(&self) -> Result<Trajectory> {
        propagate(
            &self.scenario.initial_state,
            &self.unknowns.costate(),
            self.unknowns.tf,
            &self.scenario.env,
            &self.scenario.reg,
            self.mode,
            &self.integrator,
        )
    }
}

/// Oracle suites runnable against a stored solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    /// `|H|` over the stored samples.
    Drift,
    /// Stored samples against a fresh propagation of the stored unknowns.
    Replay,
    /// Steering angles against the grid scan.
    Steering,
    /// Adjoint rates against finite differences of `H`.
    Costate,
}

impl Check {
    pub const ALL: [Check; 4] = [Check::Drift, Check::Replay, Check::Steering, Check::Costate];
}

impl std::str::FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drift" => Ok(Check::Drift),
            "replay" => Ok(Check::Replay),
            "steering" => Ok(Check::Steering),
            "costate" => Ok(Check::Costate),
            other => Err(Error::Config(format!(
                "unknown check {other:?} (expected drift, replay, steering or costate)"
            ))),
        }
    }
}

/// Grid size used by [`Check::Steering`].
pub const VERIFY_GRID_POINTS: usize = 100_001;
/// Finite-difference step used by [`Check::Costate`].
pub const VERIFY_FD_STEP: f64 = 1e-4;
/// Bound on the disagreement between stored and replayed samples.
pub const REPLAY_TOL: f64 = 1e-6;

/// Largest difference between stored samples and the replayed trajectory,
/// relative to `max(1, |value|)`, over time, states, steering and `H`.
pub fn replay_check(table: &TrajectoryTable, replay: &Trajectory) -> OracleReport {
    let mut max_error: f64 = 0.0;
    if table.rows.len() != replay.len() {
        max_error = f64::INFINITY;
    }
    for (row, i) in table.rows.iter().zip(0..replay.len()) {
        let x = replay.states[i];
        let c = replay.controls[i];
        let fresh = [
            replay.times[i],
            x.y,
            x.z,
            x.vy,
            x.vz,
            x.m,
            c.theta,
            c.u,
            replay.switching_values[i],
            replay.hamiltonian_values[i],
            replay.delta_values[i],
        ];
        for (a, b) in row.to_array().iter().zip(fresh) {
            let err = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
            max_error = max_error.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    OracleReport::new("replay", max_error, table.rows.len(), REPLAY_TOL)
}

/// Runs the selected oracle suites. Drift and replay use the stored table
/// when one is given; the other checks need costates and run on the replay.
pub fn verify_solution(
    sol: &SolutionFile,
    table: Option<&TrajectoryTable>,
    checks: &[Check],
) -> Result<Vec<OracleReport>> {
    let replay = sol.replay()?;
    let stored = table.map(|t| t.to_trajectory(sol.scenario.env, sol.scenario.reg));
    let mut out = Vec::new();
    for check in checks {
        out.push(match check {
            Check::Drift => hamiltonian_drift_check(stored.as_ref().unwrap_or(&replay)),
            Check::Replay => match table {
                Some(t) => replay_check(t, &replay),
                None => OracleReport::new("replay", 0.0, 0, REPLAY_TOL),
            },
            Check::Steering => steering_grid_check(&replay, VERIFY_GRID_POINTS),
            Check::Costate => trajectory_costate_check(&replay, VERIFY_FD_STEP)?,
        });
    }
    Ok(out)
}
