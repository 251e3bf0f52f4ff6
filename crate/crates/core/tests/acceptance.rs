//! Acceptance suite: every criterion at its stated tolerance, one line each.
//!
//! Runs as a plain binary so each criterion reports `PASS` or `FAIL` with
//! its measured values even when an earlier one fails. Exits non-zero if
//! any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lunar_descent::control::{smoothed_thrust_ratio, SwitchDirection};
use lunar_descent::model::{ControlSample, Costate, LanderState, Mode, RegularizationParams, VehicleEnv};
use lunar_descent::oracle::{fd_costate_check, grid_scan_steering, grid_spacing, hamiltonian_drift_check};
use lunar_descent::scenario::{run_batch, thread_limit, DomainBox, Scenario};
use lunar_descent::shooting::{multi_start, SolveReport};
use lunar_descent::steering::{critical_points, solve_steering, stationarity_slope, STEERING_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Seed of the Monte Carlo batch.
const BATCH_SEED: u64 = 7;
const BATCH_SIZE: usize = 100;
/// Seed of the random inputs of the property suites.
const PROPERTY_SEED: u64 = 2024;

struct Outcome {
    passed: bool,
    detail: String,
}

#[derive(Default)]
struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    /// Records `value` and fails the criterion unless `ok`.
    fn expect(&mut self, ok: bool, what: String) {
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn near(&mut self, label: &str, value: f64, target: f64, tol: f64, unit: &str) {
        self.expect(
            (value - target).abs() <= tol,
            format!("{label} = {value:.4}{unit} (want {target} ± {tol}{unit})"),
        );
    }

    fn below(&mut self, label: &str, value: f64, bound: f64) {
        self.expect(value < bound, format!("{label} = {value:.3e} (want < {bound:e})"));
    }

    fn finish(self) -> Outcome {
        let passed = self.failures.is_empty();
        let mut parts = self.failures;
        parts.extend(self.notes);
        Outcome {
            passed,
            detail: parts.join("; "),
        }
    }
}

fn reference_solve(mode: Mode) -> Result<(SolveReport, Duration), String> {
    let scenario = Scenario::reference(mode);
    let start = Instant::now();
    let rep =
        multi_start(&scenario, mode, scenario.solver.n_starts, scenario.solver.seed).map_err(|e| e.to_string())?;
    Ok((rep, start.elapsed()))
}

fn single_switch_off_on(rep: &SolveReport) -> Option<f64> {
    match rep.switches().as_slice() {
        [s] if s.direction == SwitchDirection::OffToOn => Some(s.time),
        _ => None,
    }
}

fn criterion_1(free: &(SolveReport, Duration)) -> Outcome {
    let (rep, elapsed) = free;
    let mut c = Check::default();
    c.expect(rep.converged, format!("converged = {}", rep.converged));
    c.near("t_f", rep.trajectory.final_time(), 9.9779, 0.01, " s");
    c.near("m(t_f)", rep.final_mass(), 9301.18, 0.5, " kg");
    c.near("theta(t_f)", rep.final_theta().to_degrees(), -11.02, 0.2, " deg");
    match single_switch_off_on(rep) {
        Some(t) => c.near("off-on switch", t, 0.0748, 0.003, " s"),
        None => c.expect(false, format!("switches = {:?} (want one off-on)", rep.switches())),
    }
    c.below("runtime [s]", elapsed.as_secs_f64(), 10.0);
    c.finish()
}

fn criterion_2(free: &(SolveReport, Duration), vertical: &(SolveReport, Duration)) -> Outcome {
    let (rep, elapsed) = vertical;
    let mut c = Check::default();
    c.expect(rep.converged, format!("converged = {}", rep.converged));
    c.near("t_f", rep.trajectory.final_time(), 9.9994, 0.01, " s");
    c.near("m(t_f)", rep.final_mass(), 9300.96, 0.5, " kg");
    c.below("|theta(t_f)| [deg]", rep.final_theta().to_degrees().abs(), 0.05);
    match single_switch_off_on(rep) {
        Some(t) => c.near("off-on switch", t, 0.0811, 0.003, " s"),
        None => c.expect(false, format!("switches = {:?} (want one off-on)", rep.switches())),
    }
    c.near("fuel penalty", free.0.final_mass() - rep.final_mass(), 0.22, 0.1, " kg");
    c.below("runtime [s]", elapsed.as_secs_f64(), 30.0);
    c.finish()
}

fn criterion_3(free: &SolveReport, vertical: &SolveReport) -> Outcome {
    let mut c = Check::default();
    c.below(
        "max |H| unconstrained",
        hamiltonian_drift_check(&free.trajectory).max_error,
        1e-6,
    );
    c.below(
        "max |H| vertical",
        hamiltonian_drift_check(&vertical.trajectory).max_error,
        1e-6,
    );
    c.finish()
}

fn criterion_4(vertical: &SolveReport) -> Outcome {
    let mut c = Check::default();
    let d = &vertical.trajectory.delta_values;
    let lowest = d.iter().copied().fold(f64::INFINITY, f64::min);
    c.expect(
        d.iter().all(|v| *v >= 0.0),
        format!("min Delta = {lowest:.3e} over {} samples (want >= 0)", d.len()),
    );
    c.below("Delta(t_f)", *d.last().unwrap_or(&f64::NAN), 1e-10);
    c.finish()
}

/// Largest residual of the least-squares line through `(t, y)`.
fn line_fit_residual(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    let slope = sxy / sxx;
    t.iter()
        .zip(y)
        .map(|(a, b)| (b - ym - slope * (a - tm)).abs())
        .fold(0.0, f64::max)
}

fn criterion_5(free: &SolveReport) -> Outcome {
    let traj = &free.trajectory;
    let mut c = Check::default();
    let pvy: Vec<f64> = traj.costates.iter().map(|p| p.pvy).collect();
    let pvz: Vec<f64> = traj.costates.iter().map(|p| p.pvz).collect();
    c.below("p_vy line-fit residual", line_fit_residual(&traj.times, &pvy), 1e-6);
    c.below("p_vz line-fit residual", line_fit_residual(&traj.times, &pvz), 1e-6);
    let pz0 = traj.costates[0].pz;
    let drift = traj.costates.iter().map(|p| (p.pz - pz0).abs()).fold(0.0, f64::max);
    c.below("max |p_z - p_z(0)|", drift, 1e-8);
    c.finish()
}

fn criterion_6() -> Outcome {
    let mut c = Check::default();
    let start = Instant::now();
    let summary = match run_batch(&DomainBox::default(), BATCH_SIZE, BATCH_SEED, Mode::VerticalLanding) {
        Ok(s) => s,
        Err(e) => {
            c.expect(false, format!("batch failed: {e}"));
            return c.finish();
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    c.expect(
        summary.convergence_rate >= 0.9,
        format!(
            "converged {}/{} (want >= 90%; {} infeasible under full braking)",
            summary.n_converged, summary.n_total, summary.n_infeasible
        ),
    );
    let converged: Vec<_> = summary
        .cases
        .iter()
        .filter(|r| r.converged)
        .filter_map(|r| r.solution.as_ref())
        .collect();
    let worst = |f: fn(&&lunar_descent::scenario::SolutionSummary) -> f64| converged.iter().map(f).fold(0.0, f64::max);
    c.below(
        "max |theta(t_f)| [deg]",
        worst(|s| s.final_theta.abs().to_degrees()),
        0.1,
    );
    c.below("max |v(t_f)| [m/s]", worst(|s| s.final_speed), 1e-3);
    c.below("max |r(t_f)| [m]", worst(|s| s.final_miss), 0.1);
    // The budget is for 8 cores; scale the wall time of this machine to it.
    let cores = thread_limit()
        .ok()
        .flatten()
        .unwrap_or_else(rayon::current_num_threads)
        .min(8);
    let scaled = elapsed * cores as f64 / 8.0;
    c.below(
        &format!("runtime scaled to 8 cores [s] ({elapsed:.0} s on {cores})"),
        scaled,
        1800.0,
    );
    c.finish()
}

fn random_point(rng: &mut impl Rng) -> (LanderState, Costate) {
    let x = LanderState::new(
        rng.gen_range(-200.0..600.0),
        rng.gen_range(1.0..1500.0),
        rng.gen_range(-50.0..50.0),
        rng.gen_range(-100.0..10.0),
        rng.gen_range(8000.0..9500.0),
    );
    let p = Costate::new(
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-0.1..0.1),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.01..0.01),
    );
    (x, p)
}

fn criterion_7() -> Outcome {
    let env = VehicleEnv::default();
    let reg = RegularizationParams::default();
    let mut c = Check::default();

    // Steering solver against a brute-force grid.
    let grid_points = 1_000_001;
    let mut rng = ChaCha8Rng::seed_from_u64(PROPERTY_SEED);
    let inputs: Vec<_> = (0..10_000).map(|_| random_point(&mut rng)).collect();
    let spacing = grid_spacing(grid_points);
    let mismatch = inputs
        .par_iter()
        .map(|(x, p)| {
            let grid = grid_scan_steering(x, p, &env, &reg, grid_points);
            match solve_steering(x, p, &env, &reg, STEERING_TOL) {
                Ok(sol) => (sol.theta_star - grid).abs(),
                Err(_) => f64::INFINITY,
            }
        })
        .reduce(|| 0.0, f64::max);
    c.expect(
        mismatch <= spacing + 1e-12,
        format!(
            "steering vs grid: max mismatch {mismatch:.3e} (want <= {:.3e})",
            spacing + 1e-12
        ),
    );

    // Adjoint equations against finite differences of H, both modes.
    let mut rng = ChaCha8Rng::seed_from_u64(PROPERTY_SEED + 1);
    for mode in [Mode::Unconstrained, Mode::VerticalLanding] {
        let worst = (0..1_000)
            .map(|_| {
                let (x, p) = random_point(&mut rng);
                let sample = ControlSample::new(rng.gen_range(0.0..=1.0), rng.gen_range(-PI..PI));
                fd_costate_check(&x, &p, sample, &env, &reg, mode, 1e-4).map_or(f64::INFINITY, |r| r.max_error)
            })
            .fold(0.0, f64::max);
        c.expect(
            worst <= 1e-6,
            format!("fd costate {mode}: max relative error {worst:.3e} (want <= 1e-6)"),
        );
    }

    // Smoothed thrust law: bounds, monotonicity and symmetry.
    let mut rng = ChaCha8Rng::seed_from_u64(PROPERTY_SEED + 2);
    let mut bad = 0;
    for _ in 0..10_000 {
        let s = rng.gen_range(-10.0..10.0);
        let ds = rng.gen_range(0.0..1.0);
        let delta = 10f64.powf(rng.gen_range(-10.0..-1.0));
        let u = smoothed_thrust_ratio(s, delta);
        let ok = (0.0..=1.0).contains(&u)
            && smoothed_thrust_ratio(s + ds, delta) <= u
            && (u + smoothed_thrust_ratio(-s, delta) - 1.0).abs() <= 2.0 * f64::EPSILON;
        if !ok {
            bad += 1;
        }
    }
    c.expect(bad == 0, format!("smoothed law violations: {bad}/10000"));

    // Critical points from the half-angle quadratic.
    let mut rng = ChaCha8Rng::seed_from_u64(PROPERTY_SEED + 3);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for _ in 0..10_000 {
        let (x, p) = random_point(&mut rng);
        for t in critical_points(&x, &p, &env, &reg).unwrap_or_default() {
            let slope = stationarity_slope(t, &x, &p, &env, &reg).unwrap_or(f64::INFINITY);
            worst = worst.max(if slope.is_nan() { f64::INFINITY } else { slope.abs() });
            count += 1;
        }
    }
    c.expect(
        worst <= 1e-9,
        format!("critical points: max |slope| {worst:.3e} over {count} (want <= 1e-9)"),
    );
    c.finish()
}

/// Criteria named on the command line (all when none are), so a single one
/// can be rerun with `cargo test --test acceptance -- 7`.
fn selected() -> Vec<u32> {
    let picked: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if picked.is_empty() {
        (1..=7).collect()
    } else {
        picked
    }
}

fn main() -> ExitCode {
    let wanted = selected();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let free = reference_solve(Mode::Unconstrained);
    let vertical = reference_solve(Mode::VerticalLanding);
    let failed = |e: &String| Outcome {
        passed: false,
        detail: format!("reference solve failed: {e}"),
    };
    match (&free, &vertical) {
        (Ok(f), Ok(v)) => {
            results.push((1, criterion_1(f)));
            results.push((2, criterion_2(f, v)));
            results.push((3, criterion_3(&f.0, &v.0)));
            results.push((4, criterion_4(&v.0)));
            results.push((5, criterion_5(&f.0)));
        }
        (Err(e), _) | (_, Err(e)) => {
            for k in 1..=5 {
                results.push((k, failed(e)));
            }
        }
    }
    results.retain(|(k, _)| wanted.contains(k));
    if wanted.contains(&7) {
        results.push((7, criterion_7()));
    }
    if wanted.contains(&6) {
        results.push((6, criterion_6()));
    }
    results.sort_by_key(|(k, _)| *k);
    for (k, o) in &results {
        println!("criterion {k}: {} {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    if results.iter().all(|(_, o)| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
