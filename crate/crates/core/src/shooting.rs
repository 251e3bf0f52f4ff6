//! Indirect shooting: six unknown initial adjoints and final time, six
//! terminal conditions, solved by a damped Newton iteration with a
//! finite-difference Jacobian.

use nalgebra::{SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{detect_switches, SwitchRecord};
use crate::error::{Error, Result};
use crate::model::{braking_floor, Costate, Mode, RegularizationParams};
use crate::ode::{propagate, IntegratorConfig, Trajectory};
use crate::oracle::relative_error;
use crate::scenario::Scenario;

/// Smoothing constants visited by the continuation, ending at the target.
pub const DELTA_SCHEDULE: [f64; 5] = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10];

/// Residual norm below which a stalled Newton iteration counts as limited by
/// integration noise rather than by the guess.
pub const STALL_LIMIT: f64 = 1e-6;
/// Tenfold integrator tightenings tried after such a stall.
pub const MAX_REFINEMENTS: usize = 2;

/// Divisors applied to the terminal position [m] and velocity [m/s] errors.
pub const POSITION_SCALE: f64 = 100.0;
pub const VELOCITY_SCALE: f64 = 10.0;

/// Initial adjoints and final time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootingUnknowns {
    pub py0: f64,
    pub pz0: f64,
    pub pvy0: f64,
    pub pvz0: f64,
    pub pm0: f64,
    /// Final time [s].
    pub tf: f64,
}

impl ShootingUnknowns {
    pub fn new(p0: Costate, tf: f64) -> Self {
        Self {
            py0: p0.py,
            pz0: p0.pz,
            pvy0: p0.pvy,
            pvz0: p0.pvz,
            pm0: p0.pm,
            tf,
        }
    }

    pub fn costate(&self) -> Costate {
        Costate::new(self.py0, self.pz0, self.pvy0, self.pvz0, self.pm0)
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.py0, self.pz0, self.pvy0, self.pvz0, self.pm0, self.tf]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            py0: a[0],
            pz0: a[1],
            pvy0: a[2],
            pvz0: a[3],
            pm0: a[4],
            tf: a[5],
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::domain(format!("non-finite shooting unknowns {self:?}")));
        }
        if self.tf <= 0.0 {
            return Err(Error::domain(format!("final time must be > 0 (got {})", self.tf)));
        }
        Ok(())
    }
}

/// Terminal mismatches in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingResidual {
    pub y_f: f64,
    pub z_f: f64,
    pub vy_f: f64,
    pub vz_f: f64,
    pub pm_f: f64,
    #[serde(rename = "H_f")]
    pub h_f: f64,
}

impl ShootingResidual {
    /// Residual vector with positions and velocities scaled to order one.
    pub fn scaled(&self) -> [f64; 6] {
        [
            self.y_f / POSITION_SCALE,
            self.z_f / POSITION_SCALE,
            self.vy_f / VELOCITY_SCALE,
            self.vz_f / VELOCITY_SCALE,
            self.pm_f,
            self.h_f,
        ]
    }

    /// Infinity norm of the scaled residual.
    pub fn norm(&self) -> f64 {
        self.scaled().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.scaled().iter().all(|v| v.is_finite())
    }
}

/// Newton iteration and continuation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Newton iterations per continuation stage.
    pub max_iter: usize,
    /// Number of starts tried by [`multi_start`].
    pub n_starts: usize,
    pub seed: u64,
    /// Convergence threshold on the scaled infinity norm.
    pub tol: f64,
    /// Walk the smoothing constant down [`DELTA_SCHEDULE`] before the final solve.
    pub continuation: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 60,
            n_starts: 50,
            seed: 0,
            tol: 1e-10,
            continuation: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("solver.max_iter must be > 0".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Config("solver.n_starts must be >= 1".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("solver.tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of a shooting solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub converged: bool,
    /// Newton iterations summed over all continuation stages.
    pub iterations: usize,
    pub residual_norm: f64,
    pub residual: ShootingResidual,
    pub unknowns: ShootingUnknowns,
    pub trajectory: Trajectory,
    /// Propellant consumed [kg].
    pub fuel_used: f64,
    /// Index of the start that produced this report.
    pub start_index: usize,
    /// Integrator settings of the final propagation (tighter than the
    /// scenario's when the solve had to refine them).
    pub integrator: IntegratorConfig,
}

impl SolveReport {
    pub fn switches(&self) -> Vec<SwitchRecord> {
        detect_switches(&self.trajectory)
    }

    pub fn final_mass(&self) -> f64 {
        self.trajectory.final_state().map_or(f64::NAN, |x| x.m)
    }

    pub fn final_theta(&self) -> f64 {
        self.trajectory.final_control().map_or(f64::NAN, |c| c.theta)
    }
}

fn residual_from(traj: &Trajectory) -> Result<ShootingResidual> {
    let (x, p, h) = match (traj.final_state(), traj.final_costate(), traj.hamiltonian_values.last()) {
        (Some(x), Some(p), Some(h)) => (x, p, *h),
        _ => return Err(Error::domain("empty trajectory")),
    };
    let r = ShootingResidual {
        y_f: x.y,
        z_f: x.z,
        vy_f: x.vy,
        vz_f: x.vz,
        pm_f: p.pm,
        h_f: h,
    };
    if !r.is_finite() {
        return Err(Error::domain("non-finite terminal residual"));
    }
    Ok(r)
}

fn shoot(
    u: &ShootingUnknowns,
    scenario: &Scenario,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<(ShootingResidual, Trajectory)> {
    u.validate()?;
    let traj = propagate(
        &scenario.initial_state,
        &u.costate(),
        u.tf,
        &scenario.env,
        reg,
        mode,
        &scenario.integrator,
    )?;
    Ok((residual_from(&traj)?, traj))
}

/// Terminal mismatch obtained by propagating the scenario's initial state
/// with the given unknowns.
pub fn residual(u: &ShootingUnknowns, scenario: &Scenario, mode: Mode) -> Result<ShootingResidual> {
    shoot(u, scenario, &scenario.reg, mode).map(|(r, _)| r)
}

type Vec6 = SVector<f64, 6>;
type Mat6 = SMatrix<f64, 6, 6>;

/// Finite-difference step for unknown `i`.
pub fn fd_step(value: f64) -> f64 {
    1e-7 * value.abs().max(1.0)
}

/// Central-difference Jacobian of the scaled residual.
pub fn jacobian(u: &ShootingUnknowns, scenario: &Scenario, reg: &RegularizationParams, mode: Mode) -> Result<Mat6> {
    jacobian_with_step(u, scenario, reg, mode, 1.0)
}

pub(crate) fn jacobian_with_step(
    u: &ShootingUnknowns,
    scenario: &Scenario,
    reg: &RegularizationParams,
    mode: Mode,
    step_factor: f64,
) -> Result<Mat6> {
    let base = u.to_array();
    let mut jac = Mat6::zeros();
    for j in 0..6 {
        let h = step_factor * fd_step(base[j]);
        let mut plus = base;
        let mut minus = base;
        plus[j] += h;
        minus[j] -= h;
        let rp = shoot(&ShootingUnknowns::from_array(plus), scenario, reg, mode)?
            .0
            .scaled();
        let rm = shoot(&ShootingUnknowns::from_array(minus), scenario, reg, mode)?
            .0
            .scaled();
        for i in 0..6 {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

struct StageOutcome {
    unknowns: ShootingUnknowns,
    residual: ShootingResidual,
    trajectory: Trajectory,
    iterations: usize,
    converged: bool,
}

/// Newton gives up when the residual has not dropped below `STALL_RATIO`
/// times its value `STALL_WINDOW` iterations earlier.
const STALL_WINDOW: usize = 12;
const STALL_RATIO: f64 = 0.95;

/// Damped Newton at a fixed smoothing constant.
fn newton(
    guess: &ShootingUnknowns,
    scenario: &Scenario,
    reg: &RegularizationParams,
    mode: Mode,
    opts: &SolverOptions,
) -> Result<StageOutcome> {
    let mut u = *guess;
    let (mut r, mut traj) = shoot(&u, scenario, reg, mode)?;
    let mut history = Vec::with_capacity(opts.max_iter);
    for iter in 0..opts.max_iter {
        let stalled = iter >= STALL_WINDOW && r.norm() > STALL_RATIO * history[iter - STALL_WINDOW];
        if r.norm() <= opts.tol || stalled {
            return Ok(StageOutcome {
                unknowns: u,
                residual: r,
                trajectory: traj,
                iterations: iter,
                converged: r.norm() <= opts.tol,
            });
        }
        history.push(r.norm());
        let jac = jacobian(&u, scenario, reg, mode)?;
        let rv = Vec6::from(r.scaled());
        let step = jac
            .lu()
            .solve(&(-rv))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularJacobian { iteration: iter })?;

        // Backtracking on |r|^2.
        let f0 = rv.norm_squared();
        let mut lambda = 1.0;
        let min_lambda = 2f64.powi(-20);
        let mut accepted = None;
        while lambda >= min_lambda {
            let trial = ShootingUnknowns::from_array(std::array::from_fn(|i| u.to_array()[i] + lambda * step[i]));
            if let Ok((rt, tt)) = shoot(&trial, scenario, reg, mode) {
                let ft = Vec6::from(rt.scaled()).norm_squared();
                if ft <= (1.0 - 1e-4 * lambda) * f0 {
                    accepted = Some((trial, rt, tt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nu, nr, nt)) => {
                u = nu;
                r = nr;
                traj = nt;
            }
            None => {
                return Ok(StageOutcome {
                    unknowns: u,
                    residual: r,
                    trajectory: traj,
                    iterations: iter + 1,
                    converged: false,
                })
            }
        }
    }
    let converged = r.norm() <= opts.tol;
    Ok(StageOutcome {
        unknowns: u,
        residual: r,
        trajectory: traj,
        iterations: opts.max_iter,
        converged,
    })
}

fn fuel_used(traj: &Trajectory) -> f64 {
    match (traj.states.first(), traj.states.last()) {
        (Some(a), Some(b)) => a.m - b.m,
        _ => f64::NAN,
    }
}

/// Solves the shooting problem of `mode` from `initial_guess`.
///
/// With continuation enabled the smoothing constant walks down
/// [`DELTA_SCHEDULE`] (stopping at the scenario's target value), each stage
/// warm-starting the next. Intermediate stages only need to make progress;
/// the returned report always refers to the target smoothing constant.
pub fn solve(
    initial_guess: &ShootingUnknowns,
    scenario: &Scenario,
    mode: Mode,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    initial_guess.validate()?;
    let target = scenario.reg.delta;
    let mut stages: Vec<f64> = if opts.continuation {
        DELTA_SCHEDULE.iter().copied().filter(|d| *d > target).collect()
    } else {
        Vec::new()
    };
    stages.push(target);

    let mut guess = *initial_guess;
    let mut iterations = 0;
    let mut last = None;
    for (k, delta) in stages.iter().enumerate() {
        let reg = scenario.reg.with_delta(*delta);
        let is_final = k + 1 == stages.len();
        let stage = newton(&guess, scenario, &reg, mode, opts)?;
        iterations += stage.iterations;
        if !is_final && !stage.converged && stage.residual.norm() > STALL_LIMIT {
            return Err(Error::NonConvergence {
                iterations,
                residual_norm: stage.residual.norm(),
            });
        }
        guess = stage.unknowns;
        last = Some(stage);
    }
    let mut stage = last.expect("at least one stage");

    // A stall just above the tolerance is integration noise; tighten the
    // integrator and resume from where Newton stopped.
    let reg = scenario.reg.with_delta(target);
    let mut refined = scenario.clone();
    for _ in 0..MAX_REFINEMENTS {
        if stage.converged || stage.residual.norm() > STALL_LIMIT {
            break;
        }
        refined.integrator.abs_tol *= 0.1;
        refined.integrator.rel_tol *= 0.1;
        let next = newton(&stage.unknowns, &refined, &reg, mode, opts)?;
        iterations += next.iterations;
        stage = next;
    }
    Ok(SolveReport {
        converged: stage.converged,
        iterations,
        residual_norm: stage.residual.norm(),
        residual: stage.residual,
        unknowns: stage.unknowns,
        fuel_used: fuel_used(&stage.trajectory),
        trajectory: stage.trajectory,
        start_index: 0,
        integrator: refined.integrator,
    })
}

/// Kinematic estimate of the final time: time to cancel the current speed
/// plus the free-fall speed gained from the current altitude, at full thrust.
pub fn final_time_guess(scenario: &Scenario) -> f64 {
    let x = &scenario.initial_state;
    let env = &scenario.env;
    let net = (env.t_max / x.m - env.g_moon).max(1e-3);
    (x.speed() + (2.0 * env.g_moon * x.z.max(0.0)).sqrt()) / net
}

/// Characteristic magnitudes used to map the unit guess box onto costates.
///
/// The velocity adjoint is scaled by `m0 / T_max` (so that `T/m |pv|` is order
/// one, as the switching function requires), the position adjoint by that over
/// the final-time guess, and the mass adjoint by `I_sp g0 / T_max`.
pub fn costate_scales(scenario: &Scenario, tf: f64) -> Costate {
    let x = &scenario.initial_state;
    let env = &scenario.env;
    let pv = x.m / env.t_max;
    Costate::new(pv / tf, pv / tf, pv, pv, env.isp * env.g0 / env.t_max)
}

/// Deterministic first guess: thrust opposing the initial velocity plus
/// gravity, engine on the edge of switching.
pub fn heuristic_guess(scenario: &Scenario) -> ShootingUnknowns {
    let tf = final_time_guess(scenario);
    let s = costate_scales(scenario, tf);
    let x = &scenario.initial_state;
    // Required velocity change over the burn, including gravity losses.
    let dvy = -x.vy;
    let dvz = -x.vz + scenario.env.g_moon * tf;
    let n = dvy.hypot(dvz).max(1e-9);
    // pv points against the thrust direction.
    let p = Costate::new(0.0, 0.0, -s.pvy * dvy / n, -s.pvz * dvz / n, 0.0);
    ShootingUnknowns::new(p, tf)
}

/// Guess drawn uniformly from the scaled box: `[-2, 2]` for position and
/// velocity adjoints, `[0, 1]` for the mass adjoint.
pub fn random_guess(scenario: &Scenario, rng: &mut impl Rng) -> ShootingUnknowns {
    let tf0 = final_time_guess(scenario);
    let tf = tf0 * rng.gen_range(0.8..1.2);
    let s = costate_scales(scenario, tf);
    let p = Costate::new(
        s.py * rng.gen_range(-2.0..2.0),
        s.pz * rng.gen_range(-2.0..2.0),
        s.pvy * rng.gen_range(-2.0..2.0),
        s.pvz * rng.gen_range(-2.0..2.0),
        s.pm * rng.gen_range(0.0..1.0),
    );
    ShootingUnknowns::new(p, tf)
}

/// Deterministic list of starting guesses: the heuristic first, then random
/// draws from the box seeded by `rng_seed`.
pub fn start_guesses(scenario: &Scenario, n_starts: usize, rng_seed: u64) -> Vec<ShootingUnknowns> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n_starts);
    if n_starts > 0 {
        out.push(heuristic_guess(scenario));
    }
    while out.len() < n_starts {
        out.push(random_guess(scenario, &mut rng));
    }
    out
}

/// Relative distance below which two unconstrained solutions count as the
/// same warm start.
const WARM_START_TOL: f64 = 1e-6;

/// Deepest excursion below the surface tolerated on an accepted extremal [m].
pub const GROUND_TOL: f64 = 1e-6;

/// Lowest altitude over the stored samples [m].
pub fn min_altitude(traj: &Trajectory) -> f64 {
    traj.states.iter().map(|x| x.z).fold(f64::INFINITY, f64::min)
}

/// Tries starts in order and returns the first converged report whose
/// trajectory stays above ground.
///
/// States that cannot stop above the surface even under full braking are
/// rejected up front with [`Error::Infeasible`].
pub fn multi_start(scenario: &Scenario, mode: Mode, n_starts: usize, rng_seed: u64) -> Result<SolveReport> {
    if n_starts == 0 {
        return Err(Error::Config("n_starts must be >= 1".into()));
    }
    let floor = braking_floor(&scenario.initial_state, &scenario.env);
    if floor < 0.0 {
        return Err(Error::Infeasible { floor });
    }
    let opts = scenario.solver.clone();
    let mut failures = Vec::new();
    let mut warm_starts = Vec::new();
    for (k, guess) in start_guesses(scenario, n_starts, rng_seed).iter().enumerate() {
        match solve_from_cold(guess, scenario, mode, &opts, &mut warm_starts) {
            Ok(rep) if rep.converged && min_altitude(&rep.trajectory) < -GROUND_TOL => failures.push(format!(
                "start {k}: extremal passes below ground (z = {:.3e} m)",
                min_altitude(&rep.trajectory)
            )),
            Ok(mut rep) if rep.converged => {
                rep.start_index = k;
                return Ok(rep);
            }
            Ok(rep) => failures.push(format!("start {k}: residual {:.3e}", rep.residual_norm)),
            Err(e) => failures.push(format!("start {k}: {e}")),
        }
    }
    Err(Error::AllStartsFailed {
        starts: n_starts,
        details: failures.join("; "),
    })
}

fn is_converged(outcome: &Result<SolveReport>) -> bool {
    matches!(outcome, Ok(rep) if rep.converged)
}

/// First guard value of [`guard_continuation`] [m].
pub const GUARD_START: f64 = 100.0;
/// Decades of guard reduction attempted per stage, before halving.
pub const GUARD_MAX_STEP: f64 = 1.0;
/// Smallest stage, in decades, before [`guard_continuation`] gives up.
pub const GUARD_MIN_STEP: f64 = 0.25;

/// Vertical solve that walks the penalty guard `eps` down from
/// [`GUARD_START`] to the scenario's value, at the scenario's smoothing
/// constant. A large guard bounds the penalty weight near the surface, so
/// the first stage sits next to the unconstrained extremal. A stage that
/// fails is retried with half the reduction.
pub fn guard_continuation(start: &ShootingUnknowns, scenario: &Scenario, opts: &SolverOptions) -> Result<SolveReport> {
    let target = scenario.reg.eps;
    let mut staged = scenario.clone();
    staged.reg.eps = GUARD_START.max(target);
    let mut accepted = solve(start, &staged, Mode::VerticalLanding, opts)?;
    let mut iterations = accepted.iterations;
    let mut step = GUARD_MAX_STEP;
    while accepted.converged && accepted.trajectory.reg.eps > target {
        staged.reg.eps = (accepted.trajectory.reg.eps * 10f64.powf(-step)).max(target);
        let trial = solve(&accepted.unknowns, &staged, Mode::VerticalLanding, opts);
        if let Ok(rep) = &trial {
            iterations += rep.iterations;
        }
        match trial {
            Ok(rep) if rep.converged => {
                accepted = rep;
                step = (2.0 * step).min(GUARD_MAX_STEP);
            }
            failed if step / 2.0 < GUARD_MIN_STEP => {
                let mut rep = failed?;
                rep.iterations = iterations;
                return Ok(rep);
            }
            _ => step /= 2.0,
        }
    }
    accepted.iterations = iterations;
    Ok(accepted)
}

/// A cold start for the vertical-landing problem first solves the
/// unconstrained problem. Its solution is close enough to warm-start the
/// vertical problem directly at the target smoothing constant; walking the
/// penalty guard down and the full smoothing continuation are the
/// fallbacks. Repeats of a warm start already in `tried` are skipped, since
/// the vertical solve from it is deterministic.
fn solve_from_cold(
    guess: &ShootingUnknowns,
    scenario: &Scenario,
    mode: Mode,
    opts: &SolverOptions,
    tried: &mut Vec<ShootingUnknowns>,
) -> Result<SolveReport> {
    match mode {
        Mode::Unconstrained => solve(guess, scenario, mode, opts),
        Mode::VerticalLanding => {
            let free = solve(guess, scenario, Mode::Unconstrained, opts)?;
            if !free.converged {
                return Ok(free);
            }
            let same =
                |w: &ShootingUnknowns| relative_error(&w.to_array(), &free.unknowns.to_array()) <= WARM_START_TOL;
            if tried.iter().any(same) {
                return Err(Error::domain("warm start repeats an earlier start"));
            }
            tried.push(free.unknowns);
            let direct = SolverOptions {
                continuation: false,
                ..opts.clone()
            };
            // The penalty weight is singular below ground, so a warm start
            // that tunnels through the surface only feeds the guard walk,
            // whose first stages keep the weight bounded there.
            let floor = min_altitude(&free.trajectory);
            let above_ground = floor >= -GROUND_TOL;
            let mut first = Err(Error::domain(format!(
                "unconstrained warm start passes below ground (z = {floor:.3e} m)"
            )));
            if above_ground {
                first = solve(&free.unknowns, scenario, mode, &direct);
                if is_converged(&first) {
                    return first;
                }
            }
            let walked = guard_continuation(&free.unknowns, scenario, &direct);
            if is_converged(&walked) {
                return walked;
            }
            if above_ground {
                let continued = solve(&free.unknowns, scenario, mode, opts);
                if is_converged(&continued) {
                    return continued;
                }
            }
            first
        }
    }
}
