//! Adaptive Dormand–Prince 5(4) integration with dense output, and the
//! coupled state/costate propagation built on top of it.

use serde::{Deserialize, Serialize};

use crate::control::{optimal_control, smoothed_thrust_ratio, smoothing_cost, OptimalControl};
use crate::error::{Error, Result};
use crate::model::{
    costate_dynamics, hamiltonian, state_dynamics, ControlSample, Costate, LanderState, Mode, RegularizationParams,
    VehicleEnv,
};
use crate::steering::{solve_steering, STEERING_TOL};

/// Tolerances and limits of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// First trial step [s]; zero selects one automatically.
    pub initial_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_steps: 200_000,
            initial_step: 0.0,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("integrator tolerances must be > 0".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("integrator.max_steps must be > 0".into()));
        }
        if !(self.initial_step >= 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config("integrator.initial_step must be >= 0".into()));
        }
        Ok(())
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// Error coefficients (5th minus 4th order weights).
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its 4th-order continuous extension.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let r = &self.rcont;
        std::array::from_fn(|i| r[0][i] + s * (r[1][i] + s1 * (r[2][i] + s * (r[3][i] + s1 * r[4][i]))))
    }
}

/// Accepted step endpoints plus the dense interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution<const N: usize> {
    pub times: Vec<f64>,
    pub values: Vec<[f64; N]>,
    pub steps: Vec<DenseStep<N>>,
    /// Number of right-hand-side evaluations.
    pub evaluations: usize,
    pub rejected: usize,
}

impl<const N: usize> OdeSolution<N> {
    /// Dense value at `t`, or `None` outside the integrated interval.
    pub fn interpolate(&self, t: f64) -> Option<[f64; N]> {
        let first = self.steps.first()?;
        let last = self.steps.last()?;
        if t < first.t0 || t > last.t1() {
            return None;
        }
        let idx = self.steps.partition_point(|s| s.t1() < t).min(self.steps.len() - 1);
        Some(self.steps[idx].eval(t))
    }
}

fn err_norm<const N: usize>(err: &[f64; N], y0: &[f64; N], y1: &[f64; N], cfg: &IntegratorConfig) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sk = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
        let e = err[i] / sk;
        acc += e * e;
    }
    (acc / N as f64).sqrt()
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t1 > t0`.
///
/// When `event` is given, integration stops at the first step over which it
/// changes sign from positive to non-positive; the crossing is located on the
/// dense output and becomes the final sample.
pub fn integrate<const N: usize, F, E>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    cfg: &IntegratorConfig,
    event: Option<E>,
) -> Result<OdeSolution<N>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    E: Fn(f64, &[f64; N]) -> f64,
{
    if t1 <= t0 || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::domain(format!("invalid integration interval [{t0}, {t1}]")));
    }
    let span = t1 - t0;
    let mut sol = OdeSolution {
        times: vec![t0],
        values: vec![y0],
        steps: Vec::new(),
        evaluations: 0,
        rejected: 0,
    };
    let fail = |time: f64, e: Error| match e {
        Error::Integration { .. } => e,
        other => Error::Integration {
            time,
            reason: other.to_string(),
        },
    };

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y).map_err(|e| fail(t, e))?;
    sol.evaluations += 1;

    let mut h = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        initial_step(&y, &k1, cfg, span)
    };
    let h_min = 16.0 * f64::EPSILON * t0.abs().max(t1.abs()).max(1.0);
    let mut last_rejected = false;
    let mut event_prev = event.as_ref().map(|g| g(t, &y));

    for _ in 0..cfg.max_steps {
        if t1 - t <= h_min {
            return Ok(sol);
        }
        h = h.min(t1 - t);
        // Stages.
        let y2 = axpy(&y, h, &[(A21, &k1)]);
        let k2 = f(t + C2 * h, &y2);
        let stages = k2.and_then(|k2| {
            let y3 = axpy(&y, h, &[(A31, &k1), (A32, &k2)]);
            let k3 = f(t + C3 * h, &y3)?;
            let y4 = axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            let k4 = f(t + C4 * h, &y4)?;
            let y5 = axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            let k5 = f(t + C5 * h, &y5)?;
            let y6 = axpy(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
            let k6 = f(t + h, &y6)?;
            let y7 = axpy(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            let k7 = f(t + h, &y7)?;
            Ok((k3, k4, k5, k6, k7, y7))
        });
        sol.evaluations += 6;
        let (k3, k4, k5, k6, k7, y_new) = match stages {
            Ok(v) => v,
            Err(e) => {
                // A stage left the domain; retry with a smaller step before giving up.
                if h <= h_min {
                    return Err(fail(t, e));
                }
                h *= 0.25;
                sol.rejected += 1;
                last_rejected = true;
                continue;
            }
        };
        let err: [f64; N] =
            std::array::from_fn(|i| h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]));
        let en = err_norm(&err, &y, &y_new, cfg);
        if !en.is_finite() {
            h *= 0.25;
            sol.rejected += 1;
            last_rejected = true;
            if h <= h_min {
                return Err(Error::Integration {
                    time: t,
                    reason: "non-finite error estimate".into(),
                });
            }
            continue;
        }
        if en <= 1.0 {
            let ydiff: [f64; N] = std::array::from_fn(|i| y_new[i] - y[i]);
            let bspl: [f64; N] = std::array::from_fn(|i| h * k1[i] - ydiff[i]);
            let step = DenseStep {
                t0: t,
                h,
                rcont: [
                    y,
                    ydiff,
                    bspl,
                    std::array::from_fn(|i| ydiff[i] - h * k7[i] - bspl[i]),
                    std::array::from_fn(|i| {
                        h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                    }),
                ],
            };
            let t_new = t + h;
            if let (Some(g), Some(prev)) = (event.as_ref(), event_prev) {
                let cur = g(t_new, &y_new);
                if prev > 0.0 && cur <= 0.0 {
                    let (te, ye) = locate_event(g, &step, t, t_new);
                    sol.steps.push(step);
                    sol.times.push(te);
                    sol.values.push(ye);
                    return Ok(sol);
                }
                event_prev = Some(cur);
            }
            sol.steps.push(step);
            sol.times.push(t_new);
            sol.values.push(y_new);
            t = t_new;
            y = y_new;
            k1 = k7;
            let fac = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= if last_rejected { fac.min(1.0) } else { fac };
            last_rejected = false;
        } else {
            sol.rejected += 1;
            h *= (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            last_rejected = true;
            if h <= h_min {
                return Err(Error::Integration {
                    time: t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
        }
    }
    Err(Error::Integration {
        time: t,
        reason: format!("exceeded max_steps = {}", cfg.max_steps),
    })
}

fn locate_event<const N: usize, E>(g: &E, step: &DenseStep<N>, mut lo: f64, mut hi: f64) -> (f64, [f64; N])
where
    E: Fn(f64, &[f64; N]) -> f64,
{
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid, &step.eval(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, step.eval(hi))
}

/// Hairer's starting-step heuristic, simplified to one explicit estimate.
fn initial_step<const N: usize>(y: &[f64; N], f0: &[f64; N], cfg: &IntegratorConfig, span: f64) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sk = cfg.abs_tol + cfg.rel_tol * y[i].abs();
        d0 += (y[i] / sk).powi(2);
        d1 += (f0[i] / sk).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span).max(1e-12 * span)
}

/// Time-sampled extremal with per-sample diagnostics.
///
/// Samples sit at the integrator's accepted steps. The dense interpolant is
/// kept alongside so quantities can be evaluated between samples.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<LanderState>,
    pub costates: Vec<Costate>,
    pub controls: Vec<ControlSample>,
    pub switching_values: Vec<f64>,
    pub hamiltonian_values: Vec<f64>,
    pub delta_values: Vec<f64>,
    pub env: VehicleEnv,
    pub reg: RegularizationParams,
    pub mode: Mode,
    pub(crate) dense: Option<OdeSolution<10>>,
}

impl Trajectory {
    /// Empty trajectory without dense output, for samples read back from a file.
    pub fn from_samples(env: VehicleEnv, reg: RegularizationParams, mode: Mode) -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            costates: Vec::new(),
            controls: Vec::new(),
            switching_values: Vec::new(),
            hamiltonian_values: Vec::new(),
            delta_values: Vec::new(),
            env,
            reg,
            mode,
            dense: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn final_state(&self) -> Option<&LanderState> {
        self.states.last()
    }

    pub fn final_costate(&self) -> Option<&Costate> {
        self.costates.last()
    }

    pub fn final_control(&self) -> Option<&ControlSample> {
        self.controls.last()
    }

    pub fn has_dense_output(&self) -> bool {
        self.dense.is_some()
    }

    /// Interpolated state and costate at `t`, when dense output is available.
    pub fn interpolate(&self, t: f64) -> Option<(LanderState, Costate)> {
        let y = self.dense.as_ref()?.interpolate(t)?;
        Some((LanderState::from_slice(&y[..5]), Costate::from_slice(&y[5..])))
    }

    /// Number of right-hand-side evaluations spent on this trajectory.
    pub fn evaluations(&self) -> usize {
        self.dense.as_ref().map_or(0, |d| d.evaluations)
    }

    fn push_sample(&mut self, t: f64, x: LanderState, p: Costate) -> Result<()> {
        let e = extremal_point(&x, &p, &self.env, &self.reg, self.mode)?;
        self.times.push(t);
        self.states.push(x);
        self.costates.push(p);
        self.controls.push(ControlSample::new(e.control.u, e.control.theta));
        self.switching_values.push(e.control.switching);
        self.hamiltonian_values.push(e.hamiltonian);
        self.delta_values.push(e.control.penalty);
        Ok(())
    }
}

/// Control, adjoint rates and Hamiltonian at one point of an extremal.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ExtremalPoint {
    pub control: OptimalControl,
    pub rates: Costate,
    pub hamiltonian: f64,
}

/// Evaluates the optimal feedback, the adjoint rates and the Hamiltonian of
/// the smoothed problem (see [`smoothing_cost`]).
///
/// Above ground this is the plain optimal control. Shooting iterates near a
/// solution graze the surface, and the penalty weight `exp(beta z)/(z + eps)`
/// blows up just below it, so for `z < 0` the vertical-landing law follows
/// [`subsurface_point`] instead.
pub(crate) fn extremal_point(
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<ExtremalPoint> {
    if mode == Mode::VerticalLanding && x.z < 0.0 {
        return subsurface_point(x, p, env, reg);
    }
    let control = optimal_control(x, p, env, reg, mode)?;
    let c = ControlSample::new(control.u, control.theta);
    Ok(ExtremalPoint {
        control,
        rates: costate_dynamics(x, p, c, env, reg, mode)?,
        hamiltonian: hamiltonian(x, p, c, env, reg, mode)? + smoothing_cost(control.switching, reg.delta),
    })
}

/// Vertical-landing feedback continued below ground.
///
/// With `v = (z + eps) exp(-beta z)` (the inverse penalty weight) the
/// stationary angle near zero solves `theta = v g(theta)`, where
/// `g = -(T/m)(p_vy cos theta - p_vz sin theta)`, and the penalty is
/// `v g^2 / 2`. Both stay smooth as `v` passes through zero, which keeps the
/// shooting residual differentiable at grazing touchdowns. Newton starts
/// from the surface minimizer, so the branch followed is the one the law
/// above ground selects. Deeper below ground, where the branch folds, the
/// surface law is used.
fn subsurface_point(
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
) -> Result<ExtremalPoint> {
    let acc = env.t_max / x.m;
    let decay = (-reg.beta * x.z).exp();
    let v = (x.z + reg.eps) * decay;
    let g = |theta: f64| -acc * (p.pvy * theta.cos() - p.pvz * theta.sin());
    // Start on the branch the surface law selects, so the two laws join
    // continuously even when a weak penalty leaves several stationary angles.
    let surface = LanderState { z: 0.0, ..*x };
    let mut theta = solve_steering(&surface, p, env, reg, STEERING_TOL)?.theta_star;
    let mut converged = false;
    for _ in 0..50 {
        let slope = 1.0 - v * acc * (p.pvy * theta.sin() + p.pvz * theta.cos());
        if slope.is_nan() || slope <= 0.0 {
            break;
        }
        let step = (theta - v * g(theta)) / slope;
        theta -= step;
        if step.abs() <= 4.0 * f64::EPSILON * theta.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    if !converged || !theta.is_finite() {
        // The branch folds once the dip is deep; use the surface law there.
        return extremal_point(&surface, p, env, reg, Mode::VerticalLanding);
    }
    let gv = g(theta);
    let penalty = 0.5 * v * gv * gv;
    let (s, c) = theta.sin_cos();
    let switching = acc * (p.pvy * s + p.pvz * c) - env.t_max * p.pm / (env.isp * env.g0) + 1.0 + penalty;
    let u = smoothed_thrust_ratio(switching, reg.delta);
    let sample = ControlSample::new(u, theta);
    let mut rates = costate_dynamics(x, p, sample, env, reg, Mode::Unconstrained)?;
    // -d/dz of theta^2 / (2 v) at fixed theta.
    let dv = decay * (1.0 - reg.beta * (x.z + reg.eps));
    rates.pz = 0.5 * u * gv * gv * dv;
    let hamiltonian =
        hamiltonian(x, p, sample, env, reg, Mode::Unconstrained)? + penalty * u + smoothing_cost(switching, reg.delta);
    Ok(ExtremalPoint {
        control: OptimalControl {
            theta,
            u,
            switching,
            penalty,
        },
        rates,
        hamiltonian,
    })
}

/// Right-hand side of the coupled state/costate system under the optimal
/// feedback of `mode`.
pub fn extremal_rhs(y: &[f64; 10], env: &VehicleEnv, reg: &RegularizationParams, mode: Mode) -> Result<[f64; 10]> {
    let x = LanderState::from_slice(&y[..5]);
    let p = Costate::from_slice(&y[5..]);
    let e = extremal_point(&x, &p, env, reg, mode)?;
    let dx = state_dynamics(&x, ControlSample::new(e.control.u, e.control.theta), env)?;
    let dp = e.rates;
    Ok([dx.y, dx.z, dx.vy, dx.vz, dx.m, dp.py, dp.pz, dp.pvy, dp.pvz, dp.pm])
}

fn pack(x0: &LanderState, p0: &Costate) -> [f64; 10] {
    [x0.y, x0.z, x0.vy, x0.vz, x0.m, p0.py, p0.pz, p0.pvy, p0.pvz, p0.pm]
}

fn build_trajectory(
    sol: OdeSolution<10>,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<Trajectory> {
    let mut traj = Trajectory::from_samples(*env, *reg, mode);
    for (t, y) in sol.times.iter().zip(&sol.values) {
        traj.push_sample(*t, LanderState::from_slice(&y[..5]), Costate::from_slice(&y[5..]))
            .map_err(|e| Error::Integration {
                time: *t,
                reason: e.to_string(),
            })?;
    }
    traj.dense = Some(sol);
    Ok(traj)
}

fn check_inputs(x0: &LanderState, p0: &Costate, t_final: f64) -> Result<()> {
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::domain(format!("final time must be > 0 (got {t_final})")));
    }
    if !(x0.is_finite() && x0.m > 0.0) {
        return Err(Error::domain(format!("invalid initial state {x0:?}")));
    }
    if !p0.is_finite() {
        return Err(Error::domain(format!("non-finite initial costate {p0:?}")));
    }
    Ok(())
}

/// Propagates the extremal from `(x0, p0)` over `[0, t_final]`.
pub fn propagate(
    x0: &LanderState,
    p0: &Costate,
    t_final: f64,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_inputs(x0, p0, t_final)?;
    let sol = integrate(
        |_, y| extremal_rhs(y, env, reg, mode),
        0.0,
        pack(x0, p0),
        t_final,
        cfg,
        None::<fn(f64, &[f64; 10]) -> f64>,
    )?;
    build_trajectory(sol, env, reg, mode)
}

/// Like [`propagate`], but stops early at the first touchdown (`z` reaching
/// zero from above) if it happens before `t_max`.
pub fn propagate_to_touchdown(
    x0: &LanderState,
    p0: &Costate,
    t_max: f64,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    check_inputs(x0, p0, t_max)?;
    let sol = integrate(
        |_, y| extremal_rhs(y, env, reg, mode),
        0.0,
        pack(x0, p0),
        t_max,
        cfg,
        Some(|_: f64, y: &[f64; 10]| y[1]),
    )?;
    build_trajectory(sol, env, reg, mode)
}
