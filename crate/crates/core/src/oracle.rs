//! Brute-force verifiers.
//!
//! None of these call the code they check: the grid scan evaluates the angle
//! Hamiltonian from scratch, and the costate check differentiates
//! [`hamiltonian`] numerically instead of using the adjoint equations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    costate_dynamics, hamiltonian, ControlSample, Costate, LanderState, Mode, RegularizationParams, VehicleEnv,
};
use crate::ode::Trajectory;

/// Default relative tolerance of the finite-difference costate check.
pub const FD_TOL: f64 = 1e-6;
/// Rates below this magnitude are compared in absolute terms by the
/// finite-difference check: rounding in `H` swamps their relative error.
pub const FD_FLOOR: f64 = 1e-6;
/// Default bound on `|H|` along a converged extremal.
pub const DRIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub max_error: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl OracleReport {
    pub fn new(name: impl Into<String>, max_error: f64, samples: usize, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            samples,
            tolerance,
            passed: max_error <= tolerance,
        }
    }
}

fn grid_argmin(n_points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let step = grid_spacing(n_points);
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..n_points.max(2) {
        let theta = -PI + i as f64 * step;
        let h = f(theta);
        if h < best.0 {
            best = (h, theta);
        }
    }
    best.1
}

/// Argmin of the angle Hamiltonian over `n_points` evenly spaced angles
/// covering `[-pi, pi]`, endpoints included.
pub fn grid_scan_steering(
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    n_points: usize,
) -> f64 {
    let thrust_acc = env.t_max / x.m;
    let weight = (reg.beta * x.z).exp() / (x.z + reg.eps);
    grid_argmin(n_points, |theta| {
        thrust_acc * (p.pvy * theta.sin() + p.pvz * theta.cos()) + 0.5 * weight * theta * theta
    })
}

/// Spacing of the grid used by [`grid_scan_steering`].
pub fn grid_spacing(n_points: usize) -> f64 {
    2.0 * PI / (n_points.max(2) - 1) as f64
}

fn fd_steps(x: &LanderState, h: f64) -> [f64; 5] {
    let a = x.to_array();
    let mut steps: [f64; 5] = std::array::from_fn(|i| h * a[i].abs().max(1.0));
    // Stay well inside the region where the penalty is smooth in z.
    steps[1] = steps[1].min(2e-4 * x.z.abs().max(f64::MIN_POSITIVE));
    steps
}

/// Central-difference `-dH/dx` with the control held fixed.
pub fn fd_costate_rates(
    x: &LanderState,
    p: &Costate,
    c: ControlSample,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
    h: f64,
) -> Result<[f64; 5]> {
    let base = x.to_array();
    let steps = fd_steps(x, h);
    let mut out = [0.0; 5];
    for i in 0..5 {
        let mut plus = base;
        let mut minus = base;
        plus[i] += steps[i];
        minus[i] -= steps[i];
        let hp = hamiltonian(&LanderState::from_slice(&plus), p, c, env, reg, mode)?;
        let hm = hamiltonian(&LanderState::from_slice(&minus), p, c, env, reg, mode)?;
        out[i] = -(hp - hm) / (2.0 * steps[i]);
    }
    Ok(out)
}

/// Largest disagreement between the adjoint equations and finite
/// differences of the Hamiltonian, relative to `max(|rate|, FD_FLOOR)`.
pub fn fd_costate_check(
    x: &LanderState,
    p: &Costate,
    c: ControlSample,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
    h: f64,
) -> Result<OracleReport> {
    let fd = fd_costate_rates(x, p, c, env, reg, mode, h)?;
    let analytic = costate_dynamics(x, p, c, env, reg, mode)?.to_array();
    let max_error = analytic
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR))
        .fold(0.0, worst);
    Ok(OracleReport::new(format!("fd-costate-{mode}"), max_error, 5, FD_TOL))
}

/// Maximum that treats NaN as the worst possible error.
fn worst(acc: f64, e: f64) -> f64 {
    if e.is_nan() {
        f64::INFINITY
    } else {
        acc.max(e)
    }
}

/// Componentwise relative error, zero where both sides vanish and infinite
/// where either side is NaN.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d == 0.0 {
                0.0
            } else {
                d / a.abs().max(b.abs())
            }
        })
        .fold(0.0, worst)
}

/// Largest `|H(t)|` over the stored samples.
pub fn hamiltonian_drift_check(traj: &Trajectory) -> OracleReport {
    hamiltonian_drift_check_with(traj, DRIFT_TOL)
}

pub fn hamiltonian_drift_check_with(traj: &Trajectory, tolerance: f64) -> OracleReport {
    let max_error = traj
        .hamiltonian_values
        .iter()
        .map(|h| if h.is_finite() { h.abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    OracleReport::new("hamiltonian-drift", max_error, traj.hamiltonian_values.len(), tolerance)
}

/// Compares stored steering angles with the grid-scan argmin at every sample
/// of a trajectory.
pub fn steering_grid_check(traj: &Trajectory, n_points: usize) -> OracleReport {
    let spacing = grid_spacing(n_points);
    let mut max_error: f64 = 0.0;
    let mut samples = 0;
    for ((x, p), c) in traj.states.iter().zip(&traj.costates).zip(&traj.controls) {
        let x = LanderState { z: x.z.max(0.0), ..*x };
        let reference = match traj.mode {
            Mode::VerticalLanding => grid_scan_steering(&x, p, &traj.env, &traj.reg, n_points),
            Mode::Unconstrained => grid_argmin(n_points, |theta| p.pvy * theta.sin() + p.pvz * theta.cos()),
        };
        max_error = worst(max_error, (reference - c.theta).abs());
        samples += 1;
    }
    OracleReport::new("steering-grid", max_error, samples, spacing + 1e-12)
}

/// Finite-difference costate check at every stored sample.
pub fn trajectory_costate_check(traj: &Trajectory, h: f64) -> Result<OracleReport> {
    let mut max_error: f64 = 0.0;
    let mut samples = 0;
    for ((x, p), c) in traj.states.iter().zip(&traj.costates).zip(&traj.controls) {
        // The check needs a two-sided neighbourhood where the penalty is defined.
        if traj.mode == Mode::VerticalLanding && x.z <= 1e-3 {
            continue;
        }
        let r = fd_costate_check(x, p, *c, &traj.env, &traj.reg, traj.mode, h)?;
        max_error = max_error.max(r.max_error);
        samples += 1;
    }
    Ok(OracleReport::new(
        format!("fd-costate-{}", traj.mode),
        max_error,
        samples,
        FD_TOL,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_scan_vertical_adjoint() {
        let x = LanderState::new(0.0, 40.0, 0.0, 0.0, 9300.0);
        let p = Costate::new(0.0, 0.0, 0.0, -0.2, 0.0);
        let reg = RegularizationParams::default();
        let n = 1001;
        let th = grid_scan_steering(&x, &p, &VehicleEnv::default(), &reg, n);
        assert!(th.abs() <= grid_spacing(n));
    }

    #[test]
    fn nan_is_never_close() {
        assert_eq!(relative_error(&[1.0, f64::NAN], &[1.0, 2.0]), f64::INFINITY);
        assert_eq!(relative_error(&[0.0, 2.0], &[0.0, 1.0]), 0.5);
    }

    #[test]
    fn grid_refinement_halves_spacing() {
        assert!((grid_spacing(2001) * 2.0 - grid_spacing(1001)).abs() < 1e-15);
    }

    #[test]
    fn fd_matches_zero_pz_rate_at_zero_angle() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(3.0, 2.0, 1.0, -1.0, 9200.0);
        let p = Costate::new(0.01, 0.02, 0.1, -0.2, 0.001);
        let c = ControlSample::new(0.9, 0.0);
        let fd = fd_costate_rates(&x, &p, c, &env, &reg, Mode::VerticalLanding, 1e-6).unwrap();
        assert!(fd[1].abs() <= 1e-8);
    }

    #[test]
    fn fd_error_is_second_order() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(3.0, 4.0, 1.0, -1.0, 9200.0);
        let p = Costate::new(0.01, 0.02, 0.1, -0.2, 0.001);
        let c = ControlSample::new(0.9, 0.3);
        let analytic = costate_dynamics(&x, &p, c, &env, &reg, Mode::VerticalLanding)
            .unwrap()
            .pz;
        // Large steps so truncation dominates rounding.
        let err = |h: f64| {
            let fd = fd_costate_rates(&x, &p, c, &env, &reg, Mode::VerticalLanding, h).unwrap();
            (fd[1] - analytic).abs()
        };
        // The z step is capped at 2e-4 z, so vary below the cap.
        let (e1, e2) = (err(1e-4), err(5e-5));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }
}
