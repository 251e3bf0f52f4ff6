//! Switching functions and the smoothed thrust law.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{regularization_term, Costate, LanderState, Mode, RegularizationParams, VehicleEnv};
use crate::ode::{extremal_point, Trajectory};
use crate::steering::{solve_steering, steering_unconstrained, STEERING_TOL};

/// Direction of a thrust switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchDirection {
    OffToOn,
    OnToOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchRecord {
    /// Time of the switching-function zero [s].
    pub time: f64,
    pub direction: SwitchDirection,
}

/// Switching function of the selected mode. Negative means full thrust.
///
/// In [`Mode::Unconstrained`] the steering angle is implied by the costate
/// and `theta` is ignored.
pub fn switching_function(
    x: &LanderState,
    p: &Costate,
    theta: f64,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<f64> {
    let accel = env.t_max / x.m;
    let mass_term = env.t_max * p.pm / (env.isp * env.g0);
    match mode {
        Mode::Unconstrained => Ok(1.0 - mass_term - accel * p.pv_norm()),
        Mode::VerticalLanding => {
            let (s, c) = theta.sin_cos();
            let penalty = regularization_term(x.z, theta, reg)?;
            Ok(accel * (p.pvy * s + p.pvz * c) - mass_term + 1.0 + penalty)
        }
    }
}

/// Smooth approximation `(1 - s / sqrt(delta + s^2)) / 2` of the bang-bang law.
pub fn smoothed_thrust_ratio(s: f64, delta: f64) -> f64 {
    let r = (delta + s * s).sqrt();
    // Each branch avoids the cancellation in 1 - |s|/r.
    let small = 0.5 * delta / (r * (r + s.abs()));
    if s > 0.0 {
        small
    } else {
        1.0 - small
    }
}

/// Running cost `-sqrt(delta u (1 - u))` at the smoothed thrust ratio for
/// switching value `s`, written as `-delta / (2 sqrt(delta + s^2))`.
///
/// Adding it to the Hamiltonian makes [`smoothed_thrust_ratio`] the exact
/// minimizer over `u`, so the sum is the first integral of the smoothed
/// extremal. Without it `H` dips by up to `sqrt(delta) / 2` across a switch.
pub fn smoothing_cost(s: f64, delta: f64) -> f64 {
    -0.5 * delta / (delta + s * s).sqrt()
}

/// Everything the optimal feedback produces at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalControl {
    pub theta: f64,
    pub u: f64,
    /// Switching function value.
    pub switching: f64,
    /// Regularization term (zero in unconstrained mode).
    pub penalty: f64,
}

/// Steering from the mode's law, thrust ratio from the smoothed switching law.
pub fn optimal_control(
    x: &LanderState,
    p: &Costate,
    env: &VehicleEnv,
    reg: &RegularizationParams,
    mode: Mode,
) -> Result<OptimalControl> {
    let theta = match mode {
        Mode::Unconstrained => steering_unconstrained(p.pvy, p.pvz)?.theta,
        Mode::VerticalLanding => solve_steering(x, p, env, reg, STEERING_TOL)?.theta_star,
    };
    let switching = switching_function(x, p, theta, env, reg, mode)?;
    let penalty = match mode {
        Mode::Unconstrained => 0.0,
        Mode::VerticalLanding => regularization_term(x.z, theta, reg)?,
    };
    Ok(OptimalControl {
        theta,
        u: smoothed_thrust_ratio(switching, reg.delta),
        switching,
        penalty,
    })
}

/// Time resolution of [`detect_switches`] [s].
pub const SWITCH_TIME_TOL: f64 = 1e-6;

/// Sign changes of the stored switching function, refined on the dense
/// interpolant when the trajectory carries one.
pub fn detect_switches(traj: &Trajectory) -> Vec<SwitchRecord> {
    let s = &traj.switching_values;
    let t = &traj.times;
    let mut out = Vec::new();
    for i in 1..s.len().min(t.len()) {
        let (a, b) = (s[i - 1], s[i]);
        if a == 0.0 || (a < 0.0) == (b < 0.0) {
            continue;
        }
        let direction = if a > 0.0 {
            SwitchDirection::OffToOn
        } else {
            SwitchDirection::OnToOff
        };
        let time = refine_switch(traj, t[i - 1], t[i], a, b);
        out.push(SwitchRecord { time, direction });
    }
    out
}

fn refine_switch(traj: &Trajectory, mut lo: f64, mut hi: f64, s_lo: f64, s_hi: f64) -> f64 {
    let eval = |t: f64| -> Option<f64> {
        let (x, p) = traj.interpolate(t)?;
        let e = extremal_point(&x, &p, &traj.env, &traj.reg, traj.mode).ok()?;
        Some(e.control.switching)
    };
    if eval(lo).is_none() {
        // No dense output: linear interpolation between samples.
        return lo + (hi - lo) * s_lo / (s_lo - s_hi);
    }
    let lo_negative = s_lo < 0.0;
    while hi - lo > SWITCH_TIME_TOL {
        let mid = 0.5 * (lo + hi);
        match eval(mid) {
            Some(v) if (v < 0.0) == lo_negative => lo = mid,
            Some(_) => hi = mid,
            None => break,
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smoothed_reference_values() {
        assert_eq!(smoothed_thrust_ratio(0.0, 1e-10), 0.5);
        assert!((smoothed_thrust_ratio(-1.0, 1e-10) - (1.0 - 2.5e-11)).abs() < 1e-16);
        let off = smoothed_thrust_ratio(1.0, 1e-10);
        assert!((off - 2.5e-11).abs() < 1e-20, "{off:e}");
    }

    #[test]
    fn smoothed_converges_to_bang_bang() {
        for s in [-0.5, -0.1, 0.1, 0.5] {
            let target = if s < 0.0 { 1.0 } else { 0.0 };
            let errs: Vec<f64> = [1e-2, 1e-6, 1e-10]
                .iter()
                .map(|d| (smoothed_thrust_ratio(s, *d) - target).abs())
                .collect();
            assert!(errs[0] > errs[1] && errs[1] > errs[2]);
            assert!(errs[2] < 1e-8);
        }
    }

    #[test]
    fn switching_with_zero_costates() {
        let env = VehicleEnv::default();
        let reg = RegularizationParams::default();
        let x = LanderState::new(0.0, 100.0, 0.0, 0.0, 9444.0);
        let p = Costate::default();
        for mode in [Mode::Unconstrained, Mode::VerticalLanding] {
            assert_eq!(switching_function(&x, &p, 0.0, &env, &reg, mode).unwrap(), 1.0);
        }
    }

    #[test]
    fn smoothing_cost_makes_law_a_minimizer() {
        let delta = 1e-4;
        for s in [-0.3, -0.01, 0.0, 0.02, 0.5] {
            let total = |u: f64| s * u - (delta * u * (1.0 - u)).sqrt();
            let u = smoothed_thrust_ratio(s, delta);
            assert!((total(u) - s * u - smoothing_cost(s, delta)).abs() < 1e-15);
            for du in [-1e-3, 1e-3] {
                let w = (u + du).clamp(0.0, 1.0);
                assert!(total(w) >= total(u));
            }
        }
    }

    proptest! {
        #[test]
        fn smoothed_is_bounded_monotone_symmetric(s in -10.0f64..10.0, ds in 0.0f64..1.0, exp in -10.0f64..-1.0) {
            let delta = 10f64.powf(exp);
            let u = smoothed_thrust_ratio(s, delta);
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!(smoothed_thrust_ratio(s + ds, delta) <= u);
            prop_assert!((u + smoothed_thrust_ratio(-s, delta) - 1.0).abs() <= 2.0 * f64::EPSILON);
        }

        #[test]
        fn switching_variants_agree_without_penalty(
            z in 1.0f64..1000.0, m in 8000.0f64..9500.0,
            pvy in -1.0f64..1.0, pvz in -1.0f64..1.0, pm in -0.01f64..0.01,
        ) {
            let env = VehicleEnv::default();
            // beta so large and negative that exp(beta z) underflows: Delta = 0.
            let reg = RegularizationParams { beta: -1e4, ..Default::default() };
            let x = LanderState::new(0.0, z, 0.0, 0.0, m);
            let p = Costate::new(0.0, 0.0, pvy, pvz, pm);
            let theta = steering_unconstrained(pvy, pvz).unwrap().theta;
            let su = switching_function(&x, &p, theta, &env, &reg, Mode::Unconstrained).unwrap();
            let sv = switching_function(&x, &p, theta, &env, &reg, Mode::VerticalLanding).unwrap();
            prop_assert!((su - sv).abs() <= 1e-12 * su.abs().max(1.0));
        }
    }
}
